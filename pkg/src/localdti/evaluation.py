"""Comparison of decisions and statistics against phantom ground truth."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, stats

from .volume import ScalarVolume

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class ConfusionSummary:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def sensitivity(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else float("nan")

    @property
    def specificity(self):
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else float("nan")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self):
        return {
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
        }


def _check_shapes(a, b):
    if a.shape.dims != b.shape.dims:
        raise ValueError(f"shape mismatch: {a.shape.dims} vs {b.shape.dims}")


def confusion(decision, truth, domain=None):
    """Counts over ``decision.domain`` (or ``domain``) inside the truth mask."""
    _check_shapes(decision, truth)
    dom = decision.domain if domain is None else domain
    dom = dom & truth.mask
    pos = truth.anisotropic & dom
    neg = truth.isotropic & dom
    rej = decision.reject
    return ConfusionSummary(
        tp=int(np.sum(rej & pos)),
        fp=int(np.sum(rej & neg)),
        tn=int(np.sum(~rej & neg)),
        fn=int(np.sum(~rej & pos)),
    )


@dataclass(eq=False)
class RocCurve:
    fpr: np.ndarray  # 1 - specificity
    tpr: np.ndarray  # sensitivity
    thresholds: np.ndarray
    auc: float

    @property
    def points(self):
        return np.column_stack([self.fpr, self.tpr])


def roc_from_scores(scores, positive, direction="greater"):
    """Exact step ROC over every distinct score, with +-inf endpoints.

    ``direction="greater"`` classifies large scores as positive; ``"less"``
    classifies small scores (p-values) as positive.
    """
    if direction not in ("greater", "less"):
        raise ValueError("direction must be 'greater' or 'less'")
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(positive, dtype=bool).ravel()
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ground truth must contain both classes")
    key = s if direction == "greater" else -s
    order = np.argsort(-key, kind="stable")
    key = key[order]
    y = y[order]
    last = np.r_[np.flatnonzero(np.diff(key) != 0), key.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thr = key[last] if direction == "greater" else -key[last]
    thresholds = np.r_[np.inf if direction == "greater" else -np.inf, thr]
    if fpr[-1] < 1.0 or tpr[-1] < 1.0:
        fpr = np.r_[fpr, 1.0]
        tpr = np.r_[tpr, 1.0]
        thresholds = np.r_[thresholds, -np.inf if direction == "greater" else np.inf]
    auc = float(_trapezoid(tpr, fpr))
    return RocCurve(fpr, tpr, thresholds, auc)


def roc(statistic, truth, direction="greater", domain=None):
    """ROC of a statistic volume against anisotropic/isotropic truth labels."""
    data = statistic.data if isinstance(statistic, ScalarVolume) else np.asarray(statistic)
    dom = truth.mask & np.isfinite(data)
    if isinstance(statistic, ScalarVolume):
        dom &= statistic.mask
    if domain is not None:
        dom &= domain
    return roc_from_scores(data[dom], truth.anisotropic[dom], direction)


@dataclass(eq=False)
class QQTable:
    percent: np.ndarray
    empirical: np.ndarray
    theoretical: np.ndarray

    @property
    def relative_deviation(self):
        return np.abs(self.empirical - self.theoretical) / self.theoretical

    @property
    def max_relative_deviation(self):
        return float(self.relative_deviation.max())

    def to_dict(self):
        return {
            "percent": self.percent.tolist(),
            "empirical": self.empirical.tolist(),
            "theoretical": self.theoretical.tolist(),
            "max_relative_deviation": self.max_relative_deviation,
        }


def qq_chi2(chik, isotropic, df=2, min_count=100):
    """1st..99th percentiles of ``chik`` over ``isotropic`` against chi-square(df)."""
    data = chik.data if isinstance(chik, ScalarVolume) else np.asarray(chik)
    sel = np.asarray(isotropic, dtype=bool) & np.isfinite(data)
    values = data[sel]
    if values.size < min_count:
        raise ValueError(f"only {values.size} isotropic voxels; need {min_count}")
    pct = np.arange(1, 100, dtype=np.float64)
    return QQTable(pct, np.percentile(values, pct), stats.chi2.ppf(pct / 100.0, df))


def ks_distance(values, df=2):
    """Kolmogorov-Smirnov distance between ``values`` and chi-square(df)."""
    values = np.asarray(values, dtype=np.float64)
    return float(stats.kstest(values[np.isfinite(values)], stats.chi2(df).cdf).statistic)


def isolated_counts(reject):
    """Voxels rejected with exactly 1 or 2 rejections in their 3x3x3 neighbourhood.

    Returns ``(S1, S2)``; the neighbourhood includes the voxel itself.
    """
    rej = np.asarray(getattr(reject, "reject", reject), dtype=bool)
    counts = ndimage.convolve(rej.astype(np.int32), np.ones((3, 3, 3), dtype=np.int32), mode="constant", cval=0)
    return int(np.sum(rej & (counts == 1))), int(np.sum(rej & (counts == 2)))
