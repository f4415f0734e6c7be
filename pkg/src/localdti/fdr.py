"""False discovery rate decisions on p-value volumes.

Two modes are supported:

* ``fdr``   - Storey's procedure on the raw p-values.
* ``fdr_l`` - the same step-up rule applied to locally median-smoothed
  p-values, whose null CDF is taken as the median of 7 independent uniforms,
  i.e. Beta(4, 4).
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .volume import DecisionMask, ScalarVolume

CROSS_7 = ((0, 0, 0), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
MODES = ("fdr", "fdr_l")


@dataclass(frozen=True)
class FdrConfig:
    level: float = 0.01
    lam: float = 0.2
    mode: str = "fdr"
    offsets: tuple = CROSS_7
    min_members: int = 4

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        object.__setattr__(self, "offsets", tuple(tuple(int(c) for c in o) for o in self.offsets))

    def to_dict(self):
        return {"level": self.level, "lambda": self.lam, "mode": self.mode, "offsets": [list(o) for o in self.offsets]}


def uniform_cdf(t):
    return np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)


def median_null_cdf(k):
    """CDF of the median of ``k`` (odd) independent U(0, 1) variables."""
    if k % 2 == 0:
        raise ValueError("median null CDF needs an odd neighbourhood size")
    half = (k + 1) // 2
    return stats.beta(half, half).cdf


def _shifted(arr, offset, fill):
    """``out[v] = arr[v + offset]``, ``fill`` where ``v + offset`` leaves the grid."""
    out = np.full_like(arr, fill)
    src = []
    dst = []
    for o, n in zip(offset, arr.shape):
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def smooth_p(p_vol, cfg=FdrConfig(mode="fdr_l")):
    """Median of p over the local neighbourhood restricted to the tested voxels.

    Voxels with fewer than ``cfg.min_members`` available members keep their
    raw p-value.
    """
    p = np.where(p_vol.mask, p_vol.data, np.nan)
    stack = np.stack([_shifted(p, o, np.nan) for o in cfg.offsets])
    count = np.sum(np.isfinite(stack), axis=0)
    out = np.full(p.shape, np.nan)
    tested = p_vol.mask & np.isfinite(p)
    enough = tested & (count >= cfg.min_members)
    out[enough] = np.nanmedian(stack[:, enough], axis=0)
    out[tested & ~enough] = p[tested & ~enough]
    return ScalarVolume(p_vol.shape, out, tested, {"smoothed": True, "offsets": [list(o) for o in cfg.offsets]})


def storey_pi0(p_values, lam=0.2, null_cdf=uniform_cdf):
    """Storey's estimate of the null proportion, capped at 1."""
    p = np.asarray(p_values, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("no p-values")
    tail = 1.0 - float(null_cdf(lam))
    return float(min(1.0, np.sum(p > lam) / (p.size * tail)))


def fdr_threshold(stat, level=0.01, pi0=1.0, null_cdf=uniform_cdf):
    """Largest observed ``t`` with ``pi0 * N * F0(t) / #{stat <= t} <= level``.

    Returns ``(threshold, reject)``; the threshold is ``-inf`` and nothing is
    rejected when no observed value qualifies.
    """
    stat = np.asarray(stat, dtype=np.float64)
    flat = stat.ravel()
    n = flat.size
    if n == 0:
        return -np.inf, np.zeros(stat.shape, dtype=bool)
    srt = np.sort(flat)
    # number of values <= each sorted value, ties included
    count = np.searchsorted(srt, srt, side="right")
    fdr_hat = pi0 * n * null_cdf(srt) / np.maximum(count, 1)
    ok = np.flatnonzero(fdr_hat <= level)
    if ok.size == 0:
        return -np.inf, np.zeros(stat.shape, dtype=bool)
    t = srt[ok[-1]]
    return float(t), stat <= t


def benjamini_hochberg(p_values, level):
    """Plain step-up BH; used as an independent reference."""
    p = np.asarray(p_values, dtype=np.float64).ravel()
    m = p.size
    order = np.argsort(p, kind="stable")
    passed = np.flatnonzero(p[order] <= level * np.arange(1, m + 1) / m)
    reject = np.zeros(m, dtype=bool)
    if passed.size:
        reject[order[: passed[-1] + 1]] = True
    return reject


def decide(p_vol, cfg=FdrConfig()):
    """Rejection mask for a p-value volume (missing p never rejected)."""
    tested = p_vol.mask & np.isfinite(p_vol.data)
    if not tested.any():
        raise ValueError("no testable voxels")
    if cfg.mode == "fdr":
        stat_vol = p_vol
        null_cdf = uniform_cdf
    else:
        stat_vol = smooth_p(p_vol, cfg)
        null_cdf = median_null_cdf(len(cfg.offsets))
    values = stat_vol.data[tested]
    pi0 = storey_pi0(values, cfg.lam, null_cdf)
    t, rej = fdr_threshold(values, cfg.level, pi0, null_cdf)
    reject = np.zeros(p_vol.shape.dims, dtype=bool)
    reject[tested] = rej
    meta = {"mode": cfg.mode, "level": cfg.level, "lambda": cfg.lam}
    return DecisionMask(p_vol.shape, reject, tested, t, pi0, meta)
