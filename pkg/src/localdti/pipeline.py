"""End-to-end experiment driver: simulate, fit, test, decide, evaluate.

A run is described by a JSON config.  Every (snr, seed) pair gets its own
output directory holding the stage volumes and a ``report.json``; the
top-level ``manifest.json`` collects the per-run summaries.
"""

import copy
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .acquisition import default_scheme, load_scheme
from .eigen import scalar_maps
from .evaluation import confusion, isolated_counts, ks_distance, qq_chi2, roc
from .fdr import CROSS_7, FdrConfig, decide, median_null_cdf, smooth_p
from .localtest import TestConfig, test_volume
from .neighborhood import NeighborhoodConfig
from .phantom import default_phantom, isotropic_phantom, simulate
from .tensor import fit_volume
from .volume import DEFAULT_VOXEL_SIZE, DecisionMask, GridShape, write_volume

log = logging.getLogger(__name__)

PHANTOM_KINDS = ("default", "isotropic")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    shape: tuple = (256, 256, 30)
    voxel_size: tuple = DEFAULT_VOXEL_SIZE
    phantom: str = "default"
    geometry: dict = None
    scheme_path: str = None
    b: float = 1000.0
    snr: tuple = (10.0,)
    seeds: tuple = (1,)
    neighborhood: NeighborhoodConfig = field(default_factory=NeighborhoodConfig)
    alpha: float = 0.01
    contrast: tuple = ((1.0, -1.0, 0.0), (0.0, 1.0, -1.0))
    min_testable: int = 1000
    fdr_level: float = 0.01
    fdr_lambda: float = 0.2
    fdr_offsets: tuple = CROSS_7
    fa_threshold: float = None  # None: calibrate to the FDR_L sensitivity
    output: str = "run"
    write_volumes: bool = True

    def __post_init__(self):
        if self.phantom not in PHANTOM_KINDS:
            raise ValueError(f"phantom must be one of {PHANTOM_KINDS}")
        self.shape = tuple(int(s) for s in self.shape)
        self.snr = tuple(float(s) for s in np.atleast_1d(self.snr))
        self.seeds = tuple(int(s) for s in np.atleast_1d(self.seeds))
        if not self.snr or not self.seeds:
            raise ValueError("need at least one snr and one seed")
        if isinstance(self.neighborhood, dict):
            self.neighborhood = NeighborhoodConfig(**self.neighborhood)

    @property
    def grid(self):
        return GridShape(*self.shape, voxel_size=tuple(self.voxel_size))

    @property
    def test_config(self):
        return TestConfig(
            neighborhood=self.neighborhood,
            alpha=self.alpha,
            contrast=tuple(tuple(r) for r in self.contrast),
            min_testable=self.min_testable,
        )

    def fdr_config(self, mode):
        return FdrConfig(level=self.fdr_level, lam=self.fdr_lambda, mode=mode, offsets=self.fdr_offsets)

    def scheme(self):
        if self.scheme_path is None:
            return default_scheme(self.b)
        return load_scheme(self.scheme_path)

    def phantom_spec(self, snr):
        make = default_phantom if self.phantom == "default" else isotropic_phantom
        return make(self.grid, snr=snr, geometry=copy.deepcopy(self.geometry))

    def to_dict(self):
        return {
            "shape": list(self.shape),
            "voxel_size": list(self.voxel_size),
            "phantom": self.phantom,
            "geometry": self.geometry,
            "scheme_path": self.scheme_path,
            "b": self.b,
            "snr": list(self.snr),
            "seeds": list(self.seeds),
            "neighborhood": self.neighborhood.to_dict(),
            "alpha": self.alpha,
            "contrast": [list(r) for r in self.contrast],
            "min_testable": self.min_testable,
            "fdr_level": self.fdr_level,
            "fdr_lambda": self.fdr_lambda,
            "fdr_offsets": [list(o) for o in self.fdr_offsets],
            "fa_threshold": self.fa_threshold,
            "output": self.output,
            "write_volumes": self.write_volumes,
        }

    def digest(self):
        """SHA-256 of the config, ignoring where outputs go."""
        d = self.to_dict()
        d.pop("output")
        d.pop("write_volumes")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def load_config(path):
    """Read a :class:`RunConfig` from JSON; relative paths resolve against the file."""
    path = Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    if raw.get("scheme_path"):
        sp = Path(raw["scheme_path"])
        sp = sp if sp.is_absolute() else path.parent / sp
        if not sp.is_file():
            raise FileNotFoundError(f"{path}: scheme file {sp} not found")
        raw["scheme_path"] = str(sp)
    if "output" in raw and not Path(raw["output"]).is_absolute():
        raw["output"] = str(path.parent / raw["output"])
    return RunConfig(**raw)


def baseline_fa_threshold(fa_vol, threshold=None, truth=None, target_sensitivity=None, domain=None):
    """Reject where FA exceeds ``threshold``.

    With ``threshold=None`` the cutoff is calibrated so that the sensitivity
    against ``truth`` is the smallest achievable value not below
    ``target_sensitivity``.
    """
    dom = fa_vol.mask & np.isfinite(fa_vol.data)
    if domain is not None:
        dom &= domain
    if threshold is None:
        if truth is None or target_sensitivity is None:
            raise ValueError("calibration needs truth and a target sensitivity")
        if not 0 < target_sensitivity <= 1:
            raise ValueError("target sensitivity must lie in (0, 1]")
        dom &= truth.mask
        pos = np.sort(fa_vol.data[dom & truth.anisotropic])[::-1]
        if pos.size == 0:
            raise ValueError("truth has no anisotropic voxels in the domain")
        k = int(np.ceil(target_sensitivity * pos.size - 1e-9))
        kth = pos[max(k, 1) - 1]
        below = fa_vol.data[dom][fa_vol.data[dom] < kth]
        threshold = float(below.max()) if below.size else -np.inf
    reject = dom & (fa_vol.data > threshold)
    return DecisionMask(fa_vol.shape, reject, dom, float(threshold), float("nan"), {"mode": "fa", "threshold": threshold})


def fdr_l_null_check(p_tilde, isotropic, k=len(CROSS_7), cutoffs=(0.01, 0.05, 0.1, 0.2)):
    """Empirical CDF of smoothed p over true-null voxels against the Beta median null."""
    vals = p_tilde.data[isotropic & p_tilde.mask]
    cdf = median_null_cdf(k)
    return {
        "n": int(vals.size),
        "cutoffs": list(cutoffs),
        "empirical": [float(np.mean(vals <= t)) for t in cutoffs],
        "assumed": [float(cdf(t)) for t in cutoffs],
        "ks": float(stats.kstest(vals, cdf).statistic) if vals.size else float("nan"),
    }


def _summary(decision, truth):
    s1, s2 = isolated_counts(decision.reject)
    out = confusion(decision, truth).to_dict()
    out.update({"threshold": decision.threshold, "n_rejected": decision.n_rejected, "S1": s1, "S2": s2})
    if np.isfinite(decision.pi0_hat):
        out["pi0_hat"] = decision.pi0_hat
    return out


class _Stages:
    """Times stages and tags failures with the stage name."""

    def __init__(self):
        self.timings = {}

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.timings[name] = round(time.perf_counter() - t0, 3)
        return result


def run_single(cfg, snr, seed, out_dir=None):
    """One (snr, seed) experiment; returns ``(report, timings)``."""
    st = _Stages()
    spec = st.run("phantom", cfg.phantom_spec, snr)
    scheme = st.run("scheme", cfg.scheme)
    dwi = st.run("simulate", simulate, spec, scheme, seed)
    tensors = st.run("fit", fit_volume, dwi)
    maps = st.run("scalars", scalar_maps, tensors)
    field_ = st.run("test", test_volume, tensors, maps.lambdas, cfg.test_config)
    dec = {m: st.run(m, decide, field_.p, cfg.fdr_config(m)) for m in ("fdr", "fdr_l")}
    truth = spec.labels
    p_tilde = smooth_p(field_.p, cfg.fdr_config("fdr_l"))

    def evaluate():
        rep = {
            "snr": snr,
            "seed": seed,
            "counts": field_.counts,
            "labels": {str(k): int(v) for k, v in enumerate(np.bincount(truth.label.ravel(), minlength=5))},
            "null_set": field_.state.to_dict(),
            "fdr_l_null_check": fdr_l_null_check(p_tilde, truth.isotropic, len(cfg.fdr_offsets)),
        }
        iso = truth.isotropic & field_.testable
        if iso.sum() >= 100:
            qq = qq_chi2(field_.chik, iso, df=len(cfg.contrast))
            rep["qq"] = qq.to_dict()
            rep["ks_chi2"] = ks_distance(field_.chik.data[iso], len(cfg.contrast))
        dom = field_.testable
        rep["decisions"] = {m: _summary(d, truth) for m, d in dec.items()}
        has_both = truth.anisotropic[dom].any() and truth.isotropic[dom].any()
        if has_both:
            target = rep["decisions"]["fdr_l"]["sensitivity"]
            if cfg.fa_threshold is not None:
                dec["fa"] = baseline_fa_threshold(maps.fa, cfg.fa_threshold, domain=dom)
            elif target > 0:
                dec["fa"] = baseline_fa_threshold(maps.fa, None, truth, target, dom)
            if "fa" in dec:
                rep["decisions"]["fa"] = _summary(dec["fa"], truth)
            rep["auc"] = {
                "p_tilde": roc(p_tilde, truth, "less", dom).auc,
                "p": roc(field_.p, truth, "less", dom).auc,
                "fa": roc(maps.fa, truth, "greater", dom).auc,
            }
        else:
            fp = {m: dec[m].n_rejected for m in ("fdr", "fdr_l")}
            rep["pure_null_rejections"] = fp
        return rep

    report = st.run("evaluate", evaluate)

    if out_dir is not None:

        def write():
            out_dir.mkdir(parents=True, exist_ok=True)
            if cfg.write_volumes:
                files = {
                    "dwi": dwi,
                    "labels": truth,
                    "tensor": tensors,
                    "fa": maps.fa,
                    "ra": maps.ra,
                    "md": maps.md,
                    "chik": field_.chik,
                    "p": field_.p,
                    "p_tilde": p_tilde,
                }
                files.update({f"decision_{m}": d for m, d in dec.items()})
                for name, vol in files.items():
                    write_volume(vol, out_dir / f"{name}.vol")
            (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))

        st.run("write", write)
    return report, st.timings


def run_pipeline(cfg, out=None):
    """Run every (snr, seed) pair of ``cfg`` and write ``manifest.json``.

    Returns the manifest dict.  Timings live under ``"timings"``; everything
    else is a deterministic function of the config.
    """
    out = Path(cfg.output if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "software": {"name": "localdti", "version": __version__, "numpy": np.__version__},
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "runs": [],
        "timings": {},
        "warnings": [],
    }
    for snr in cfg.snr:
        for seed in cfg.seeds:
            tag = f"snr{snr:g}_seed{seed}"
            log.info("run %s", tag)
            report, timings = run_single(cfg, snr, seed, out / tag)
            report["directory"] = tag
            manifest["runs"].append(report)
            manifest["timings"][tag] = timings
            manifest["warnings"].extend(f"{tag}: {w}" for w in report["null_set"]["warnings"])
    manifest["config"]["output"] = str(out)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def deterministic_view(manifest):
    """The manifest without wall-clock timings or output location."""
    m = copy.deepcopy(manifest)
    m.pop("timings", None)
    m["config"].pop("output", None)
    return m
