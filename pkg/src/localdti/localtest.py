"""The neighbourhood eigenvalue test for isotropic diffusion.

For a voxel with neighbours ``j = 1..n`` (``j = 1`` the voxel itself) and
ordered eigenvalues ``lambda_{j,(k)}``, the eigenvalue table is treated as a
randomised complete block design: eigenvalue ranks are treatments, voxels
are blocks.  The contrast statistic

    U = A @ mean_j(lambda_j) / sqrt(MSE) * sqrt(mean_j S_j^2)

is standardised against the brain-wide distribution of ``U`` over an
iteratively estimated set of isotropic voxels, giving

    chiK = c * n * (U - theta)^T Sigma^{-1} (U - theta),

which is referred to a chi-square with ``rank(A)`` degrees of freedom.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .neighborhood import NeighborhoodConfig, NeighborSelector
from .volume import ScalarVolume

log = logging.getLogger(__name__)

DEFAULT_CONTRAST = np.array([[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])


def check_contrast(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"contrast matrix must be r_A x 3, got shape {a.shape}")
    if np.any(a.sum(axis=1) != 0):
        raise ValueError("contrast rows must sum to zero")
    if np.linalg.matrix_rank(a) != a.shape[0]:
        raise ValueError("contrast matrix must have full row rank")
    return a


@dataclass(eq=False)
class AnovaComponents:
    lambda_bar: np.ndarray  # (..., 3) column means over neighbours
    mse: np.ndarray  # (...,) two-way residual mean square
    s2bar: np.ndarray  # (...,) mean of per-neighbour S_j^2
    s2: np.ndarray  # (..., n) per-neighbour eigenvalue variance


def anova_components(lam):
    """Two-way decomposition of an ``(..., n, 3)`` eigenvalue table."""
    lam = np.asarray(lam, dtype=np.float64)
    n = lam.shape[-2]
    col = lam.mean(axis=-2)
    row = lam.mean(axis=-1)
    grand = row.mean(axis=-1)
    dev = lam - row[..., None]
    s2 = np.sum(dev * dev, axis=-1) / 2.0
    resid = dev - col[..., None, :] + grand[..., None, None]
    mse = np.sum(resid * resid, axis=(-2, -1)) / (2.0 * (n - 1)) if n > 1 else np.full(lam.shape[:-2], np.nan)
    return AnovaComponents(col, mse, s2.mean(axis=-1), s2)


# MSE below (MSE_RTOL * eigenvalue scale)^2 is rounding noise on an exactly
# additive table and counts as zero
MSE_RTOL = 1e-12


def degenerate_mse(components):
    mse = np.asarray(components.mse, dtype=np.float64)
    scale2 = np.mean(np.asarray(components.lambda_bar) ** 2, axis=-1)
    return ~(mse > MSE_RTOL**2 * scale2)


def u_statistic(components, a=DEFAULT_CONTRAST):
    """``A lambda_bar / sqrt(MSE) * sqrt(S2bar)``; ``nan`` where MSE is zero."""
    a = np.asarray(a, dtype=np.float64)
    mse = np.asarray(components.mse, dtype=np.float64)
    ok = ~degenerate_mse(components)
    scale = np.sqrt(components.s2bar) / np.sqrt(np.where(ok, mse, 1.0))
    u = (components.lambda_bar @ a.T) * scale[..., None]
    return np.where(ok[..., None], u, np.nan)


def correction_constant(alpha, r_a):
    """Bias correction ``c = (1/r_A) * int_0^q t f_{r_A}(t) dt`` with ``q = chi2_{r_A;1-alpha}``.

    ``t f_k(t) = k f_{k+2}(t)`` for chi-square densities, so the integral is a
    chi-square CDF with ``r_A + 2`` degrees of freedom.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    q = stats.chi2.ppf(1.0 - alpha, r_a)
    return float(stats.chi2.cdf(q, r_a + 2))


@dataclass(eq=False)
class NullSetState:
    v0: np.ndarray  # bool over the testable voxels passed in
    theta: np.ndarray
    sigma: np.ndarray
    c: float
    iteration: int
    converged: bool
    alpha: float
    n: int
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "theta": self.theta.tolist(),
            "sigma": self.sigma.tolist(),
            "c": self.c,
            "iterations": self.iteration,
            "converged": self.converged,
            "alpha": self.alpha,
            "n": self.n,
            "null_set_size": int(self.v0.sum()),
            "warnings": list(self.warnings),
        }


def _covariance(x, notes):
    sigma = np.atleast_2d(np.cov(x, rowvar=False))
    tr = np.trace(sigma)
    if np.linalg.eigvalsh(sigma).min() < 1e-12 * tr:
        msg = "null-set covariance near singular; ridge added"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        sigma = sigma + 1e-10 * tr * np.eye(sigma.shape[0])
    return sigma


def _quad(u, theta, sigma):
    diff = u - theta
    return np.einsum("mi,ij,mj->m", diff, np.linalg.inv(sigma), diff)


def estimate_null_set(u, alpha=0.01, n=25, tol=1e-8, max_iter=100, min_count=1000):
    """Iteratively estimate the isotropic voxel set from ``U`` values.

    Parameters
    ----------
    u : array, shape (M, r_A)
        ``U`` for every testable voxel.
    alpha : float
        Level defining the chi-square cut used to trim the null set.
    n : int
        Neighbourhood size used to build ``U``.

    Returns
    -------
    NullSetState
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or not np.all(np.isfinite(u)):
        raise ValueError("U must be a finite (M, r_A) array")
    m, r_a = u.shape
    if m < max(min_count, r_a + 2):
        raise ValueError(f"only {m} testable voxels; need at least {max(min_count, r_a + 2)}")
    c = correction_constant(alpha, r_a)
    cut = stats.chi2.ppf(1.0 - alpha, r_a)
    notes = []
    v0 = np.ones(m, dtype=bool)
    theta_prev = None
    converged = False
    for s in range(1, max_iter + 1):
        if v0.sum() < r_a + 2:
            raise ValueError(f"null set collapsed to {int(v0.sum())} voxels at iteration {s}")
        theta = np.median(u[v0], axis=0)
        sigma = _covariance(np.sqrt(n) * u[v0], notes)
        chik = c * n * _quad(u, theta, sigma)
        v0 = chik < cut
        if theta_prev is not None:
            step = np.max(np.abs(theta - theta_prev))
            if step < tol * (1.0 + np.max(np.abs(theta))):
                converged = True
                break
        theta_prev = theta
    if not converged:
        msg = f"null-set iteration did not converge in {max_iter} steps"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return NullSetState(v0, theta, sigma, c, s, converged, float(alpha), int(n), notes)


def chi_k(u, state):
    """``chiK`` and its upper-tail chi-square p-value under ``state``."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    chik = state.c * state.n * _quad(u, state.theta, state.sigma)
    p = stats.chi2.sf(chik, u.shape[1])
    return chik, p


@dataclass(frozen=True)
class TestConfig:
    neighborhood: NeighborhoodConfig = NeighborhoodConfig()
    alpha: float = 0.01
    contrast: tuple = ((1.0, -1.0, 0.0), (0.0, 1.0, -1.0))
    tol: float = 1e-8
    max_iter: int = 100
    min_testable: int = 1000
    chunk: int = 4096

    __test__ = False  # not a pytest class

    def to_dict(self):
        return {
            "neighborhood": self.neighborhood.to_dict(),
            "alpha": self.alpha,
            "contrast": [list(r) for r in self.contrast],
            "tol": self.tol,
            "max_iter": self.max_iter,
            "min_testable": self.min_testable,
        }


@dataclass(eq=False)
class TestField:
    u: np.ndarray  # (nx, ny, nz, r_A), nan off the testable set
    chik: ScalarVolume
    p: ScalarVolume
    testable: np.ndarray
    state: NullSetState
    counts: dict

    __test__ = False

    def manifest(self):
        return {"null_set": self.state.to_dict(), "counts": dict(self.counts)}


def local_u_field(tensors, lambdas, cfg=TestConfig()):
    """``U`` for every valid voxel.

    Returns ``(u, testable, counts)`` with ``u`` shaped ``(nx, ny, nz, r_A)``.
    """
    a = check_contrast(cfg.contrast)
    shape = tensors.shape
    lam = np.asarray(lambdas, dtype=np.float64)
    valid = tensors.valid & np.all(np.isfinite(lam), axis=-1) & np.all(np.isfinite(tensors.d), axis=-1)
    selector = NeighborSelector(tensors.d, valid, cfg.neighborhood, shape.voxel_size)
    lam_flat = lam.reshape(-1, 3, order="F")
    centers = np.flatnonzero(valid.ravel(order="F"))
    u_flat = np.full((shape.n_voxels, a.shape[0]), np.nan)
    n_short = 0
    n_degenerate = 0
    for start in range(0, centers.size, cfg.chunk):
        ctr = centers[start : start + cfg.chunk]
        members, short = selector.select(ctr)
        comp = anova_components(lam_flat[members])
        u = u_statistic(comp, a)
        u[short] = np.nan
        n_short += int(short.sum())
        n_degenerate += int((~short & degenerate_mse(comp)).sum())
        u_flat[ctr] = u
    u_vol = u_flat.reshape(shape.dims + (a.shape[0],), order="F")
    testable = np.all(np.isfinite(u_vol), axis=-1)
    counts = {
        "mask": int(tensors.mask.sum()),
        "valid": int(valid.sum()),
        "short_neighborhood": n_short,
        "degenerate_mse": n_degenerate,
        "testable": int(testable.sum()),
    }
    return u_vol, testable, counts


def test_volume(tensors, lambdas, cfg=TestConfig()):
    """Run the full local test over a tensor field.

    ``lambdas`` are the per-voxel eigenvalues sorted descending, shape
    ``(nx, ny, nz, 3)`` (e.g. ``scalar_maps(tensors).lambdas``).
    """
    shape = tensors.shape
    u_vol, testable, counts = local_u_field(tensors, lambdas, cfg)
    u_test = u_vol[testable]
    state = estimate_null_set(
        u_test,
        alpha=cfg.alpha,
        n=cfg.neighborhood.n,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        min_count=cfg.min_testable,
    )
    chik, p = chi_k(u_test, state)
    chik_vol = np.full(shape.dims, np.nan)
    p_vol = np.full(shape.dims, np.nan)
    chik_vol[testable] = chik
    p_vol[testable] = p
    log.info("local test: %d testable voxels, %d iterations", counts["testable"], state.iteration)
    return TestField(
        u=u_vol,
        chik=ScalarVolume(shape, chik_vol, testable),
        p=ScalarVolume(shape, p_vol, testable),
        testable=testable,
        state=state,
        counts=counts,
    )


test_volume.__test__ = False
