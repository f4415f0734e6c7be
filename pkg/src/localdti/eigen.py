"""Symmetric 3x3 eigen-decomposition and FA / RA / MD maps."""

from dataclasses import dataclass

import numpy as np

from .volume import ScalarVolume, vector_to_matrix

DEGENERACY_TOL = 1e-12
RESIDUAL_TOL = 1e-12
_THIRD_TURN = 2.0 * np.pi / 3.0


@dataclass(eq=False)
class EigenSystem:
    """Eigenvalues sorted descending and matching unit eigenvectors (columns)."""

    lambdas: np.ndarray
    vectors: np.ndarray

    @property
    def principal(self):
        return self.vectors[:, 0]


def _cross_null_vector(m):
    """Unit vector spanning the null space of rank-2 matrices ``m`` (M, 3, 3)."""
    r0, r1, r2 = m[:, 0], m[:, 1], m[:, 2]
    cands = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=1)
    norms = np.linalg.norm(cands, axis=-1)
    best = np.argmax(norms, axis=1)
    rows = np.arange(m.shape[0])
    v = cands[rows, best]
    return v / norms[rows, best][:, None], norms[rows, best]


def _analytic(a):
    """Trigonometric eigenvalues plus cross-product eigenvectors.

    Returns ``(lam, vec, needs_fallback)``.
    """
    a00, a11, a22 = a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]
    a01, a02, a12 = a[:, 0, 1], a[:, 0, 2], a[:, 1, 2]
    q = (a00 + a11 + a22) / 3.0
    off = a01 * a01 + a02 * a02 + a12 * a12
    p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * off
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0, p, 1.0)
    b = (a - q[:, None, None] * np.eye(3)) / safe_p[:, None, None]
    half_det = np.linalg.det(b) / 2.0
    r = np.clip(half_det, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam = np.empty((a.shape[0], 3))
    lam[:, 0] = q + 2.0 * p * np.cos(phi)
    lam[:, 2] = q + 2.0 * p * np.cos(phi + _THIRD_TURN)
    lam[:, 1] = 3.0 * q - lam[:, 0] - lam[:, 2]

    eye = np.eye(3)
    v1, n1 = _cross_null_vector(a - lam[:, 0, None, None] * eye)
    v3, n3 = _cross_null_vector(a - lam[:, 2, None, None] * eye)
    v3 = v3 - np.sum(v3 * v1, axis=1)[:, None] * v1
    v3 /= np.linalg.norm(v3, axis=1)[:, None]
    v2 = np.cross(v3, v1)
    vec = np.stack([v1, v2, v3], axis=-1)

    scale = np.sqrt(np.sum(a * a, axis=(1, 2)))
    recon = np.einsum("mik,mk,mjk->mij", vec, lam, vec)
    resid = np.sqrt(np.sum((recon - a) ** 2, axis=(1, 2)))
    degenerate = (p == 0) | (1.0 - r * r < DEGENERACY_TOL) | (n1 == 0) | (n3 == 0)
    bad = degenerate | ~(resid <= RESIDUAL_TOL * np.where(scale > 0, scale, 1.0))
    return lam, vec, bad


def _jacobi(a, max_sweeps=50):
    """Cyclic Jacobi rotations on a stack of symmetric matrices."""
    a = a.copy()
    m = a.shape[0]
    v = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()
    scale = np.sqrt(np.sum(a * a, axis=(1, 2)))
    rows = np.arange(m)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * (a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2))
        if np.all(off <= 1e-18 * np.maximum(scale, np.finfo(float).tiny)):
            break
        for i, j in ((0, 1), (0, 2), (1, 2)):
            aij = a[:, i, j]
            active = aij != 0
            theta = np.where(active, (a[:, j, j] - a[:, i, i]) / (2.0 * np.where(active, aij, 1.0)), 0.0)
            t = np.where(
                active, np.sign(theta + (theta == 0)) / (np.abs(theta) + np.hypot(theta, 1.0)), 0.0
            )
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.broadcast_to(np.eye(3), (m, 3, 3)).copy()
            rot[rows, i, i] = c
            rot[rows, j, j] = c
            rot[rows, i, j] = s
            rot[rows, j, i] = -s
            a = np.einsum("mki,mkl,mlj->mij", rot, a, rot)
            a[rows, i, j] = a[rows, j, i] = 0.0
            v = v @ rot
    lam = np.diagonal(a, axis1=1, axis2=2).copy()
    order = np.argsort(-lam, axis=1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=1)
    vec = np.take_along_axis(v, order[:, None, :], axis=2)
    return lam, vec


def _fix_signs(vec, tol=1e-12):
    """Make the first non-negligible component of each eigenvector positive."""
    comp = np.abs(vec) > tol
    first = np.argmax(comp, axis=-2)  # (M, 3) index along component axis
    lead = np.take_along_axis(vec, first[:, None, :], axis=-2)[:, 0, :]
    return vec * np.where(lead < 0, -1.0, 1.0)[:, None, :]


def eigh3(mats):
    """Batched eigen-decomposition of symmetric 3x3 matrices.

    Parameters
    ----------
    mats : array, shape (..., 3, 3)
        Symmetric matrices.  Non-finite matrices give ``nan`` results.

    Returns
    -------
    lam : array, shape (..., 3)
        Eigenvalues sorted descending.
    vec : array, shape (..., 3, 3)
        Unit eigenvectors as columns, in the order of ``lam``.
    """
    mats = np.asarray(mats, dtype=np.float64)
    batch = mats.shape[:-2]
    a = mats.reshape(-1, 3, 3)
    finite = np.all(np.isfinite(a), axis=(1, 2))
    lam = np.full((a.shape[0], 3), np.nan)
    vec = np.full((a.shape[0], 3, 3), np.nan)
    if finite.any():
        af = a[finite]
        with np.errstate(invalid="ignore", divide="ignore"):
            lf, vf, bad = _analytic(af)
        if bad.any():
            with np.errstate(over="ignore"):
                lf[bad], vf[bad] = _jacobi(af[bad])
        # near-repeated roots can come out an ulp out of order
        order = np.argsort(-lf, axis=1, kind="stable")
        lam[finite] = np.take_along_axis(lf, order, axis=1)
        vec[finite] = _fix_signs(np.take_along_axis(vf, order[:, None, :], axis=2))
    return lam.reshape(batch + (3,)), vec.reshape(batch + (3, 3))


def eigen3(d):
    """Eigen-decomposition of a single symmetric 3x3 matrix."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {d.shape}")
    norm = np.linalg.norm(d)
    if np.linalg.norm(d - d.T) > 1e-9 * max(norm, np.finfo(float).tiny):
        raise ValueError("matrix is not symmetric")
    lam, vec = eigh3(0.5 * (d + d.T))
    return EigenSystem(lam, vec)


def fa(lambdas):
    """Fractional anisotropy; ``nan`` where all eigenvalues are zero."""
    lam = np.asarray(lambdas, dtype=np.float64)
    dev = lam - lam.mean(axis=-1, keepdims=True)
    num = np.sum(dev * dev, axis=-1)
    den = np.sum(lam * lam, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, np.sqrt(1.5 * num / np.where(den > 0, den, 1.0)), np.nan)


def ra(lambdas):
    """Relative anisotropy; ``nan`` where the trace is zero."""
    lam = np.asarray(lambdas, dtype=np.float64)
    dev = lam - lam.mean(axis=-1, keepdims=True)
    tr = np.sum(lam, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tr != 0, 3.0 / np.sqrt(2.0) * np.sqrt(np.sum(dev * dev, axis=-1)) / np.where(tr != 0, tr, 1.0), np.nan)


@dataclass(eq=False)
class ScalarMaps:
    fa: ScalarVolume
    ra: ScalarVolume
    md: ScalarVolume
    lambdas: np.ndarray  # (nx, ny, nz, 3), nan where unavailable
    vectors: np.ndarray  # (nx, ny, nz, 3, 3)

    @property
    def valid(self):
        return np.all(np.isfinite(self.lambdas), axis=-1)


def scalar_maps(tensors, chunk=262144):
    """Eigen-systems and FA / RA / MD volumes for a :class:`TensorField`."""
    shape = tensors.shape
    valid = tensors.valid & np.all(np.isfinite(tensors.d), axis=-1)
    lam = np.full(shape.dims + (3,), np.nan)
    vec = np.full(shape.dims + (3, 3), np.nan)
    idx = np.nonzero(valid)
    dv = tensors.d[idx]
    lam_v = np.empty((dv.shape[0], 3))
    vec_v = np.empty((dv.shape[0], 3, 3))
    for start in range(0, dv.shape[0], chunk):
        stop = start + chunk
        lam_v[start:stop], vec_v[start:stop] = eigh3(vector_to_matrix(dv[start:stop]))
    lam[idx] = lam_v
    vec[idx] = vec_v
    md = np.where(valid, (tensors.d[..., 0] + tensors.d[..., 1] + tensors.d[..., 2]) / 3.0, np.nan)
    return ScalarMaps(
        fa=ScalarVolume(shape, np.where(valid, fa(lam), np.nan), valid),
        ra=ScalarVolume(shape, np.where(valid, ra(lam), np.nan), valid),
        md=ScalarVolume(shape, md, valid),
        lambdas=lam,
        vectors=vec,
    )
