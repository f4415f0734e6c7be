"""Log-linear least-squares tensor estimation.

For each voxel, ``log(phi_i) = log(phi_0) - b x_i^T d + e_i`` with the
design vector ``x_i = (g1^2, g2^2, g3^2, 2 g1 g2, 2 g1 g3, 2 g2 g3)``.  By
default ``phi_0`` is a known offset, so ``d`` solves an ordinary least
squares problem on ``y_i = (log phi_0 - log phi_i) / b``.
"""

import numpy as np

from .volume import TensorField


def design_vector(g):
    g = np.asarray(g, dtype=np.float64)
    if abs(np.linalg.norm(g) - 1.0) > 1e-9:
        raise ValueError(f"gradient {g} is not a unit vector")
    return design_matrix(g[None, :])[0]


def design_matrix(gradients):
    """Stack of design vectors, shape ``(r, 6)``."""
    g = np.asarray(gradients, dtype=np.float64)
    g1, g2, g3 = g[:, 0], g[:, 1], g[:, 2]
    return np.column_stack([g1 * g1, g2 * g2, g3 * g3, 2 * g1 * g2, 2 * g1 * g3, 2 * g2 * g3])


def _fit_operator(scheme, intercept):
    x = design_matrix(scheme.gradients)
    if intercept:
        # unknowns (log phi_0, d); rows for i = 0..r with x_0 = 0
        a = np.zeros((scheme.r + 1, 7))
        a[:, 0] = 1.0
        a[1:, 1:] = -scheme.b * x
    else:
        a = x
    if np.linalg.matrix_rank(a) < a.shape[1]:
        raise ValueError("gradient design is rank deficient")
    return np.linalg.pinv(a)


def fit_signals(signals, scheme, intercept=False):
    """Fit an ``(M, r + 1)`` block of signal vectors.

    Returns ``(d, ok)`` with ``d`` of shape ``(M, 6)``; rows with any
    non-positive or non-finite signal have ``ok = False`` and ``d = nan``.
    """
    signals = np.asarray(signals, dtype=np.float64)
    ok = np.all(signals > 0, axis=-1) & np.all(np.isfinite(signals), axis=-1)
    pinv = _fit_operator(scheme, intercept)
    logs = np.log(np.where(ok[:, None], signals, 1.0))
    if intercept:
        d = (logs @ pinv.T)[:, 1:]
    else:
        y = (logs[:, :1] - logs[:, 1:]) / scheme.b
        d = y @ pinv.T
    d[~ok] = np.nan
    return d, ok


def fit_voxel(signals, scheme, intercept=False):
    """Tensor 6-vector for one voxel; raises on non-positive signals."""
    d, ok = fit_signals(np.asarray(signals, dtype=np.float64)[None, :], scheme, intercept)
    if not ok[0]:
        raise ValueError("signals must be strictly positive for a log-linear fit")
    return d[0]


def fit_volume(dwi, intercept=False, chunk=262144):
    """Fit every in-mask voxel of a :class:`DwiVolume`.

    Failed fits are flagged in ``fit_ok`` and carry ``nan`` tensors.
    """
    shape = dwi.shape
    d = np.full(shape.dims + (6,), np.nan)
    fit_ok = np.zeros(shape.dims, dtype=bool)
    idx = np.flatnonzero(dwi.mask.ravel(order="F"))
    sig = dwi.signals.reshape(shape.n_voxels, -1, order="F")
    d_flat = d.reshape(shape.n_voxels, 6, order="F")
    ok_flat = fit_ok.ravel(order="F")
    for start in range(0, idx.size, chunk):
        sel = idx[start : start + chunk]
        d_flat[sel], ok_flat[sel] = fit_signals(sig[sel], dwi.scheme, intercept)
    d = d_flat.reshape(shape.dims + (6,), order="F")
    fit_ok = ok_flat.reshape(shape.dims, order="F")
    meta = {"intercept": bool(intercept), "n_fit_failed": int((dwi.mask & ~fit_ok).sum())}
    return TensorField(shape, d, fit_ok, dwi.mask.copy(), meta)
