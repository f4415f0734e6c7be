"""Synthetic DWI phantoms with Rician magnitude noise.

The default phantom is an ellipsoidal "brain" of isotropic tissue crossed by
45-degree oblique fibre bundles.  Two bundle families are used: a wide "red"
bundle and narrower "blue" bundles.  Blue/blue crossings become oblate
voxels, red/blue crossings become nondegenerate voxels, and single bundles
are prolate.  All four tissue classes share a mean diffusivity of
0.7e-3 mm^2/s.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .tensor import design_matrix
from .volume import (
    LABEL_ISOTROPIC,
    LABEL_NONDEGENERATE,
    LABEL_OBLATE,
    LABEL_OUTSIDE,
    LABEL_PROLATE,
    DwiVolume,
    GridShape,
    LabelVolume,
    matrix_to_vector,
)

_S = 1.0 / np.sqrt(2.0)

# Columns are eigenvectors ordered (largest, middle, smallest).
ORIENTATIONS = {
    0: np.eye(3),
    1: np.array([[_S, _S, 0.0], [-_S, _S, 0.0], [0.0, 0.0, 1.0]]),
    2: np.array([[_S, -_S, 0.0], [_S, _S, 0.0], [0.0, 0.0, 1.0]]),
}

EIGENVALUES = {
    LABEL_ISOTROPIC: (0.7e-3, 0.7e-3, 0.7e-3),
    LABEL_PROLATE: (1.0e-3, 0.55e-3, 0.55e-3),
    LABEL_OBLATE: (0.8e-3, 0.8e-3, 0.5e-3),
    LABEL_NONDEGENERATE: (0.9e-3, 0.7e-3, 0.5e-3),
}

# Lengths are in voxels of a 256-wide grid and rescale with nx.
DEFAULT_GEOMETRY = {
    "brain_semi_axes": [0.36, 0.44, 0.40],
    "z_half_extent": 0.25,
    "reference_width": 256,
    "bundles": [
        {"family": "red", "orientation": 1, "offset": 0.0, "half_width": 7.0, "half_length": 80.0},
        {"family": "blue", "orientation": 1, "offset": 40.0, "half_width": 4.0, "half_length": 60.0},
        {"family": "blue", "orientation": 1, "offset": -40.0, "half_width": 4.0, "half_length": 60.0},
        {"family": "blue", "orientation": 2, "offset": 30.0, "half_width": 6.0, "half_length": 75.0},
        {"family": "blue", "orientation": 2, "offset": -30.0, "half_width": 6.0, "half_length": 75.0},
    ],
}


class Phi0Split:
    """Baseline ``phi0*`` of ``low`` for 1-based ``v_x`` in ``(0, nx/2]``, else ``high``."""

    def __init__(self, low=1200.0, high=1800.0):
        self.low = float(low)
        self.high = float(high)

    def __call__(self, x, shape):
        x = np.asarray(x)
        return np.where(x + 1 <= shape.nx / 2, self.low, self.high)

    def to_dict(self):
        return {"rule": "x_split", "low": self.low, "high": self.high}


@dataclass
class PhantomSpec:
    labels: LabelVolume
    eigenvalue_table: dict = field(default_factory=lambda: dict(EIGENVALUES))
    orientation_table: dict = field(default_factory=lambda: dict(ORIENTATIONS))
    phi0_rule: object = field(default_factory=Phi0Split)
    snr: float = 10.0

    def __post_init__(self):
        for label, lam in self.eigenvalue_table.items():
            lam = tuple(float(x) for x in lam)
            if not (lam[0] >= lam[1] >= lam[2] > 0):
                raise ValueError(f"eigenvalues for label {label} must be sorted descending and positive")
            self.eigenvalue_table[label] = lam
        for tag, q in self.orientation_table.items():
            q = np.asarray(q, dtype=np.float64)
            if q.shape != (3, 3) or np.abs(q.T @ q - np.eye(3)).max() > 1e-12:
                raise ValueError(f"orientation {tag} is not orthogonal")
            self.orientation_table[tag] = q
        if not self.snr > 0:
            raise ValueError("snr must be positive")

    @property
    def shape(self):
        return self.labels.shape

    def phi0_map(self):
        x = np.arange(self.shape.nx)[:, None, None]
        phi0 = np.broadcast_to(self.phi0_rule(x, self.shape), self.shape.dims)
        return np.where(self.labels.mask, phi0, 0.0)


def true_tensor(spec, v):
    """Ground-truth tensor ``Q diag(lambda*) Q^T`` at voxel ``v``."""
    x, y, z = v
    label = int(spec.labels.label[x, y, z])
    if label == LABEL_OUTSIDE:
        raise ValueError(f"voxel {tuple(v)} is outside the phantom mask")
    q = spec.orientation_table[int(spec.labels.orientation_tag[x, y, z])]
    lam = np.diag(spec.eigenvalue_table[label])
    return q @ lam @ q.T


def true_tensor_field(spec):
    """Ground-truth tensors as 6-vectors, shape ``(nx, ny, nz, 6)``; zero outside."""
    d = np.zeros(spec.shape.dims + (6,))
    labels = spec.labels.label
    tags = spec.labels.orientation_tag
    for label, lam in spec.eigenvalue_table.items():
        for tag, q in spec.orientation_table.items():
            sel = (labels == label) & (tags == tag)
            if sel.any():
                d[sel] = matrix_to_vector(q @ np.diag(lam) @ q.T)
    return d


def noiseless_signals(spec, scheme):
    """Mean signals ``phi0* exp(-b g^T D* g)``, shape ``(nx, ny, nz, r + 1)``."""
    d = true_tensor_field(spec)
    x = design_matrix(scheme.gradients)
    phi0 = spec.phi0_map()
    s = np.empty(spec.shape.dims + (scheme.r + 1,))
    s[..., 0] = phi0
    s[..., 1:] = phi0[..., None] * np.exp(-scheme.b * (d @ x.T))
    return s


_BLOCK = 4096


def _block_normals(seed, block, size):
    # Philox keyed by (seed, block): a voxel's draws depend only on the seed
    # and its linear index, independent of how the volume is traversed.
    key = (int(block) << 64) | (int(seed) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(size)


def rician_noise(seed, n_voxels, n_signals, start=0):
    """Two i.i.d. N(0, 1) channels per signal for voxels ``start:start + n_voxels``.

    Returns shape ``(n_voxels, n_signals, 2)``.
    """
    out = np.empty((n_voxels, n_signals, 2))
    stop = start + n_voxels
    first = start // _BLOCK
    for block in range(first, (stop - 1) // _BLOCK + 1 if n_voxels else first):
        lo = max(start, block * _BLOCK)
        hi = min(stop, (block + 1) * _BLOCK)
        draws = _block_normals(seed, block, (_BLOCK, n_signals, 2))
        out[lo - start : hi - start] = draws[lo - block * _BLOCK : hi - block * _BLOCK]
    return out


def simulate(spec, scheme, seed):
    """Draw a DWI volume with Rician noise at ``spec.snr``.

    ``snr = inf`` yields the noiseless signals exactly.  The noise standard
    deviation is ``phi0*(v) / snr`` for every channel, the b=0 reference
    included.
    """
    shape = spec.shape
    n = shape.n_voxels
    mask = spec.labels.mask
    mean = noiseless_signals(spec, scheme)
    if not np.isinf(spec.snr):
        flat = mean.reshape(n, scheme.r + 1, order="F")
        sigma = (spec.phi0_map() / spec.snr).ravel(order="F")
        inside = mask.ravel(order="F")
        step = 64 * _BLOCK
        for start in range(0, n, step):
            stop = min(start + step, n)
            sel = inside[start:stop]
            if not sel.any():
                continue
            eps = rician_noise(seed, stop - start, scheme.r + 1, start)[sel]
            eps *= sigma[start:stop][sel, None, None]
            block = flat[start:stop]
            block[sel] = np.hypot(block[sel] + eps[..., 0], eps[..., 1])
        mean = flat.reshape(shape.dims + (scheme.r + 1,), order="F")
    mean[~mask] = 0.0
    meta = {"seed": int(seed), "snr": float(spec.snr), "phi0": spec.phi0_rule.to_dict()}
    return DwiVolume(shape, scheme, mean, mask, meta)


def _fractional_coords(shape):
    def axis(n):
        return (np.arange(n) + 0.5) / n - 0.5

    return np.meshgrid(axis(shape.nx), axis(shape.ny), axis(shape.nz), indexing="ij")


def phantom_labels(shape, geometry=None):
    """Rasterise the bundle geometry into a :class:`LabelVolume`."""
    geometry = DEFAULT_GEOMETRY if geometry is None else geometry
    u, w, s = _fractional_coords(shape)
    ax, ay, az = geometry["brain_semi_axes"]
    brain = (u / ax) ** 2 + (w / ay) ** 2 + (s / az) ** 2 <= 1.0

    scale = shape.nx / geometry["reference_width"]
    dx = u * shape.nx
    dy = w * shape.ny
    along1 = (dx - dy) * _S  # coordinate along orientation-1 principal axis
    along2 = (dx + dy) * _S  # coordinate along orientation-2 principal axis
    slab = np.abs(s) <= geometry["z_half_extent"]

    cover = {(fam, tag): np.zeros(shape.dims, dtype=bool) for fam in ("red", "blue") for tag in (1, 2)}
    for b in geometry["bundles"]:
        tag = int(b["orientation"])
        a, c = (along1, along2) if tag == 1 else (along2, along1)
        inside = (
            (np.abs(c - b["offset"] * scale) <= b["half_width"] * scale)
            & (np.abs(a) <= b["half_length"] * scale)
            & slab
            & brain
        )
        cover[(b["family"], tag)] |= inside

    q1 = cover[("red", 1)] | cover[("blue", 1)]
    q2 = cover[("red", 2)] | cover[("blue", 2)]
    red = cover[("red", 1)] | cover[("red", 2)]
    crossing = q1 & q2

    label = np.where(brain, LABEL_ISOTROPIC, LABEL_OUTSIDE).astype(np.uint8)
    tag = np.zeros(shape.dims, dtype=np.uint8)
    label[q1 | q2] = LABEL_PROLATE
    tag[q1] = 1
    tag[q2] = 2
    label[crossing] = np.where(red[crossing], LABEL_NONDEGENERATE, LABEL_OBLATE)
    # nondegenerate voxels follow the red bundle, oblate voxels keep z as the minor axis
    tag[crossing] = np.where(cover[("red", 2)][crossing], 2, 1)
    return LabelVolume(shape, label, tag, meta={"geometry": geometry})


def default_phantom(shape=None, snr=10.0, geometry=None):
    """The default four-class phantom on ``shape`` (256 x 256 x 30 if omitted)."""
    shape = GridShape(256, 256, 30) if shape is None else shape
    labels = phantom_labels(shape, geometry)
    present = set(np.unique(labels.label).tolist())
    wanted = {LABEL_ISOTROPIC, LABEL_PROLATE, LABEL_OBLATE, LABEL_NONDEGENERATE}
    if geometry is None or geometry.get("bundles"):
        missing = wanted - present
        if missing:
            raise ValueError(f"grid {shape.dims} too small to place bundles; missing labels {sorted(missing)}")
    return PhantomSpec(labels=labels, snr=snr)


def isotropic_phantom(shape, snr=10.0, geometry=None):
    """Same brain mask as the default phantom, no fibre bundles."""
    geometry = copy.deepcopy(DEFAULT_GEOMETRY if geometry is None else geometry)
    geometry["bundles"] = []
    return PhantomSpec(labels=phantom_labels(shape, geometry), snr=snr)
