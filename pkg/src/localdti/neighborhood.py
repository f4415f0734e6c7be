"""Adaptive neighbourhood selection.

Candidates come from a cube centred on the voxel.  Each candidate ``v_l``
scores ``f = d_D(D(v), D(v_l)) * exp(C * d_p(v, v_l))`` where ``d_D`` is the
Frobenius distance between tensors and ``d_p`` the physical distance.  The
centre is always the first member; the other ``n - 1`` members are the
lowest-scoring candidates, ties going to the lower linear index.
"""

from dataclasses import dataclass

import numpy as np

from .volume import linear_index

DISTANCE_UNITS = ("voxel", "mm")


@dataclass(frozen=True)
class NeighborhoodConfig:
    cube: tuple = (5, 5, 3)
    n: int = 25
    C: float = 0.1
    distance_unit: str = "voxel"

    def __post_init__(self):
        cube = tuple(int(c) for c in self.cube)
        if len(cube) != 3 or any(c <= 0 or c % 2 == 0 for c in cube):
            raise ValueError(f"cube sides must be odd positive integers, got {self.cube}")
        if self.n < 1 or cube[0] * cube[1] * cube[2] < self.n:
            raise ValueError(f"cube {cube} cannot hold n={self.n} voxels")
        if self.C < 0:
            raise ValueError("C must be nonnegative")
        if self.distance_unit not in DISTANCE_UNITS:
            raise ValueError(f"distance_unit must be one of {DISTANCE_UNITS}")
        object.__setattr__(self, "cube", cube)
        object.__setattr__(self, "n", int(self.n))

    def to_dict(self):
        return {"cube": list(self.cube), "n": self.n, "C": self.C, "distance_unit": self.distance_unit}


@dataclass(eq=False)
class Neighborhood:
    center: tuple
    members: np.ndarray  # linear indices, members[0] is the centre
    short: bool = False


def tensor_distance(da, db):
    """``sqrt(trace[(D_a - D_b)^2])`` for 3x3 matrices (broadcasts)."""
    diff = np.asarray(da, dtype=np.float64) - np.asarray(db, dtype=np.float64)
    return np.sqrt(np.sum(diff * diff, axis=(-2, -1)))


def _dist6(da, db):
    # same distance on (D11, D22, D33, D12, D13, D23) vectors
    diff = da - db
    sq = diff * diff
    return np.sqrt(sq[..., 0] + sq[..., 1] + sq[..., 2] + 2.0 * (sq[..., 3] + sq[..., 4] + sq[..., 5]))


def physical_distance(offset, cfg, voxel_size):
    off = np.asarray(offset, dtype=np.float64)
    if cfg.distance_unit == "mm":
        off = off * np.asarray(voxel_size)
    return np.sqrt(np.sum(off * off, axis=-1))


def similarity_score(v, vl, tensors, cfg):
    da = tensors.matrices()[tuple(v)]
    db = tensors.matrices()[tuple(vl)]
    dp = physical_distance(np.subtract(vl, v), cfg, tensors.shape.voxel_size)
    return float(tensor_distance(da, db) * np.exp(cfg.C * dp))


class NeighborSelector:
    """Vectorised selection over many centres sharing one tensor field.

    Parameters
    ----------
    d : array, shape (nx, ny, nz, 6)
        Tensor entries.
    valid : bool array, shape (nx, ny, nz)
        Voxels allowed as members (in mask, fitted, with eigenvalues).
    cfg : NeighborhoodConfig
    voxel_size : tuple of 3 floats
    """

    def __init__(self, d, valid, cfg, voxel_size=(1.0, 1.0, 1.0)):
        self.cfg = cfg
        self.dims = valid.shape
        nx, ny, nz = self.dims
        h = np.array(cfg.cube) // 2
        self.half = h
        self.pdims = (nx + 2 * h[0], ny + 2 * h[1], nz + 2 * h[2])
        pad = ((h[0], h[0]), (h[1], h[1]), (h[2], h[2]))
        self.valid_p = np.pad(valid, pad, constant_values=False).ravel(order="F")
        self.d_p = np.pad(np.where(valid[..., None], d, 0.0), pad + ((0, 0),)).reshape(-1, 6, order="F")

        rng = [np.arange(-hi, hi + 1) for hi in h]
        dz, dy, dx = np.meshgrid(rng[2], rng[1], rng[0], indexing="ij")
        off = np.column_stack([dx.ravel(), dy.ravel(), dz.ravel()])  # (dz, dy, dx) lexicographic
        off = off[np.any(off != 0, axis=1)]
        self.offsets = off
        px, py, _ = self.pdims
        self.delta_p = off[:, 0] + px * (off[:, 1] + py * off[:, 2])
        self.delta = off[:, 0] + nx * (off[:, 1] + ny * off[:, 2])
        self.weight = np.exp(cfg.C * physical_distance(off, cfg, voxel_size))

    def _padded_index(self, lin):
        nx, ny, _ = self.dims
        x = lin % nx
        y = (lin // nx) % ny
        z = lin // (nx * ny)
        px, py, _ = self.pdims
        h = self.half
        return (x + h[0]) + px * ((y + h[1]) + py * (z + h[2]))

    def scores(self, centers):
        """Scores ``(M, K)`` of every cube candidate; ``inf`` where invalid."""
        pc = self._padded_index(np.asarray(centers, dtype=np.int64))
        cand = pc[:, None] + self.delta_p[None, :]
        f = _dist6(self.d_p[cand], self.d_p[pc][:, None, :]) * self.weight
        f[~self.valid_p[cand]] = np.inf
        return f

    def select(self, centers):
        """Members ``(M, n)`` as linear indices plus a ``short`` flag per centre."""
        centers = np.asarray(centers, dtype=np.int64)
        k = self.cfg.n - 1
        members = np.empty((centers.size, k + 1), dtype=np.int64)
        members[:, 0] = centers
        if k == 0:
            return members, np.zeros(centers.size, dtype=bool)
        f = self.scores(centers)
        kth = np.partition(f, k - 1, axis=1)[:, k - 1]
        below = f < kth[:, None]
        tied = f == kth[:, None]
        need = k - below.sum(axis=1)
        take = below | (tied & (np.cumsum(tied, axis=1) <= need[:, None]))
        cols = np.nonzero(take)[1].reshape(centers.size, k)
        members[:, 1:] = centers[:, None] + self.delta[cols]
        return members, ~np.isfinite(kth)


def select_neighbors(v, tensors, cfg, valid=None):
    """Adaptive neighbourhood of voxel ``v`` in a :class:`TensorField`."""
    valid = tensors.valid if valid is None else valid
    if not valid[tuple(v)]:
        raise ValueError(f"voxel {tuple(v)} is not a valid centre")
    sel = NeighborSelector(tensors.d, valid, cfg, tensors.shape.voxel_size)
    members, short = sel.select([linear_index(v, tensors.shape)])
    return Neighborhood(tuple(int(c) for c in v), members[0], bool(short[0]))
