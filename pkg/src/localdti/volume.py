"""Voxel-lattice containers and the raw volume file format.

Every volume file is one line of JSON (the header) followed by a
little-endian raw payload.  Arrays are flattened x-fastest, i.e. voxel
``(x, y, z)`` sits at ``x + nx * (y + ny * z)``; per-voxel vectors (DWI
signals, tensor entries) are stored contiguously for each voxel.  Masks are
written into the header as run lengths so that a scalar volume's payload is
exactly ``8 * nx * ny * nz`` bytes.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionScheme

FORMAT_NAME = "localdti-volume"
FORMAT_VERSION = 1
DEFAULT_VOXEL_SIZE = (0.9375, 0.9375, 3.0)

LABEL_OUTSIDE = 0
LABEL_ISOTROPIC = 1
LABEL_PROLATE = 2
LABEL_OBLATE = 3
LABEL_NONDEGENERATE = 4
ANISOTROPIC_LABELS = (LABEL_PROLATE, LABEL_OBLATE, LABEL_NONDEGENERATE)


class VolumeFormatError(ValueError):
    """Raised when a volume file cannot be decoded."""


@dataclass(frozen=True)
class GridShape:
    nx: int
    ny: int
    nz: int
    voxel_size: tuple = DEFAULT_VOXEL_SIZE

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value}")
            object.__setattr__(self, name, int(value))
        vs = tuple(float(s) for s in self.voxel_size)
        if len(vs) != 3 or any(not s > 0 for s in vs):
            raise ValueError(f"voxel_size must be 3 positive reals, got {self.voxel_size}")
        object.__setattr__(self, "voxel_size", vs)

    @property
    def dims(self):
        return (self.nx, self.ny, self.nz)

    @property
    def n_voxels(self):
        return self.nx * self.ny * self.nz

    def to_dict(self):
        return {"dims": list(self.dims), "voxel_size": list(self.voxel_size)}

    @classmethod
    def from_dict(cls, d):
        nx, ny, nz = d["dims"]
        return cls(nx, ny, nz, tuple(d["voxel_size"]))


def linear_index(v, shape):
    """Return the x-fastest linear index of voxel ``v = (x, y, z)``."""
    x, y, z = (int(c) for c in v)
    nx, ny, nz = shape.dims if isinstance(shape, GridShape) else shape
    if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
        raise IndexError(f"voxel {tuple(v)} outside grid {(nx, ny, nz)}")
    return x + nx * (y + ny * z)


def voxel_from_index(idx, shape):
    nx, ny, nz = shape.dims if isinstance(shape, GridShape) else shape
    if not 0 <= idx < nx * ny * nz:
        raise IndexError(f"index {idx} outside grid {(nx, ny, nz)}")
    return (idx % nx, (idx // nx) % ny, idx // (nx * ny))


def _same(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


def _check_grid(shape, arr, trailing=()):
    expected = shape.dims + tuple(trailing)
    if arr.shape != expected:
        raise ValueError(f"array shape {arr.shape} does not match grid {expected}")


def _full_mask(shape):
    return np.ones(shape.dims, dtype=bool)


@dataclass(eq=False)
class ScalarVolume:
    shape: GridShape
    data: np.ndarray
    mask: np.ndarray = None
    meta: dict = field(default_factory=dict)

    kind = "scalar"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        _check_grid(self.shape, self.data)
        self.mask = _full_mask(self.shape) if self.mask is None else np.asarray(self.mask, dtype=bool)
        _check_grid(self.shape, self.mask)

    def values(self):
        """Data at in-mask voxels, x-fastest order."""
        return self.data.ravel(order="F")[self.mask.ravel(order="F")]

    def __eq__(self, other):
        return (
            isinstance(other, ScalarVolume)
            and self.shape == other.shape
            and _same(self.data, other.data)
            and _same(self.mask, other.mask)
        )


@dataclass(eq=False)
class LabelVolume:
    """Tissue labels (0 outside, 1..4 tissue classes) and orientation tags."""

    shape: GridShape
    label: np.ndarray
    orientation_tag: np.ndarray = None
    meta: dict = field(default_factory=dict)

    kind = "label"

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=np.uint8)
        _check_grid(self.shape, self.label)
        if np.any(self.label > LABEL_NONDEGENERATE):
            raise ValueError("labels must lie in 0..4")
        if self.orientation_tag is None:
            self.orientation_tag = np.zeros(self.shape.dims, dtype=np.uint8)
        self.orientation_tag = np.asarray(self.orientation_tag, dtype=np.uint8)
        _check_grid(self.shape, self.orientation_tag)

    @property
    def mask(self):
        return self.label != LABEL_OUTSIDE

    @property
    def anisotropic(self):
        return np.isin(self.label, ANISOTROPIC_LABELS)

    @property
    def isotropic(self):
        return self.label == LABEL_ISOTROPIC

    def __eq__(self, other):
        return (
            isinstance(other, LabelVolume)
            and self.shape == other.shape
            and _same(self.label, other.label)
            and _same(self.orientation_tag, other.orientation_tag)
        )


@dataclass(eq=False)
class DwiVolume:
    """Per-voxel magnitude signals ``(phi_0, ..., phi_r)``."""

    shape: GridShape
    scheme: AcquisitionScheme
    signals: np.ndarray
    mask: np.ndarray = None
    meta: dict = field(default_factory=dict)

    kind = "dwi"

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        _check_grid(self.shape, self.signals, (self.scheme.r + 1,))
        self.mask = _full_mask(self.shape) if self.mask is None else np.asarray(self.mask, dtype=bool)
        _check_grid(self.shape, self.mask)

    def __eq__(self, other):
        return (
            isinstance(other, DwiVolume)
            and self.shape == other.shape
            and self.scheme == other.scheme
            and _same(self.signals, other.signals)
            and _same(self.mask, other.mask)
        )


@dataclass(eq=False)
class TensorField:
    """Per-voxel tensors ``d = (D11, D22, D33, D12, D13, D23)`` in mm^2/s."""

    shape: GridShape
    d: np.ndarray
    fit_ok: np.ndarray
    mask: np.ndarray = None
    meta: dict = field(default_factory=dict)

    kind = "tensor"

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.float64)
        _check_grid(self.shape, self.d, (6,))
        self.fit_ok = np.asarray(self.fit_ok, dtype=bool)
        _check_grid(self.shape, self.fit_ok)
        self.mask = _full_mask(self.shape) if self.mask is None else np.asarray(self.mask, dtype=bool)
        _check_grid(self.shape, self.mask)

    @property
    def valid(self):
        return self.mask & self.fit_ok

    def matrices(self):
        """Full symmetric 3x3 matrices, shape ``(nx, ny, nz, 3, 3)``."""
        return vector_to_matrix(self.d)

    def __eq__(self, other):
        return (
            isinstance(other, TensorField)
            and self.shape == other.shape
            and _same(self.d, other.d)
            and _same(self.fit_ok, other.fit_ok)
            and _same(self.mask, other.mask)
        )


@dataclass(eq=False)
class DecisionMask:
    """Rejections over the tested voxels (``domain``) with the cutoff used."""

    shape: GridShape
    reject: np.ndarray
    domain: np.ndarray
    threshold: float = float("nan")
    pi0_hat: float = float("nan")
    meta: dict = field(default_factory=dict)

    kind = "decision"

    def __post_init__(self):
        self.reject = np.asarray(self.reject, dtype=bool)
        self.domain = np.asarray(self.domain, dtype=bool)
        _check_grid(self.shape, self.reject)
        _check_grid(self.shape, self.domain)
        if np.any(self.reject & ~self.domain):
            raise ValueError("rejections outside the tested domain")

    @property
    def n_rejected(self):
        return int(self.reject.sum())

    def __eq__(self, other):
        return (
            isinstance(other, DecisionMask)
            and self.shape == other.shape
            and _same(self.reject, other.reject)
            and _same(self.domain, other.domain)
            and _same(np.float64(self.threshold), np.float64(other.threshold))
            and _same(np.float64(self.pi0_hat), np.float64(other.pi0_hat))
        )


def vector_to_matrix(d):
    d = np.asarray(d, dtype=np.float64)
    m = np.empty(d.shape[:-1] + (3, 3))
    m[..., 0, 0], m[..., 1, 1], m[..., 2, 2] = d[..., 0], d[..., 1], d[..., 2]
    m[..., 0, 1] = m[..., 1, 0] = d[..., 3]
    m[..., 0, 2] = m[..., 2, 0] = d[..., 4]
    m[..., 1, 2] = m[..., 2, 1] = d[..., 5]
    return m


def matrix_to_vector(m):
    m = np.asarray(m, dtype=np.float64)
    return np.stack(
        [m[..., 0, 0], m[..., 1, 1], m[..., 2, 2], m[..., 0, 1], m[..., 0, 2], m[..., 1, 2]],
        axis=-1,
    )


# -- run-length masks ------------------------------------------------------


def mask_to_runs(mask):
    """Alternating run lengths of the x-fastest mask, starting with False."""
    flat = np.asarray(mask, dtype=bool).ravel(order="F")
    if flat.all():
        return "all"
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def runs_to_mask(runs, shape):
    n = shape.n_voxels
    if runs == "all":
        return np.ones(shape.dims, dtype=bool)
    runs = np.asarray(runs, dtype=np.int64)
    if np.any(runs < 0) or runs.sum() != n:
        raise VolumeFormatError(f"mask runs cover {runs.sum()} voxels, grid has {n}")
    values = (np.arange(runs.size) % 2).astype(bool)
    return np.repeat(values, runs).reshape(shape.dims, order="F")


# -- file IO ---------------------------------------------------------------


def _flat(arr, shape):
    """Grid array -> (N, ...) voxel-major, x-fastest."""
    trailing = arr.shape[3:]
    return np.ascontiguousarray(arr.reshape((shape.n_voxels,) + trailing, order="F"))


def _unflat(flat, shape):
    return flat.reshape(shape.dims + flat.shape[1:], order="F")


def _payload_arrays(vol):
    if isinstance(vol, ScalarVolume):
        return [("data", "<f8", vol.data)]
    if isinstance(vol, LabelVolume):
        return [("label", "|u1", vol.label), ("orientation_tag", "|u1", vol.orientation_tag)]
    if isinstance(vol, DwiVolume):
        return [("signals", "<f8", vol.signals)]
    if isinstance(vol, TensorField):
        return [("d", "<f8", vol.d), ("fit_ok", "|u1", vol.fit_ok)]
    if isinstance(vol, DecisionMask):
        return [("reject", "|u1", vol.reject)]
    raise TypeError(f"cannot write {type(vol).__name__}")


def write_volume(vol, path):
    """Write any volume container to ``path``."""
    shape = vol.shape
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": vol.kind,
        "grid": shape.to_dict(),
        "arrays": [],
        "meta": vol.meta,
    }
    blobs = []
    for name, dtype, arr in _payload_arrays(vol):
        flat = _flat(np.asarray(arr), shape).astype(dtype)
        header["arrays"].append({"name": name, "dtype": dtype, "width": int(np.prod(flat.shape[1:]))})
        blobs.append(flat.tobytes())
    if isinstance(vol, (ScalarVolume, DwiVolume, TensorField)):
        header["mask"] = mask_to_runs(vol.mask)
    if isinstance(vol, DwiVolume):
        header["scheme"] = vol.scheme.to_dict()
    if isinstance(vol, DecisionMask):
        header["domain"] = mask_to_runs(vol.domain)
        header["threshold"] = repr(float(vol.threshold))
        header["pi0_hat"] = repr(float(vol.pi0_hat))
    line = json.dumps(header, separators=(",", ":")).encode("ascii") + b"\n"
    with open(path, "wb") as fh:
        fh.write(line)
        for blob in blobs:
            fh.write(blob)


def read_header(path):
    with open(path, "rb") as fh:
        line = fh.readline()
    return _parse_header(line, path)


def _parse_header(line, path):
    try:
        header = json.loads(line.decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise VolumeFormatError(f"{path}: malformed header ({exc})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise VolumeFormatError(f"{path}: not a {FORMAT_NAME} file")
    for key in ("kind", "grid", "arrays"):
        if key not in header:
            raise VolumeFormatError(f"{path}: header missing '{key}'")
    return header


def read_volume(path):
    """Read a volume written by :func:`write_volume`."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise VolumeFormatError(f"{path}: no header line")
    header = _parse_header(raw[:nl], path)
    payload = memoryview(raw)[nl + 1 :]
    try:
        shape = GridShape.from_dict(header["grid"])
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"{path}: bad grid ({exc})") from None

    n = shape.n_voxels
    expected = sum(np.dtype(a["dtype"]).itemsize * a["width"] * n for a in header["arrays"])
    if len(payload) != expected:
        raise VolumeFormatError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    arrays = {}
    offset = 0
    for a in header["arrays"]:
        dt = np.dtype(a["dtype"])
        count = a["width"] * n
        flat = np.frombuffer(payload, dtype=dt, count=count, offset=offset)
        offset += count * dt.itemsize
        if a["width"] > 1:
            flat = flat.reshape(n, a["width"])
        arrays[a["name"]] = _unflat(flat.astype(dt.newbyteorder("=")), shape)

    kind = header["kind"]
    meta = header.get("meta", {})
    mask = runs_to_mask(header["mask"], shape) if "mask" in header else None
    if kind == "scalar":
        return ScalarVolume(shape, arrays["data"], mask, meta)
    if kind == "label":
        return LabelVolume(shape, arrays["label"], arrays["orientation_tag"], meta)
    if kind == "dwi":
        scheme = AcquisitionScheme.from_dict(header["scheme"])
        return DwiVolume(shape, scheme, arrays["signals"], mask, meta)
    if kind == "tensor":
        return TensorField(shape, arrays["d"], arrays["fit_ok"].astype(bool), mask, meta)
    if kind == "decision":
        domain = runs_to_mask(header["domain"], shape)
        return DecisionMask(
            shape,
            arrays["reject"].astype(bool),
            domain,
            float(header["threshold"]),
            float(header["pi0_hat"]),
            meta,
        )
    raise VolumeFormatError(f"{path}: unknown payload kind '{kind}'")
