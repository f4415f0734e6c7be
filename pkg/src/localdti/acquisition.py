"""Acquisition schemes: b-value plus unit gradient directions."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# 12 directions from an electrostatic-repulsion optimisation over antipodal
# point pairs (24 charges on the sphere), rotated so the first direction is z.
ELECTROSTATIC_12 = (
    (0.000000000000000, 0.000000000000000, 1.000000000000000),
    (0.999992316118180, 0.000000000000000, 0.003920166399278),
    (0.175759191044136, -0.646249413300942, 0.742610532225136),
    (0.644448798712084, 0.241205828471029, 0.725606983256196),
    (-0.756794860503175, 0.091031007764103, 0.647282700789564),
    (-0.291749605159151, 0.602835302283737, 0.742611450362810),
    (0.003376910229829, -0.990538101884711, 0.137196447446478),
    (-0.511044988367165, -0.565553547950480, 0.647288347079899),
    (0.754242135565169, 0.656584709210185, 0.003914149903944),
    (0.286902159941682, 0.819414316451276, 0.496233139376529),
    (-0.647825764311561, 0.749332330733918, 0.137196345472522),
    (0.754411211156317, -0.429670137214418, 0.496233108193924),
)

UNIT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AcquisitionScheme:
    """Diffusion weighting ``b`` (s/mm^2) and ``r`` unit gradients.

    A single b=0 reference acquisition is implied; signal vectors are laid
    out as ``(phi_0, phi_1, ..., phi_r)``.
    """

    b: float
    gradients: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gradients, dtype=np.float64)
        if g.ndim != 2 or g.shape[1] != 3:
            raise ValueError(f"gradients must have shape (r, 3), got {g.shape}")
        if g.shape[0] < 6:
            raise ValueError(f"need at least 6 gradients, got {g.shape[0]}")
        norms = np.linalg.norm(g, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ValueError("gradient directions must be unit vectors")
        if not self.b > 0:
            raise ValueError("b must be positive")
        g.setflags(write=False)
        object.__setattr__(self, "gradients", g)
        object.__setattr__(self, "b", float(self.b))

    @property
    def r(self):
        return self.gradients.shape[0]

    def __eq__(self, other):
        if not isinstance(other, AcquisitionScheme):
            return NotImplemented
        return self.b == other.b and np.array_equal(self.gradients, other.gradients)

    def to_dict(self):
        return {"b": self.b, "gradients": self.gradients.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(b=d["b"], gradients=np.asarray(d["gradients"], dtype=np.float64))


def default_scheme(b=1000.0):
    g = np.array(ELECTROSTATIC_12, dtype=np.float64)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return AcquisitionScheme(b=b, gradients=g)


def load_scheme(path):
    """Read a scheme from a JSON file with keys ``b`` and ``gradients``.

    The design matrix is checked for full rank here, so a bad scheme fails at
    load time rather than mid-fit.
    """
    with open(path) as fh:
        scheme = AcquisitionScheme.from_dict(json.load(fh))
    from .tensor import design_matrix

    if np.linalg.matrix_rank(design_matrix(scheme.gradients)) < 6:
        raise ValueError(f"{path}: gradient design has rank < 6")
    return scheme


def save_scheme(scheme, path):
    Path(path).write_text(json.dumps(scheme.to_dict(), indent=2))
