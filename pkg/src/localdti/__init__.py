"""Neighbourhood-based tests for anisotropic diffusion in DTI volumes."""

__version__ = "0.1.0"

from .acquisition import AcquisitionScheme, default_scheme, load_scheme, save_scheme
from .eigen import eigen3, eigh3, fa, ra, scalar_maps
from .evaluation import confusion, isolated_counts, qq_chi2, roc
from .fdr import FdrConfig, decide, fdr_threshold, smooth_p, storey_pi0
from .localtest import (
    TestConfig,
    anova_components,
    chi_k,
    correction_constant,
    estimate_null_set,
    u_statistic,
)
from .localtest import test_volume as run_local_test
from .neighborhood import NeighborhoodConfig, select_neighbors
from .phantom import PhantomSpec, default_phantom, isotropic_phantom, simulate, true_tensor
from .tensor import fit_volume, fit_voxel
from .volume import (
    DecisionMask,
    DwiVolume,
    GridShape,
    LabelVolume,
    ScalarVolume,
    TensorField,
    linear_index,
    read_volume,
    write_volume,
)
