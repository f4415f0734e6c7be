import numpy as np
import pytest

from localdti import localtest as lt
from localdti.acquisition import default_scheme
from localdti.eigen import scalar_maps
from localdti.phantom import default_phantom, simulate
from localdti.tensor import fit_volume
from localdti.volume import GridShape


@pytest.fixture
def rng():
    return np.random.default_rng(20111)


@pytest.fixture(scope="session")
def scheme():
    return default_scheme()


@pytest.fixture(scope="session")
def small_run():
    """SNR 10 phantom on a 64 x 64 x 8 grid, pushed through the local test."""
    spec = default_phantom(GridShape(64, 64, 8), snr=10.0)
    dwi = simulate(spec, default_scheme(), seed=5)
    tensors = fit_volume(dwi)
    maps = scalar_maps(tensors)
    result = lt.test_volume(tensors, maps.lambdas)
    return {"spec": spec, "dwi": dwi, "tensors": tensors, "maps": maps, "result": result}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
