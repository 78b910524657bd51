import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent / "flows"))

from fem import EllipticOperator, build_mesh  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end reconstruction runs on finer meshes")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mesh3():
    return build_mesh(3, 3)


@pytest.fixture
def operator3(mesh3):
    return EllipticOperator.from_mesh(mesh3, 1.0)


@pytest.fixture
def lumped3(mesh3):
    return EllipticOperator.from_mesh(mesh3, 1.0, mass_lumping=True)


@pytest.fixture
def lumped4():
    return EllipticOperator.from_mesh(build_mesh(4, 4), 1.0, mass_lumping=True)


@pytest.fixture
def unconstrained_control():
    """u with A_h u = y_delta, i.e. mass^-1 (K + cM) y_delta."""
    def solve(operator, y_delta):
        return np.linalg.solve(operator.mass.toarray(), operator.system @ y_delta)
    return solve
