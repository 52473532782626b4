import numpy as np
import pytest

from diffusepde.grids import Domain, GridFunction
from diffusepde.tensors import Decomposition


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def diag_dec():
    """Degenerate two-component factor family: per-component second
    derivative along the first axis only."""
    return Decomposition(
        (np.diag([1.0, 0.0]), np.diag([0.0, 1.0])),
        (np.diag([1.0, 0.0]), np.diag([1.0, 0.0])),
    )


@pytest.fixture
def laplacian_dec():
    return Decomposition((np.eye(2), np.zeros((2, 2))),
                         (np.eye(2), np.zeros((2, 2))))


@pytest.fixture
def square32():
    return Domain.unit_square(32)


def trig_field(domain, modes, components=1):
    """Boundary-vanishing sine polynomial with prescribed mode coefficients."""
    x = domain.node_coords()
    vals = np.zeros(domain.shape + (components,))
    for (a, b), coef in modes.items():
        basis = np.sin(a * np.pi * x[..., 0]) * np.sin(b * np.pi * x[..., 1])
        vals += np.asarray(coef) * basis[..., None]
    return GridFunction(domain, vals)
