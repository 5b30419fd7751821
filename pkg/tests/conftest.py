import math

import pytest

from calcwave import kernels
from calcwave.mesh import generate_geometry
from calcwave.stepper import Discretization

BACKENDS = list(kernels.available_backends())


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per importable kernel backend."""
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture(scope="session")
def geom16():
    return generate_geometry(1.0, 2.0, math.pi / 16)


@pytest.fixture(scope="session")
def disc8():
    return Discretization.from_geometry(1.0, 2.0, math.pi / 8)


@pytest.fixture(scope="session")
def disc16(geom16):
    return Discretization.build(*geom16)
