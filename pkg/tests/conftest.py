import numpy as np
import pytest

from pint_stokes.mesh_fem import assemble_hierarchy, assemble_operators, build_hierarchy
from pint_stokes.system import cavity_wind


@pytest.fixture(scope="session")
def ops1():
    return assemble_operators(build_hierarchy(1, 1), 1, 1.0)


@pytest.fixture(scope="session")
def ops2():
    return assemble_operators(build_hierarchy(1, 2), 2, 1.0)


@pytest.fixture(scope="session")
def hier2():
    return assemble_hierarchy(1, 2, 1.0)


@pytest.fixture(scope="session")
def hier3():
    return assemble_hierarchy(1, 3, 1e-2)


@pytest.fixture(scope="session")
def oseen_hier2():
    return assemble_hierarchy(1, 2, 1e-2, cavity_wind)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
