"""Shared meshes, spaces and random generators."""

import numpy as np
import pytest

from app.core.forms import assemble_space
from app.core.geometry import two_triangle, unit_square
from app.core.monotone import GraphKind, GraphSpec, PerturbationKind, PerturbationSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def tiny_mesh():
    return two_triangle()


@pytest.fixture(scope="session")
def square5():
    return unit_square(5)


@pytest.fixture(scope="session")
def square9():
    return unit_square(9)


@pytest.fixture(scope="session")
def tiny_space(tiny_mesh):
    return assemble_space(tiny_mesh)


@pytest.fixture(scope="session")
def space9(square9):
    return assemble_space(square9)


@pytest.fixture(scope="session")
def lumped9(square9):
    return assemble_space(square9, lumped=True)


@pytest.fixture(scope="session")
def stefan_graph():
    return GraphSpec(kind=GraphKind.STEFAN, k_s=2.0, k_l=0.5, L=1.5)


@pytest.fixture(scope="session")
def all_graphs(stefan_graph):
    return [stefan_graph, GraphSpec(kind=GraphKind.CUBIC), GraphSpec(kind=GraphKind.INDICATOR)]


@pytest.fixture(scope="session")
def all_perturbations():
    return [PerturbationSpec(kind=k, L=1.5) for k in PerturbationKind]
