"""Numerical core: monotone graphs, meshes, assembled forms and time steps."""

from app.core.forms import DiscreteSpace, assemble_space
from app.core.geometry import MeshPair, PairedField, two_triangle, unit_square
from app.core.monotone import GraphKind, GraphSpec, PerturbationKind, PerturbationSpec

__all__ = [
    "DiscreteSpace",
    "assemble_space",
    "MeshPair",
    "PairedField",
    "unit_square",
    "two_triangle",
    "GraphKind",
    "GraphSpec",
    "PerturbationKind",
    "PerturbationSpec",
]
