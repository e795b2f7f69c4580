"""Bulk/boundary meshes, paired nodal fields, the mean functional and projection."""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np

from app.core.exceptions import DimensionMismatch, InvalidMesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MeshPair:
    """P1 triangulation of Omega plus its boundary polygon Gamma.

    boundary_nodes lists, in loop order, the bulk index of every Gamma node
    (the trace map). Gamma edges join consecutive entries, closing the loop.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        triangles = np.array(self.triangles, dtype=np.int64)
        trace = np.array(self.boundary_nodes, dtype=np.int64)
        for arr in (nodes, triangles, trace):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", triangles)
        object.__setattr__(self, "boundary_nodes", trace)
        self._validate()

    def _validate(self) -> None:
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise InvalidMesh(f"nodes must be (n, 2), got {self.nodes.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise InvalidMesh(f"triangles must be (m, 3), got {self.triangles.shape}")
        if self.triangles.min() < 0 or self.triangles.max() >= self.n_bulk:
            raise InvalidMesh("triangle references a node that does not exist")
        if np.any(self.triangle_areas <= 0):
            raise InvalidMesh("degenerate triangle with zero area")

        trace = self.boundary_nodes
        if trace.size < 3:
            raise InvalidMesh("boundary loop needs at least three nodes")
        if np.unique(trace).size != trace.size:
            raise InvalidMesh("trace map is not injective")
        if trace.min() < 0 or trace.max() >= self.n_bulk:
            raise InvalidMesh("trace map points outside the bulk nodes")

        # Edges used by exactly one triangle form the topological boundary
        edges = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        unique, counts = np.unique(edges, axis=0, return_counts=True)
        topological = {tuple(e) for e in unique[counts == 1]}
        loop = {tuple(sorted(e)) for e in self.boundary_edges.tolist()}
        if loop != topological:
            raise InvalidMesh("boundary loop does not match the triangulation boundary")
        if np.any(self.edge_lengths <= 0):
            raise InvalidMesh("boundary edge of zero length")

    @property
    def n_bulk(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary_nodes.shape[0]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Gamma edges as pairs of bulk indices, in loop order."""
        return np.column_stack([self.boundary_nodes, np.roll(self.boundary_nodes, -1)])

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @property
    def area(self) -> float:
        return float(self.triangle_areas.sum())

    @property
    def perimeter(self) -> float:
        return float(self.edge_lengths.sum())

    @cached_property
    def bulk_weights(self) -> np.ndarray:
        """Row sums of the P1 bulk mass matrix: exact integrals of the hat functions."""
        w = np.zeros(self.n_bulk)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.triangle_areas / 3, 3))
        return w

    @cached_property
    def boundary_weights(self) -> np.ndarray:
        h = self.edge_lengths
        return 0.5 * (h + np.roll(h, 1))

    @cached_property
    def arclength(self) -> np.ndarray:
        """Arc-length parameter s of each Gamma node, starting at 0."""
        return np.concatenate([[0.0], np.cumsum(self.edge_lengths)[:-1]])


@dataclass(frozen=True, eq=False)
class PairedField:
    """Nodal values on Omega and on Gamma.

    conforming=True marks a field of V, whose boundary values are the trace of the
    bulk values; untagged fields are elements of H with independent components.
    """

    bulk: np.ndarray
    boundary: np.ndarray
    conforming: bool = field(default=False)

    def __post_init__(self):
        bulk = np.array(self.bulk, dtype=float)
        boundary = np.array(self.boundary, dtype=float)
        bulk.setflags(write=False)
        boundary.setflags(write=False)
        object.__setattr__(self, "bulk", bulk)
        object.__setattr__(self, "boundary", boundary)

    def _combine(self, other: "PairedField", sign: float) -> "PairedField":
        return PairedField(
            self.bulk + sign * other.bulk,
            self.boundary + sign * other.boundary,
            conforming=self.conforming and other.conforming,
        )

    def __add__(self, other: "PairedField") -> "PairedField":
        return self._combine(other, 1.0)

    def __sub__(self, other: "PairedField") -> "PairedField":
        return self._combine(other, -1.0)

    def __mul__(self, scalar: float) -> "PairedField":
        return PairedField(scalar * self.bulk, scalar * self.boundary, self.conforming)

    __rmul__ = __mul__

    def __neg__(self) -> "PairedField":
        return self * -1.0

    def map(self, fn) -> "PairedField":
        """Apply a nodewise function to both components; conformity is preserved."""
        return PairedField(fn(self.bulk), fn(self.boundary), self.conforming)

    def max_abs(self) -> float:
        return float(max(np.abs(self.bulk).max(initial=0.0), np.abs(self.boundary).max(initial=0.0)))

    @classmethod
    def constant(cls, mesh: MeshPair, value: float) -> "PairedField":
        return cls(np.full(mesh.n_bulk, value), np.full(mesh.n_boundary, value), conforming=True)

    @classmethod
    def zeros(cls, mesh: MeshPair) -> "PairedField":
        return cls.constant(mesh, 0.0)


def check_dimensions(mesh: MeshPair, z: PairedField) -> None:
    if z.bulk.shape != (mesh.n_bulk,) or z.boundary.shape != (mesh.n_boundary,):
        raise DimensionMismatch(
            f"field sizes ({z.bulk.size}, {z.boundary.size}) do not match mesh "
            f"({mesh.n_bulk}, {mesh.n_boundary})"
        )


def mean(mesh: MeshPair, z: PairedField) -> float:
    """m(z) = (int_Omega z + int_Gamma z_Gamma) / (|Omega| + |Gamma|)."""
    check_dimensions(mesh, z)
    total = mesh.bulk_weights @ z.bulk + mesh.boundary_weights @ z.boundary
    return float(total / (mesh.area + mesh.perimeter))


def project_zero_mean(mesh: MeshPair, z: PairedField) -> PairedField:
    """P z = z - m(z) 1."""
    m = mean(mesh, z)
    return PairedField(z.bulk - m, z.boundary - m, z.conforming)


def trace_conform(mesh: MeshPair, bulk_values: np.ndarray) -> PairedField:
    bulk = np.asarray(bulk_values, dtype=float)
    if bulk.shape != (mesh.n_bulk,):
        raise DimensionMismatch(f"bulk vector has {bulk.size} entries, mesh has {mesh.n_bulk}")
    return PairedField(bulk, bulk[mesh.boundary_nodes], conforming=True)


def is_conforming(mesh: MeshPair, z: PairedField) -> bool:
    return bool(np.array_equal(z.boundary, z.bulk[mesh.boundary_nodes]))


def unit_square(n: int) -> MeshPair:
    """Structured right-triangle mesh of [0, 1]^2 with n x n nodes."""
    if n < 2:
        raise InvalidMesh(f"unit square needs at least 2 nodes per side, got {n}")
    x = np.linspace(0.0, 1.0, n)
    xx, yy = np.meshgrid(x, x)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1))
    k = (j * n + i).ravel()
    lower = np.column_stack([k, k + 1, k + n + 1])
    upper = np.column_stack([k, k + n + 1, k + n])
    triangles = np.vstack([lower, upper])

    # Counterclockwise from the origin
    bottom = np.arange(n)
    right = np.arange(1, n) * n + (n - 1)
    top = (n - 1) * n + np.arange(n - 2, -1, -1)
    left = np.arange(n - 2, 0, -1) * n
    boundary = np.concatenate([bottom, right, top, left])

    mesh = MeshPair(nodes, triangles, boundary)
    logger.debug(f"Built unit square mesh: {mesh.n_bulk} bulk nodes, {mesh.n_boundary} boundary nodes")
    return mesh


def two_triangle() -> MeshPair:
    """Unit square split along its diagonal: the smallest mesh with a closed boundary loop."""
    nodes = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    triangles = [(0, 1, 2), (0, 2, 3)]
    return MeshPair(nodes, triangles, [0, 1, 2, 3])


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dump_mesh(mesh: MeshPair, path: Union[str, Path]) -> Path:
    """Plain-text listing of nodes, triangles and the boundary loop."""
    path = Path(path)
    lines = [f"# nodes {mesh.n_bulk}"]
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in mesh.nodes]
    lines.append(f"# triangles {mesh.triangles.shape[0]}")
    lines += [" ".join(str(v) for v in tri) for tri in mesh.triangles]
    lines.append(f"# boundary {mesh.n_boundary}")
    lines += [str(v) for v in mesh.boundary_nodes]
    path.write_text("\n".join(lines) + "\n")
    return path


def dump_field(mesh: MeshPair, z: PairedField, bulk_path: Union[str, Path], boundary_path: Union[str, Path]) -> None:
    """Write `x y value` for bulk nodes and `s value` for boundary nodes."""
    check_dimensions(mesh, z)
    bulk_lines = [
        f"{_fmt(x)} {_fmt(y)} {_fmt(v)}" for (x, y), v in zip(mesh.nodes, z.bulk)
    ]
    boundary_lines = [f"{_fmt(s)} {_fmt(v)}" for s, v in zip(mesh.arclength, z.boundary)]
    Path(bulk_path).write_text("\n".join(bulk_lines) + "\n")
    Path(boundary_path).write_text("\n".join(boundary_lines) + "\n")
