"""Assembled bilinear forms on the paired P1 space and the operators built from them.

Conforming fields (the discrete V) are stored by their bulk nodal values; the
boundary values are the trace. The stiffness of a(u, z) on V is

    K = K_Omega + T^T K_Gamma T

where T picks boundary nodes out of the bulk vector and K_Gamma is the periodic
1D P1 stiffness along the arc length of Gamma.
"""

import logging
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, cg, eigsh, splu

from app.config import get_settings
from app.core.exceptions import (
    IncompatibleRHS,
    NonConforming,
    NonZeroMean,
    SolverFailure,
)
from app.core.geometry import MeshPair, PairedField, check_dimensions, is_conforming, mean, trace_conform

logger = logging.getLogger(__name__)
settings = get_settings()

# Sign of the Gamma contribution to the stiffness; tests flip it to check that the
# verification suite notices a broken boundary operator.
BOUNDARY_STIFFNESS_SIGN = 1.0


def _bulk_matrices(mesh: MeshPair):
    """P1 stiffness and consistent mass on Omega, assembled in coo format."""
    tri = mesh.triangles
    p = mesh.nodes[tri]
    # e_i is the edge opposite vertex i
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    area = mesh.triangle_areas
    k_el = np.einsum("eik,ejk->eij", e, e) / (4 * area)[:, None, None]
    m_ref = (np.ones((3, 3)) + np.eye(3)) / 12
    m_el = area[:, None, None] * m_ref

    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    shape = (mesh.n_bulk, mesh.n_bulk)
    stiffness = sparse.coo_matrix((k_el.ravel(), (rows, cols)), shape=shape).tocsr()
    mass = sparse.coo_matrix((m_el.ravel(), (rows, cols)), shape=shape).tocsr()
    return stiffness, mass


def _boundary_matrices(mesh: MeshPair):
    """Periodic 1D P1 stiffness and mass along the Gamma loop (Gamma-node indexing)."""
    n = mesh.n_boundary
    i = np.arange(n)
    j = np.roll(i, -1)
    h = mesh.edge_lengths
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    k_vals = np.concatenate([1 / h, 1 / h, -1 / h, -1 / h])
    m_vals = np.concatenate([h / 3, h / 3, h / 6, h / 6])
    stiffness = sparse.coo_matrix((k_vals, (rows, cols)), shape=(n, n)).tocsr()
    mass = sparse.coo_matrix((m_vals, (rows, cols)), shape=(n, n)).tocsr()
    return stiffness, mass


@dataclass(eq=False)
class DiscreteSpace:
    """Assembled operators for one mesh. Treat as immutable after assembly."""

    mesh: MeshPair
    stiffness_bulk: sparse.csr_matrix
    stiffness_boundary: sparse.csr_matrix
    mass_bulk: sparse.csr_matrix
    mass_boundary: sparse.csr_matrix
    trace: sparse.csr_matrix
    lumped: bool = False
    solver: str = "direct"
    # SuperLU factors are shared by sweep workers
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @cached_property
    def stiffness(self) -> sparse.csr_matrix:
        boundary = self.trace.T @ self.stiffness_boundary @ self.trace
        return (self.stiffness_bulk + BOUNDARY_STIFFNESS_SIGN * boundary).tocsr()

    @cached_property
    def mass(self) -> sparse.csr_matrix:
        """Gram matrix of the H inner product restricted to conforming fields."""
        return (self.mass_bulk + self.trace.T @ self.mass_boundary @ self.trace).tocsr()

    @cached_property
    def weights(self) -> np.ndarray:
        """Constraint vector 1^T M: integral weights of the conforming hat functions."""
        return np.asarray(self.mass.sum(axis=0)).ravel()

    @cached_property
    def _saddle_lu(self):
        c = sparse.csr_matrix(self.weights[None, :])
        kkt = sparse.bmat([[self.stiffness, c.T], [c, None]], format="csc")
        logger.debug(f"Factorizing constrained stiffness of size {kkt.shape[0]}")
        try:
            return splu(kkt)
        except RuntimeError as e:
            raise SolverFailure(f"constrained stiffness is singular: {e}") from e

    @cached_property
    def _mass_lu(self):
        return splu(self.mass.tocsc())

    @cached_property
    def poincare(self) -> float:
        return _poincare(self)

    def prepare(self) -> "DiscreteSpace":
        """Populate the lazily assembled operators and factorizations."""
        for name in ("stiffness", "mass", "weights", "poincare"):
            getattr(self, name)
        if self.solver == "direct":
            getattr(self, "_saddle_lu")
        if not self.lumped:
            getattr(self, "_mass_lu")
        return self

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        if self.lumped:
            return rhs / self.mass.diagonal()
        with self._lock:
            return self._mass_lu.solve(rhs)

    def solve_constrained(self, rhs: np.ndarray) -> np.ndarray:
        """Zero-mean x with a(x, w) = <rhs, w> for all conforming w (rhs compatible)."""
        if self.solver == "cg":
            return self._solve_cg(rhs)
        n = self.mesh.n_bulk
        with self._lock:
            sol = self._saddle_lu.solve(np.concatenate([rhs, [0.0]]))
        if not np.all(np.isfinite(sol)):
            raise SolverFailure("constrained stiffness solve produced non-finite values")
        return sol[:n]

    def _solve_cg(self, rhs: np.ndarray) -> np.ndarray:
        c = self.weights
        # remove the round-off component along the constants before iterating
        rhs = rhs - c * (rhs.sum() / c.sum())
        x, info = cg(self.stiffness, rhs, rtol=settings.iterative_rtol, atol=0.0, maxiter=10 * rhs.size)
        if info != 0:
            raise SolverFailure(f"conjugate gradients did not converge (info={info})")
        return x - (c @ x) / c.sum()


def assemble_space(mesh: MeshPair, lumped: bool = False, solver: str = None) -> DiscreteSpace:
    solver = solver or settings.linear_solver
    if solver not in ("direct", "cg"):
        raise ValueError(f"unknown linear solver {solver!r}")
    k_bulk, m_bulk = _bulk_matrices(mesh)
    k_gamma, m_gamma = _boundary_matrices(mesh)
    if lumped:
        m_bulk = sparse.diags(mesh.bulk_weights).tocsr()
        m_gamma = sparse.diags(mesh.boundary_weights).tocsr()
    trace = sparse.csr_matrix(
        (np.ones(mesh.n_boundary), (np.arange(mesh.n_boundary), mesh.boundary_nodes)),
        shape=(mesh.n_boundary, mesh.n_bulk),
    )
    space = DiscreteSpace(
        mesh=mesh,
        stiffness_bulk=k_bulk,
        stiffness_boundary=k_gamma,
        mass_bulk=m_bulk,
        mass_boundary=m_gamma,
        trace=trace,
        lumped=lumped,
        solver=solver,
    )
    logger.debug(
        f"Assembled space: {mesh.n_bulk} bulk / {mesh.n_boundary} boundary nodes, "
        f"lumped={lumped}, solver={solver}"
    )
    return space


def _require_conforming(space: DiscreteSpace, z: PairedField) -> None:
    check_dimensions(space.mesh, z)
    if not (z.conforming or is_conforming(space.mesh, z)):
        raise NonConforming("operation on V needs a conforming field")


def _require_zero_mean(space: DiscreteSpace, z: PairedField) -> None:
    m = mean(space.mesh, z)
    if abs(m) > settings.mean_tol * max(1.0, z.max_abs()):
        raise NonZeroMean(f"field has mean {m:.3e}, expected 0")


def embed(space: DiscreteSpace, z: PairedField) -> np.ndarray:
    """Dual vector w -> (z, w)_H acting on conforming w."""
    check_dimensions(space.mesh, z)
    return space.mass_bulk @ z.bulk + space.trace.T @ (space.mass_boundary @ z.boundary)


def h_inner(space: DiscreteSpace, z: PairedField, w: PairedField) -> float:
    check_dimensions(space.mesh, z)
    check_dimensions(space.mesh, w)
    return float(z.bulk @ (space.mass_bulk @ w.bulk) + z.boundary @ (space.mass_boundary @ w.boundary))


def h_norm(space: DiscreteSpace, z: PairedField) -> float:
    return float(np.sqrt(max(h_inner(space, z, z), 0.0)))


def a_form(space: DiscreteSpace, z: PairedField, w: PairedField) -> float:
    _require_conforming(space, z)
    _require_conforming(space, w)
    return float(z.bulk @ (space.stiffness @ w.bulk))


def v0_norm(space: DiscreteSpace, z: PairedField) -> float:
    return float(np.sqrt(max(a_form(space, z, z), 0.0)))


def v_norm(space: DiscreteSpace, z: PairedField) -> float:
    return float(np.sqrt(h_norm(space, z) ** 2 + v0_norm(space, z) ** 2))


def phi(space: DiscreteSpace, z: PairedField) -> float:
    """phi(z) = a(z, z) / 2."""
    return 0.5 * a_form(space, z, z)


def apply_F(space: DiscreteSpace, z: PairedField) -> np.ndarray:
    """Duality map <F z, w> = a(z, w) on zero-mean conforming fields."""
    _require_conforming(space, z)
    _require_zero_mean(space, z)
    return space.stiffness @ z.bulk


def invert_F(space: DiscreteSpace, rhs: np.ndarray) -> PairedField:
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (space.mesh.n_bulk,):
        raise IncompatibleRHS(f"dual vector has {rhs.size} entries, expected {space.mesh.n_bulk}")
    scale = np.abs(rhs).sum()
    if scale == 0.0:
        return PairedField.zeros(space.mesh)
    if abs(rhs.sum()) > settings.compatibility_tol * scale:
        raise IncompatibleRHS(f"rhs action on constants is {rhs.sum():.3e}")
    return trace_conform(space.mesh, space.solve_constrained(rhs))


def dual_inner(space: DiscreteSpace, z: PairedField, w: PairedField) -> float:
    """(z, w) in V0* through the H embedding: <z, F^{-1} w>."""
    _require_zero_mean(space, z)
    _require_zero_mean(space, w)
    x = invert_F(space, embed(space, w))
    return float(embed(space, z) @ x.bulk)


def dual_norm(space: DiscreteSpace, z: PairedField) -> float:
    return float(np.sqrt(max(dual_inner(space, z, z), 0.0)))


def apply_subdiff_phi(space: DiscreteSpace, z: PairedField) -> PairedField:
    """Conforming y with (y, w)_H = a(z, w) for every conforming w."""
    _require_conforming(space, z)
    _require_zero_mean(space, z)
    y = space.solve_mass(space.stiffness @ z.bulk)
    if not np.all(np.isfinite(y)):
        raise SolverFailure("mass solve produced non-finite values")
    return trace_conform(space.mesh, y)


def _poincare(space: DiscreteSpace) -> float:
    stiffness = space.stiffness
    v_matrix = (space.mass + stiffness).tocsc()
    if space.mesh.n_bulk <= settings.dense_eigen_max_nodes:
        try:
            values = scipy.linalg.eigh(
                stiffness.toarray(), v_matrix.toarray(), eigvals_only=True, subset_by_index=[0, 1]
            )
        except np.linalg.LinAlgError as e:
            raise SolverFailure(f"generalized eigenproblem failed: {e}") from e
    else:
        try:
            values = eigsh(
                stiffness.tocsc(), k=2, M=v_matrix, sigma=-0.5, which="LM", return_eigenvectors=False
            )
        except (ArpackNoConvergence, RuntimeError) as e:
            raise SolverFailure(f"eigensolver did not converge: {e}") from e
    # the smallest eigenvalue belongs to the constants; B-orthogonality to them is m(z) = 0
    c_p = float(np.sort(values)[1])
    if not c_p > 0:
        raise SolverFailure(f"non-positive Poincare constant {c_p:.3e}")
    logger.debug(f"Poincare constant c_p = {c_p:.6g}")
    return c_p


def poincare_constant(space: DiscreteSpace) -> float:
    """Largest c_p with c_p |z|_V^2 <= |z|_V0^2 on zero-mean conforming fields."""
    return space.poincare


def lift_source(space: DiscreteSpace, g: PairedField) -> PairedField:
    """Zero-mean conforming f with a(f, z) = (g, z)_H."""
    check_dimensions(space.mesh, g)
    _require_zero_mean(space, g)
    return invert_F(space, embed(space, g))


def operator_stats(space: DiscreteSpace) -> Dict[str, Any]:
    mesh = space.mesh
    return {
        "n_bulk": mesh.n_bulk,
        "n_boundary": mesh.n_boundary,
        "n_triangles": int(mesh.triangles.shape[0]),
        "stiffness_nnz": int(space.stiffness.nnz),
        "area": mesh.area,
        "perimeter": mesh.perimeter,
        "poincare_constant": space.poincare,
        "lumped": space.lumped,
        "solver": space.solver,
    }
