"""Per-step energy ledger and the uniform-bound accumulators of a run."""

import logging
from typing import Optional

import numpy as np

from app.core import monotone
from app.core.forms import DiscreteSpace, dual_norm, h_inner, h_norm, v_norm
from app.core.geometry import PairedField, mean
from app.core.monotone import GraphKind
from app.core.stepper import State
from app.schemas.config import Problem, SolveConfig
from app.schemas.report import BoundLedger, StepRecord

logger = logging.getLogger(__name__)

LEDGER_RTOL = 1e-9


def mushy_fractions(space: DiscreteSpace, u: PairedField, L: float, tol: float):
    """Node masks of {0 <= u <= L} and their bulk and boundary measure fractions."""
    mesh = space.mesh
    bulk_mask = (u.bulk >= -tol) & (u.bulk <= L + tol)
    boundary_mask = (u.boundary >= -tol) & (u.boundary <= L + tol)
    bulk_fraction = float(mesh.bulk_weights[bulk_mask].sum() / mesh.area)
    boundary_fraction = float(mesh.boundary_weights[boundary_mask].sum() / mesh.perimeter)
    return bulk_mask, boundary_mask, bulk_fraction, boundary_fraction


class LedgerTracker:
    """Tracks

        eps |v|_V0^2 + 2 Phi(u) + sum dt (2 lam |v'|_H^2 + |v'|_V0*^2)
            <= (same at t = 0) + 2 sum dt (eps^2 |v|_V0^2 + |f|_V0^2)

    with Phi the nodal integral of the Moreau envelope, together with the
    quantities of the uniform a priori bounds. The inequality is exact for
    lumped spaces on meshes whose stiffness has nonpositive off-diagonals.
    """

    def __init__(self, space: DiscreteSpace, config: SolveConfig):
        self.space = space
        self.config = config
        self.graph = config.graph_spec
        self.pert = config.perturbation_spec
        # the limit problem carries no interface energy
        self.eps = 0.0 if config.problem == Problem.STEFAN_LIMIT else config.epsilon
        self.lam = config.lam
        self.records = []
        self.violations = 0
        self._initial = 0.0
        self._budget = 0.0
        self._dissipation = 0.0
        self._sup_dual = 0.0
        self._envelope_integral = 0.0
        self._sup_energy = 0.0
        self._projected_mu = 0.0
        self._sup_u = 0.0
        self._beta_l1 = 0.0
        self._mean_mu = 0.0
        self._mu_v = 0.0
        self._xi_h = 0.0

    def _envelope_values(self, r: np.ndarray) -> np.ndarray:
        if self.config.problem == Problem.REGULARIZED_CH:
            return np.asarray(monotone.moreau(self.graph, r, self.lam))
        return np.asarray(monotone.beta_hat(self.graph, r))

    def _nodal_integral(self, z: PairedField) -> float:
        mesh = self.space.mesh
        return float(mesh.bulk_weights @ z.bulk + mesh.boundary_weights @ z.boundary)

    def envelope(self, u: PairedField) -> float:
        return self._nodal_integral(u.map(self._envelope_values))

    def _v0_sq(self, z: PairedField) -> float:
        return float(z.bulk @ (self.space.stiffness @ z.bulk))

    def free_energy(self, state: State, f: Optional[PairedField]) -> float:
        u = state.u
        well = self.envelope(u) + self.eps * self._nodal_integral(
            u.map(lambda r: np.asarray(monotone.pi_hat(self.pert, r)))
        )
        forcing = h_inner(self.space, f, u) if f is not None else 0.0
        return 0.5 * self.eps * self._v0_sq(state.v) + well - forcing

    def _mushy(self, u: PairedField):
        if self.graph.kind != GraphKind.STEFAN:
            return None, None
        _, _, bulk, boundary = mushy_fractions(self.space, u, self.graph.L, self.config.newton_tol)
        return bulk, boundary

    def _record(self, state: State, lhs: float, rhs: float, f: Optional[PairedField]) -> StepRecord:
        m = mean(self.space.mesh, state.u)
        mushy_bulk, mushy_boundary = self._mushy(state.u)
        return StepRecord(
            t=state.t,
            step=state.step,
            mass=m,
            mass_drift=abs(m - state.m0),
            v0_energy=self._v0_sq(state.v),
            envelope=self.envelope(state.u),
            dissipation=self._dissipation,
            ledger_lhs=lhs,
            ledger_rhs=rhs,
            free_energy=self.free_energy(state, f),
            newton_iterations=state.newton_iterations,
            residual=state.residual,
            mushy_bulk=mushy_bulk,
            mushy_boundary=mushy_boundary,
        )

    def _sup_terms(self, state: State) -> None:
        v = state.v
        dual = dual_norm(self.space, v) ** 2
        self._sup_dual = max(self._sup_dual, self.lam * h_norm(self.space, v) ** 2 + dual)
        energy = self.eps * self._v0_sq(v) + 2 * self.envelope(state.u)
        self._sup_energy = max(self._sup_energy, energy)
        self._sup_u = max(self._sup_u, h_norm(self.space, state.u) ** 2)

    def start(self, state: State, f0: Optional[PairedField] = None) -> StepRecord:
        self._initial = self.eps * self._v0_sq(state.v) + 2 * self.envelope(state.u)
        self._sup_terms(state)
        record = self._record(state, self._initial, self._initial, f0)
        self.records.append(record)
        return record

    def update(self, state: State) -> StepRecord:
        dt = state.dt
        space = self.space
        delta = state.delta
        self._dissipation += dt * (
            2 * self.lam * h_norm(space, delta) ** 2 + dual_norm(space, delta) ** 2
        )
        v0_sq = self._v0_sq(state.v)
        self._budget += 2 * dt * (self.eps**2 * v0_sq + self._v0_sq(state.f))

        energy = self.eps * v0_sq + 2 * self.envelope(state.u)
        lhs = energy + self._dissipation
        rhs = self._initial + self._budget
        if lhs > rhs + LEDGER_RTOL * max(1.0, abs(rhs)):
            self.violations += 1
            logger.debug(f"Energy ledger violated at t={state.t:.6g}: {lhs:.6e} > {rhs:.6e}")

        self._sup_terms(state)
        self._envelope_integral += dt * (0.5 * self.eps * v0_sq + 2 * self.envelope(state.u))
        mu = state.mu
        self._projected_mu += dt * self._v0_sq(mu)
        self._beta_l1 += dt * self._nodal_integral(state.xi.map(np.abs)) ** 2
        self._mean_mu += dt * mean(space.mesh, mu) ** 2
        self._mu_v += dt * v_norm(space, mu) ** 2
        self._xi_h += dt * h_norm(space, state.xi) ** 2

        record = self._record(state, lhs, rhs, state.f)
        self.records.append(record)
        return record

    def ledger(self) -> BoundLedger:
        return BoundLedger(
            epsilon=self.eps,
            lam=self.lam,
            sup_dual=self._sup_dual,
            envelope_integral=self._envelope_integral,
            sup_energy=self._sup_energy,
            dissipation=self._dissipation,
            projected_mu=self._projected_mu,
            sup_u=self._sup_u,
            beta_l1=self._beta_l1,
            mean_mu=self._mean_mu,
            mu_v=self._mu_v,
            xi_h=self._xi_h,
            ledger_violations=self.violations,
        )
