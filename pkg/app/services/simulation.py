"""Time loop: steps, rejected-step halving and ledger bookkeeping."""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

from tenacity import RetryCallState, Retrying, retry_if_exception_type, stop_after_attempt

from app.config import get_settings
from app.core.exceptions import SolverFailure, StepRejected
from app.core.forms import DiscreteSpace, lift_source
from app.core.geometry import PairedField
from app.core.monotone import GraphSpec, certify_interiority
from app.core.stepper import State, advance, initial_state
from app.schemas.config import Problem, SolveConfig
from app.schemas.report import BoundLedger, StepRecord
from app.services.ledger import LedgerTracker
from app.services.sources import SourceField

logger = logging.getLogger(__name__)
settings = get_settings()


@dataclass
class RunResult:
    """States at the nominal time levels n * dt plus every accepted (sub)step record."""

    states: List[State] = field(default_factory=list)
    records: List[StepRecord] = field(default_factory=list)
    ledger: Optional[BoundLedger] = None
    rejected_steps: int = 0
    graph: Optional[GraphSpec] = None  # with the certified GMS constants for m0

    @property
    def final(self) -> State:
        return self.states[-1]

    @property
    def max_mass_drift(self) -> float:
        return max((r.mass_drift for r in self.records), default=0.0)


class SimulationService:
    """Integrates one SolveConfig on a fixed space."""

    def __init__(self, space: DiscreteSpace, config: SolveConfig, source: SourceField):
        self.space = space
        self.config = config
        self.source = source
        self.max_halvings = settings.max_halvings
        self.rejected = 0

    def source_slice(self, t: float) -> PairedField:
        """Lifted f for the Cahn-Hilliard variants, raw g for the Stefan limit."""
        g = self.source(t)
        if self.config.problem == Problem.STEFAN_LIMIT:
            return g
        return lift_source(self.space, g)

    def _substeps(self, state: State, pieces: int, on_state: Callable[[State], None]) -> State:
        dt = self.config.dt / pieces
        accepted = []
        for _ in range(pieces):
            t = state.t + dt
            state = advance(self.space, self.config, state, self.source_slice(t), dt)
            accepted.append(state)
        # only report once the whole outer step went through
        for s in accepted:
            on_state(s)
        return state

    def _log_halving(self, retry_state: RetryCallState) -> None:
        pieces = 2**retry_state.attempt_number
        logger.warning(f"Step rejected, retrying with {pieces} sub-steps")

    def step(self, state: State, on_state: Callable[[State], None]) -> State:
        """One nominal step, halved up to max_halvings times when Newton fails."""
        retrying = Retrying(
            stop=stop_after_attempt(self.max_halvings + 1),
            retry=retry_if_exception_type(StepRejected),
            before_sleep=self._log_halving,
            reraise=True,
        )
        try:
            for attempt in retrying:
                with attempt:
                    pieces = 2 ** (attempt.retry_state.attempt_number - 1)
                    new_state = self._substeps(state, pieces, on_state)
        except StepRejected as e:
            raise SolverFailure(
                f"step from t={state.t:.6g} failed after {self.max_halvings} halvings: {e}"
            ) from e
        self.rejected += attempt.retry_state.attempt_number - 1
        return new_state

    def run(self, u0: PairedField, keep_states: bool = True) -> RunResult:
        config = self.config
        logger.info(
            f"Running {config.problem.value}: eps={config.epsilon}, lambda={config.lam}, "
            f"dt={config.dt}, T={config.T}, nodes={self.space.mesh.n_bulk}"
        )
        state = initial_state(self.space, config, u0)
        tracker = LedgerTracker(self.space, config)
        f0 = lift_source(self.space, self.source(0.0))
        tracker.start(state, f0)

        result = RunResult(states=[state], graph=certify_interiority(config.graph_spec, state.m0))
        self.rejected = 0
        for n in range(1, config.n_steps + 1):
            state = self.step(state, tracker.update)
            # pin the clock to the nominal grid
            state = replace(state, t=n * config.dt)
            if keep_states or n == config.n_steps:
                result.states.append(state)

        result.records = tracker.records
        result.ledger = tracker.ledger()
        result.rejected_steps = self.rejected
        logger.info(
            f"Finished {config.n_steps} steps: max mass drift {result.max_mass_drift:.3e}, "
            f"ledger violations {tracker.violations}, rejected steps {self.rejected}"
        )
        return result
