import numpy as np
import pytest

from app.core.exceptions import (
    ConfigError,
    DomainError,
    InconsistentState,
    InteriorityError,
    MeanMismatch,
    NewtonDivergence,
    NonConforming,
    SolverFailure,
    StepRejected,
)
from app.core.forms import assemble_space, lift_source
from app.core.geometry import PairedField, mean
from app.core.monotone import GraphKind, PerturbationKind
from app.core.stepper import (
    advance,
    initial_state,
    reconstruct_mu,
    step_ch,
    step_regularized,
    step_stefan,
    weak_residual,
)
from app.schemas.config import GraphConfig, Problem, SolveConfig
from app.services.simulation import SimulationService
from app.services.sources import bump_source, cosine_initial

CONFIGS = {
    Problem.REGULARIZED_CH: dict(epsilon=1 / 16, lam=0.01),
    Problem.CH: dict(epsilon=1 / 16),
    Problem.STEFAN_LIMIT: dict(),
}


def make_config(problem, **overrides):
    params = dict(problem=problem, dt=0.01, T=0.1, m0=0.5, **CONFIGS[problem])
    params.update(overrides)
    return SolveConfig(**params)


def source_slice(space, config, source, t):
    g = source(t)
    return g if config.problem == Problem.STEFAN_LIMIT else lift_source(space, g)


def test_initial_state_checks(square5):
    space = assemble_space(square5)
    config = make_config(Problem.CH)
    u0 = cosine_initial(square5, 0.5, 0.75)
    state = initial_state(space, config, u0)
    assert abs(mean(square5, state.v)) <= 1e-12
    assert np.allclose(state.u.bulk, u0.bulk)

    with pytest.raises(MeanMismatch):
        initial_state(space, config, cosine_initial(square5, 0.7, 0.75))
    with pytest.raises(NonConforming):
        initial_state(space, config, PairedField(u0.bulk, u0.boundary + 0.1))

    indicator = make_config(Problem.REGULARIZED_CH, graph=GraphConfig(kind=GraphKind.INDICATOR), m0=1.0)
    with pytest.raises(InteriorityError):
        initial_state(space, indicator, PairedField.constant(square5, 1.0))
    with pytest.raises(DomainError):
        initial_state(space, indicator.model_copy(update={"m0": 0.5}), cosine_initial(square5, 0.5, 2.0))


def test_initial_state_accepts_bulk_vector(square5):
    space = assemble_space(square5)
    state = initial_state(space, make_config(Problem.STEFAN_LIMIT), np.full(square5.n_bulk, 0.5))
    assert state.u.conforming and state.step == 0


@pytest.mark.parametrize("problem", list(Problem))
def test_steps_conserve_mass(problem, space9):
    mesh = space9.mesh
    config = make_config(problem)
    source = bump_source(mesh, 1.0)
    state = initial_state(space9, config, cosine_initial(mesh, 0.5, 0.75))
    for n in range(1, 11):
        state = advance(space9, config, state, source_slice(space9, config, source, n * config.dt))
        assert abs(mean(mesh, state.u) - 0.5) <= 1e-10
        assert state.step == n


@pytest.mark.parametrize("problem", [Problem.REGULARIZED_CH, Problem.CH])
def test_reconstruct_mu_matches_mixed_solution(problem, lumped9):
    mesh = lumped9.mesh
    config = make_config(problem)
    source = bump_source(mesh, 1.0)
    state = initial_state(lumped9, config, cosine_initial(mesh, 0.5, 0.75))
    state = advance(lumped9, config, state, source_slice(lumped9, config, source, config.dt))
    mu = reconstruct_mu(lumped9, config, state)
    assert np.abs(mu.bulk - state.mu.bulk).max() <= 1e-7
    assert weak_residual(lumped9, state, mu) <= 1e-8


def test_stefan_mu_is_temperature_minus_lift(space9):
    mesh = space9.mesh
    config = make_config(Problem.STEFAN_LIMIT)
    source = bump_source(mesh, 1.0)
    state = initial_state(space9, config, cosine_initial(mesh, 0.5, 0.75))
    state = step_stefan(space9, config, state, source(config.dt))
    mu = reconstruct_mu(space9, config, state)
    assert np.array_equal(mu.bulk, (state.xi - state.f).bulk)
    assert weak_residual(space9, state, mu) <= 1e-8


def test_mu_needs_a_step(space9):
    config = make_config(Problem.CH)
    state = initial_state(space9, config, cosine_initial(space9.mesh, 0.5, 0.75))
    with pytest.raises(InconsistentState):
        reconstruct_mu(space9, config, state)
    with pytest.raises(InconsistentState):
        weak_residual(space9, state, state.u)


def test_step_checks_the_problem(space9):
    config = make_config(Problem.STEFAN_LIMIT)
    state = initial_state(space9, config, cosine_initial(space9.mesh, 0.5, 0.75))
    zero = PairedField.zeros(space9.mesh)
    with pytest.raises(ConfigError):
        step_ch(space9, config, state, zero)
    with pytest.raises(ConfigError):
        step_regularized(space9, config, state, zero)


def test_unreachable_tolerance_rejects_the_step(space9):
    config = make_config(Problem.STEFAN_LIMIT, newton_tol=1e-30, newton_max_iter=3)
    state = initial_state(space9, config, cosine_initial(space9.mesh, 0.5, 0.75))
    with pytest.raises(StepRejected) as info:
        step_stefan(space9, config, state, PairedField.zeros(space9.mesh))
    assert info.value.suggested_dt == pytest.approx(config.dt / 2)
    assert isinstance(info.value.__cause__, NewtonDivergence)


def test_exhausted_halvings_surface_as_solver_failure(square5):
    space = assemble_space(square5)
    config = make_config(Problem.CH, newton_tol=1e-30, newton_max_iter=2)
    service = SimulationService(space, config, bump_source(square5, 1.0))
    with pytest.raises(SolverFailure) as info:
        service.run(cosine_initial(square5, 0.5, 0.75))
    assert isinstance(info.value.__cause__, StepRejected)


def test_simulation_pins_time_levels(space9):
    config = make_config(Problem.CH, T=0.05)
    result = SimulationService(space9, config, bump_source(space9.mesh, 1.0)).run(
        cosine_initial(space9.mesh, 0.5, 0.75)
    )
    assert [s.t for s in result.states] == pytest.approx([0.0, 0.01, 0.02, 0.03, 0.04, 0.05])
    assert len(result.records) == 6
    assert result.rejected_steps == 0
    assert result.max_mass_drift <= 1e-10


@pytest.mark.parametrize("problem", list(Problem))
def test_energy_ledger_holds_on_lumped_space(problem, lumped9):
    config = make_config(problem, T=0.2)
    result = SimulationService(lumped9, config, bump_source(lumped9.mesh, 1.0)).run(
        cosine_initial(lumped9.mesh, 0.5, 0.75)
    )
    assert result.ledger.ledger_violations == 0
    for record in result.records:
        assert record.ledger_lhs <= record.ledger_rhs * (1 + 1e-9) + 1e-12


def test_regularized_run_with_indicator_graph(lumped9):
    config = make_config(
        Problem.REGULARIZED_CH,
        graph=GraphConfig(kind=GraphKind.INDICATOR),
        perturbation={"kind": PerturbationKind.DOUBLE_WELL},
        m0=0.0,
        T=0.2,
    )
    result = SimulationService(lumped9, config, bump_source(lumped9.mesh, 1.0)).run(
        cosine_initial(lumped9.mesh, 0.0, 0.4)
    )
    assert len(result.states) == config.n_steps + 1 == 21
    assert result.max_mass_drift <= 1e-10
    assert result.ledger.ledger_violations == 0
    # the Yosida penalty keeps u near the constraint interval [-1, 1]
    assert max(s.u.max_abs() for s in result.states) <= 1.5
    assert result.graph.c3 == pytest.approx(0.5)
