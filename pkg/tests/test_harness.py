import math

import numpy as np
import pytest

from app.core import forms
from app.core.exceptions import ConfigError, GraphMismatch, MeanMismatch, StefanSolverError
from app.core.forms import assemble_space
from app.core.geometry import PairedField
from app.core.monotone import GraphKind, GraphSpec
from app.core.stepper import initial_state
from app.schemas.config import Problem, SolveConfig
from app.services.harness import HarnessService, build_table, least_squares_slope, mushy_region
from app.services.sources import ManufacturedStefan, bump_initial, cosine_initial, zero_source


@pytest.fixture(scope="module")
def harness():
    return HarnessService(mesh_size=5, threads=1)


def test_least_squares_slope():
    assert least_squares_slope([1.0, 0.1, 0.01], [2.0, 0.2, 0.02]) == pytest.approx(1.0)
    assert least_squares_slope([0.5, 0.25, 0.125], [1.0, 0.25, 0.0625]) == pytest.approx(2.0)
    assert least_squares_slope([1.0, 0.5], [0.0, 0.0]) is None


def test_build_table_ratios_and_monotonicity():
    table = build_table("lambda", "err", [0.1, 0.01, 0.001], [1e-2, 1e-3, 2e-3])
    assert table.rows[0].ratio is None
    assert table.rows[1].ratio == pytest.approx(0.1)
    assert not table.monotone
    assert build_table("x", "err", [1.0, 0.5], [0.0, 0.0]).monotone


@pytest.mark.parametrize("m0, fraction", [(0.5, 1.0), (2.0, 0.0), (-0.5, 0.0)])
def test_mushy_region_of_constant_states(square5, m0, fraction):
    space = assemble_space(square5)
    config = SolveConfig(problem=Problem.STEFAN_LIMIT, m0=m0)
    state = initial_state(space, config, PairedField.constant(square5, m0))
    report = mushy_region(space, state, config.graph_spec)
    assert report.bulk_fraction == pytest.approx(fraction)
    assert report.boundary_fraction == pytest.approx(fraction)
    assert len(report.bulk_nodes) == (square5.n_bulk if fraction else 0)


def test_mushy_region_needs_stefan_graph(square5):
    space = assemble_space(square5)
    config = SolveConfig(problem=Problem.STEFAN_LIMIT, m0=0.5)
    state = initial_state(space, config, PairedField.constant(square5, 0.5))
    with pytest.raises(GraphMismatch):
        mushy_region(space, state, GraphSpec(kind=GraphKind.CUBIC))


def test_bounds_are_flat_for_stationary_data(harness):
    report = harness.monitor_bounds(epsilons=[1 / 4, 1 / 8], T=0.05, amplitude=0.0, source_amplitude=0.0)
    assert report.passed
    assert all(ledger.dissipation <= 1e-20 for ledger in report.ledgers)
    assert all(ledger.sup_dual <= 1e-20 for ledger in report.ledgers)


def test_bounds_on_smooth_data(harness):
    report = harness.monitor_bounds(epsilons=[1 / 4, 1 / 8, 1 / 16], T=0.1)
    assert not report.failures
    for ledger in report.ledgers:
        assert ledger.ledger_violations == 0
        assert all(math.isfinite(v) and v >= 0 for v in ledger.entries().values())


def test_lambda_sweep_constant_data(harness):
    table = harness.sweep_lambda(lambdas=[1e-1, 1e-2], T=0.05, amplitude=0.0, source_amplitude=0.0)
    assert all(row.error == 0.0 for row in table.rows)
    assert table.passed


def test_lambda_sweep_converges_linearly(harness):
    table = harness.sweep_lambda(lambdas=[1e-1, 1e-2, 1e-3], T=0.1)
    assert [row.parameter for row in table.rows] == [1e-1, 1e-2, 1e-3]
    assert table.monotone
    assert table.slope >= 0.8
    assert table.passed


def test_sweeps_are_deterministic_across_threads():
    serial = HarnessService(mesh_size=5, threads=1).sweep_lambda(lambdas=[1e-1, 1e-2], T=0.05)
    threaded = HarnessService(mesh_size=5, threads=2).sweep_lambda(lambdas=[1e-1, 1e-2], T=0.05)
    assert [r.parameter for r in serial.rows] == [r.parameter for r in threaded.rows]
    assert [r.error for r in threaded.rows] == pytest.approx([r.error for r in serial.rows], rel=1e-12)


def test_epsilon_sweep(harness):
    flat = harness.sweep_epsilon(epsilons=[1 / 4, 1 / 8], T=0.05, amplitude=0.0, source_amplitude=0.0)
    assert all(row.error <= 1e-12 for row in flat.rows)

    table = harness.sweep_epsilon(epsilons=[1 / 4, 1 / 8, 1 / 16], T=0.1)
    assert [row.parameter for row in table.rows] == [1 / 4, 1 / 8, 1 / 16]
    assert table.monotone and table.passed
    assert all(row.secondary is not None for row in table.rows)


def test_identical_data_have_zero_distance(harness):
    space = harness.space(lumped=True)
    config = SolveConfig(problem=Problem.STEFAN_LIMIT, dt=0.01, T=0.05, m0=1.25)
    data = (cosine_initial(harness.mesh, 1.25, 0.75), zero_source(harness.mesh))
    lhs, data_term, xi_gap = harness.check_dependence(space, config, data, data)
    assert all(value == 0.0 for _, value in lhs)
    assert data_term == 0.0 and xi_gap == 0.0


def test_dependence_needs_equal_means(harness):
    space = harness.space(lumped=True)
    config = SolveConfig(problem=Problem.STEFAN_LIMIT, dt=0.01, T=0.05, m0=1.25)
    first = (cosine_initial(harness.mesh, 1.25, 0.75), zero_source(harness.mesh))
    second = (bump_initial(harness.mesh, 1.5, 0.2), zero_source(harness.mesh))
    with pytest.raises(MeanMismatch):
        harness.check_dependence(space, config, first, second)


@pytest.mark.parametrize("perturb", ["initial", "source", "both"])
def test_continuous_dependence_holds(harness, perturb):
    report = harness.continuous_dependence(amplitudes=(1.0, 0.5), perturb=perturb, T=0.2)
    assert report.passed
    assert report.constant == pytest.approx(math.exp(0.2) * max(1.0, 1 / report.poincare_constant**2))
    assert report.max_ratio["1.0"] <= 1.0
    assert report.ratio_monotone
    assert report.max_ratio["0.5"] <= report.max_ratio["1.0"] * 1.01
    for key in report.xi_lhs:
        assert report.xi_lhs[key] <= report.xi_rhs[key]


def test_continuous_dependence_fails_when_the_ratio_grows(monkeypatch):
    harness = HarnessService(mesh_size=5, threads=1)
    # max_t LHS/RHS per amplitude, in call order
    ratios = iter([0.1, 0.2, 0.3])

    def fake_check(space, config, first, second):
        data = 1.0
        constant = math.exp(config.T) * max(1.0, 1.0 / space.poincare**2)
        return [(0.0, 0.0), (config.T, next(ratios) * constant * data)], data, 0.0

    monkeypatch.setattr(harness, "check_dependence", fake_check)
    report = harness.continuous_dependence(amplitudes=(1.0, 0.5, 0.25), T=0.2)
    assert report.max_ratio == pytest.approx({"1.0": 0.1, "0.5": 0.2, "0.25": 0.3})
    assert not report.ratio_monotone
    assert not report.passed


def test_continuous_dependence_accepts_a_shrinking_ratio(monkeypatch):
    harness = HarnessService(mesh_size=5, threads=1)
    ratios = iter([0.3, 0.2, 0.2])

    def fake_check(space, config, first, second):
        constant = math.exp(config.T) * max(1.0, 1.0 / space.poincare**2)
        return [(0.0, 0.0), (config.T, next(ratios) * constant)], 1.0, 0.0

    monkeypatch.setattr(harness, "check_dependence", fake_check)
    report = harness.continuous_dependence(amplitudes=(1.0, 0.5, 0.25), T=0.2)
    assert report.ratio_monotone
    assert report.passed


def test_continuous_dependence_rejects_unknown_target(harness):
    with pytest.raises(ConfigError):
        harness.continuous_dependence(perturb="boundary")


def test_manufactured_solution_needs_stefan_graph():
    with pytest.raises(ConfigError):
        ManufacturedStefan(GraphSpec(kind=GraphKind.CUBIC))


def test_mms_needs_stefan_limit(harness):
    with pytest.raises(ConfigError):
        harness.mms_orders(problem=Problem.CH)


def test_mms_orders_on_small_meshes(harness):
    report = harness.mms_orders(levels=(5, 9, 17), T=0.25, temporal_mesh=9, temporal_steps=(4, 8, 16))
    spatial = [row.error for row in report.spatial.rows]
    assert spatial == sorted(spatial, reverse=True)
    assert report.spatial.slope > 1.5
    assert report.temporal_range[0] <= report.temporal.slope <= report.temporal_range[1]


def test_mms_catches_a_broken_boundary_operator(monkeypatch):
    monkeypatch.setattr(forms, "BOUNDARY_STIFFNESS_SIGN", -1.0)
    harness = HarnessService(mesh_size=5, threads=1)
    try:
        report = harness.mms_orders(levels=(5, 9, 17), T=0.25, temporal_mesh=9, temporal_steps=(4, 8, 16))
    except StefanSolverError:
        return
    assert not report.passed


def test_conservation(harness):
    report = harness.conservation(n_steps=20)
    assert set(report.max_drift) == {p.value for p in Problem}
    assert report.passed
    assert all(np.isfinite(list(report.max_drift.values())))
