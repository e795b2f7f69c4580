"""Implicit Euler steps for the regularized Cahn-Hilliard, Cahn-Hilliard and Stefan problems.

The Cahn-Hilliard variants are solved in mixed form for (v, mu) on conforming fields:

    N (v - v_old) / dt + K mu = 0
    N mu - lam N (v - v_old) / dt - eps K v - N (b(v + m0) + eps pi(v + m0) - f) = 0

with b the Yosida approximation (RegularizedCH) or the graph itself (CH). Summing
the first row shows that the mean of v never moves. The Stefan limit is the enthalpy
step N (u - u_old) / dt + K beta(u) = (g, .)_H.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from app.config import get_settings
from app.core import monotone
from app.core.exceptions import (
    ConfigError,
    DomainError,
    InconsistentState,
    InteriorityError,
    MeanMismatch,
    NewtonDivergence,
    NonConforming,
    StepRejected,
)
from app.core.forms import DiscreteSpace, embed, lift_source
from app.core.geometry import PairedField, check_dimensions, is_conforming, mean, project_zero_mean, trace_conform
from app.schemas.config import Problem, SolveConfig

logger = logging.getLogger(__name__)
settings = get_settings()

ARMIJO_C = 1e-4
MAX_BACKTRACKS = 10


@dataclass(frozen=True)
class State:
    """Solution at one time level; u, v, mu and xi are conforming."""

    u: PairedField
    v: PairedField
    xi: PairedField
    m0: float
    t: float = 0.0
    mu: Optional[PairedField] = None
    delta: Optional[PairedField] = None  # (v_new - v_old) / dt of the last step
    f: Optional[PairedField] = None  # lifted source used by the last step
    step: int = 0
    dt: float = 0.0
    newton_iterations: int = 0
    residual: float = 0.0


def _newton(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    jacobian_fn: Callable[[np.ndarray], sparse.spmatrix],
    x0: np.ndarray,
    tol: float,
    max_iter: int,
) -> Tuple[np.ndarray, int, float]:
    """Semismooth Newton on the sup-norm of the residual, Armijo backtracking when a full step fails."""
    x = x0.copy()
    r = residual_fn(x)
    norm = float(np.abs(r).max())
    iterations = 0
    damped = False
    while norm > tol or not np.isfinite(norm):
        if iterations >= max_iter or not np.isfinite(norm):
            raise NewtonDivergence(
                f"residual {norm:.3e} above {tol:.1e} after {iterations} iterations",
                residual=norm,
                iterations=iterations,
            )
        dx = spsolve(jacobian_fn(x).tocsc(), -r)
        if not np.all(np.isfinite(dx)):
            raise NewtonDivergence("singular Jacobian", residual=norm, iterations=iterations)

        merit = np.linalg.norm(r)
        alpha = 1.0
        for _ in range(MAX_BACKTRACKS):
            x_try = x + alpha * dx
            r_try = residual_fn(x_try)
            if np.linalg.norm(r_try) <= (1 - ARMIJO_C * alpha) * merit:
                break
            alpha /= 2
        if alpha < 1.0:
            damped = True
        x, r = x_try, r_try
        norm = float(np.abs(r).max())
        iterations += 1
        logger.debug(f"Newton iteration {iterations}: residual {norm:.3e}, step {alpha:g}")

    if damped:
        logger.warning(f"Newton needed damped steps ({iterations} iterations)")
    return x, iterations, norm


def initial_state(
    space: DiscreteSpace, config: SolveConfig, u0: Union[PairedField, np.ndarray]
) -> State:
    """Build the t = 0 state after checking the compatibility of the initial datum."""
    mesh = space.mesh
    if not isinstance(u0, PairedField):
        u0 = trace_conform(mesh, u0)
    check_dimensions(mesh, u0)
    if not (u0.conforming or is_conforming(mesh, u0)):
        raise NonConforming("initial datum must be conforming")

    graph = config.graph_spec
    energy = np.asarray(monotone.beta_hat(graph, u0.bulk))
    if not np.all(np.isfinite(energy)):
        raise DomainError("beta_hat(u0) is not finite at every node")

    m = mean(mesh, u0)
    if abs(m - config.m0) > settings.mean_tol * max(1.0, abs(config.m0)):
        raise MeanMismatch(f"initial datum has mean {m:.12g}, configuration says m0={config.m0:.12g}")
    lo, hi = graph.domain
    if not lo < m < hi:
        raise InteriorityError(f"m0={m} is not interior to D(beta)=[{lo}, {hi}]")

    v = project_zero_mean(mesh, u0)
    u = trace_conform(mesh, v.bulk + config.m0)
    return State(u=u, v=v, xi=_selection(config, u), m0=config.m0)


def _selection(config: SolveConfig, u: PairedField) -> PairedField:
    graph = config.graph_spec
    if config.problem == Problem.REGULARIZED_CH:
        return u.map(lambda r: np.asarray(monotone.yosida(graph, r, config.lam)))
    return u.map(lambda r: np.asarray(monotone.beta(graph, r)))


def _require(config: SolveConfig, problem: Problem) -> None:
    if config.problem != problem:
        raise ConfigError(f"step for {problem.value} called with a {config.problem.value} configuration", key="problem")


def _step_mixed(
    space: DiscreteSpace, config: SolveConfig, state: State, f_slice: PairedField, dt: float
) -> State:
    graph = config.graph_spec
    pert = config.perturbation_spec
    eps, lam = config.epsilon, config.lam
    exact = config.problem == Problem.CH
    n = space.mesh.n_bulk
    N, K = space.mass, space.stiffness
    v_old = state.v.bulk
    f = f_slice.bulk
    m0 = state.m0

    if exact:
        b_value = lambda r: np.asarray(monotone.beta(graph, r))  # noqa: E731
        b_slope = lambda r: np.asarray(monotone.beta_slope(graph, r))  # noqa: E731
    else:
        b_value = lambda r: np.asarray(monotone.yosida(graph, r, lam))  # noqa: E731
        b_slope = lambda r: np.asarray(monotone.yosida_slope(graph, r, lam))  # noqa: E731

    def residual(x: np.ndarray) -> np.ndarray:
        v, mu = x[:n], x[n:]
        u = v + m0
        Nd = N @ ((v - v_old) / dt)
        reaction = b_value(u) + eps * np.asarray(monotone.pi_value(pert, u)) - f
        r1 = Nd + K @ mu
        r2 = N @ mu - lam * Nd - eps * (K @ v) - N @ reaction
        return np.concatenate([r1, r2])

    def jacobian(x: np.ndarray) -> sparse.spmatrix:
        u = x[:n] + m0
        slope = b_slope(u) + eps * np.asarray(monotone.pi_slope(pert, u))
        lower = -(lam / dt) * N - eps * K - N @ sparse.diags(slope)
        return sparse.bmat([[N / dt, K], [lower, N]], format="csc")

    u_old = v_old + m0
    mu0 = b_value(u_old) + eps * np.asarray(monotone.pi_value(pert, u_old)) - f
    t_new = state.t + dt
    try:
        x, iterations, res = _newton(
            residual, jacobian, np.concatenate([v_old, mu0]), config.newton_tol, config.newton_max_iter
        )
    except NewtonDivergence as e:
        logger.warning(f"Step to t={t_new:.6g} rejected: {e}")
        raise StepRejected(f"step to t={t_new:.6g} rejected: {e}", suggested_dt=dt / 2) from e

    v_new = x[:n]
    # strip solver noise along the constants
    c = space.weights
    v_new = v_new - (c @ v_new) / c.sum()

    v = trace_conform(space.mesh, v_new)
    u = trace_conform(space.mesh, v_new + m0)
    return State(
        u=u,
        v=v,
        xi=_selection(config, u),
        m0=m0,
        t=t_new,
        mu=trace_conform(space.mesh, x[n:]),
        delta=trace_conform(space.mesh, (v_new - v_old) / dt),
        f=f_slice,
        step=state.step + 1,
        dt=dt,
        newton_iterations=iterations,
        residual=res,
    )


def step_regularized(
    space: DiscreteSpace,
    config: SolveConfig,
    state: State,
    f_slice: PairedField,
    dt: Optional[float] = None,
) -> State:
    """One implicit step of the Yosida-regularized problem (lambda > 0)."""
    _require(config, Problem.REGULARIZED_CH)
    return _step_mixed(space, config, state, f_slice, dt or config.dt)


def step_ch(
    space: DiscreteSpace,
    config: SolveConfig,
    state: State,
    f_slice: PairedField,
    dt: Optional[float] = None,
) -> State:
    """One implicit step with the exact Lipschitz graph (lambda = 0)."""
    _require(config, Problem.CH)
    return _step_mixed(space, config, state, f_slice, dt or config.dt)


def step_stefan(
    space: DiscreteSpace,
    config: SolveConfig,
    state: State,
    g_slice: PairedField,
    dt: Optional[float] = None,
) -> State:
    """Enthalpy step N (u - u_old) / dt + K beta(u) = (g, .)_H."""
    _require(config, Problem.STEFAN_LIMIT)
    dt = dt or config.dt
    graph = config.graph_spec
    N, K = space.mass, space.stiffness
    u_old = state.u.bulk
    load = embed(space, g_slice)

    def residual(u: np.ndarray) -> np.ndarray:
        return N @ ((u - u_old) / dt) + K @ np.asarray(monotone.beta(graph, u)) - load

    def jacobian(u: np.ndarray) -> sparse.spmatrix:
        return N / dt + K @ sparse.diags(np.asarray(monotone.beta_slope(graph, u)))

    t_new = state.t + dt
    try:
        u_new, iterations, res = _newton(
            residual, jacobian, u_old.copy(), config.newton_tol, config.newton_max_iter
        )
    except NewtonDivergence as e:
        logger.warning(f"Stefan step to t={t_new:.6g} rejected: {e}")
        raise StepRejected(f"step to t={t_new:.6g} rejected: {e}", suggested_dt=dt / 2) from e

    # exact discrete mass balance c.(u - u_old) = dt <g, 1>
    c = space.weights
    target = c @ u_old + dt * load.sum()
    u_new = u_new + (target - c @ u_new) / c.sum()

    mesh = space.mesh
    u = trace_conform(mesh, u_new)
    xi = trace_conform(mesh, np.asarray(monotone.beta(graph, u_new)))
    f = lift_source(space, project_zero_mean(mesh, g_slice))
    return State(
        u=u,
        v=trace_conform(mesh, u_new - state.m0),
        xi=xi,
        m0=state.m0,
        t=t_new,
        mu=xi - f,
        delta=trace_conform(mesh, (u_new - u_old) / dt),
        f=f,
        step=state.step + 1,
        dt=dt,
        newton_iterations=iterations,
        residual=res,
    )


def reconstruct_mu(space: DiscreteSpace, config: SolveConfig, state: State) -> PairedField:
    """mu = lam v' + eps dphi(v) + b(u) + eps pi(u) - f; mu = xi - f in the Stefan limit."""
    if state.delta is None or state.f is None:
        raise InconsistentState("no step has been taken from this state")
    if config.problem == Problem.STEFAN_LIMIT:
        return state.xi - state.f

    pert = config.perturbation_spec
    u = state.u.bulk
    curvature = space.solve_mass(space.stiffness @ state.v.bulk)
    value = (
        config.lam * state.delta.bulk
        + config.epsilon * curvature
        + state.xi.bulk
        + config.epsilon * np.asarray(monotone.pi_value(pert, u))
        - state.f.bulk
    )
    return trace_conform(space.mesh, value)


def weak_residual(space: DiscreteSpace, state: State, mu: PairedField) -> float:
    """Sup-norm of N v' + K mu, the discrete form of <v', z> + a(mu, z) = 0."""
    if state.delta is None:
        raise InconsistentState("no step has been taken from this state")
    return float(np.abs(space.mass @ state.delta.bulk + space.stiffness @ mu.bulk).max())


def advance(
    space: DiscreteSpace,
    config: SolveConfig,
    state: State,
    source: PairedField,
    dt: Optional[float] = None,
) -> State:
    """Dispatch one step; source is the lifted f for CH variants and raw g for the Stefan limit."""
    if config.problem == Problem.REGULARIZED_CH:
        return step_regularized(space, config, state, source, dt)
    if config.problem == Problem.CH:
        return step_ch(space, config, state, source, dt)
    return step_stefan(space, config, state, source, dt)
