"""Maximal monotone graphs: resolvents, Yosida approximations and Moreau envelopes.

Three graph families ship:
- StefanPiecewiseLinear: beta(r) = k_s r (r < 0), 0 on [0, L], k_l (r - L) (r > L)
- Cubic: beta(r) = r^3
- IndicatorInterval: the subdifferential of the indicator of [-1, 1]

Every operation accepts a float or a numpy array and returns the same shape.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from app.config import get_settings
from app.core.exceptions import DomainError, GraphMismatch, InteriorityError

logger = logging.getLogger(__name__)
settings = get_settings()

ArrayLike = Union[float, np.ndarray]


class GraphKind(str, Enum):
    STEFAN = "StefanPiecewiseLinear"
    CUBIC = "Cubic"
    INDICATOR = "IndicatorInterval"


class PerturbationKind(str, Enum):
    STEFAN_PLATEAU = "StefanPlateau"
    ZERO = "Zero"
    DOUBLE_WELL = "DoubleWell"


@dataclass(frozen=True)
class GraphSpec:
    """A maximal monotone graph beta = d(beta_hat) with its growth and interiority data."""

    kind: GraphKind = GraphKind.STEFAN
    k_s: float = 1.0
    k_l: float = 1.0
    L: float = 1.0
    c3: Optional[float] = None
    c4: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GraphKind(self.kind))
        if self.kind == GraphKind.STEFAN and min(self.k_s, self.k_l, self.L) <= 0:
            raise ValueError("k_s, k_l and L must be positive")

    @property
    def c1(self) -> float:
        if self.kind == GraphKind.STEFAN:
            return min(self.k_s, self.k_l) / 4
        return 1.0

    @property
    def c2(self) -> float:
        # (k/2)(r - L)^2 >= (k/4) r^2 - (k/2) L^2 since (r/sqrt2 - sqrt2 L)^2 >= 0
        if self.kind == GraphKind.STEFAN:
            return self.k_l * self.L**2 / 2
        return 1.0

    @property
    def c_beta(self) -> float:
        """Lipschitz constant of beta; math.inf when unbounded."""
        if self.kind == GraphKind.STEFAN:
            return max(self.k_s, self.k_l)
        return math.inf

    @property
    def is_lipschitz(self) -> bool:
        return math.isfinite(self.c_beta)

    @property
    def is_single_valued(self) -> bool:
        return self.kind != GraphKind.INDICATOR

    @property
    def domain(self) -> Tuple[float, float]:
        """Effective domain D(beta) as a closed interval."""
        if self.kind == GraphKind.INDICATOR:
            return (-1.0, 1.0)
        return (-math.inf, math.inf)

    def with_interiority(self, m0: float) -> "GraphSpec":
        c3, c4 = gms_constants(self, m0)
        return dataclasses.replace(self, c3=c3, c4=c4)


@dataclass(frozen=True)
class PerturbationSpec:
    """Lipschitz perturbation pi with |pi'| <= 1."""

    kind: PerturbationKind = PerturbationKind.STEFAN_PLATEAU
    L: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PerturbationKind(self.kind))
        if self.L <= 0:
            raise ValueError("L must be positive")

    @property
    def lipschitz(self) -> float:
        return 0.0 if self.kind == PerturbationKind.ZERO else 1.0


@dataclass
class Certificate:
    name: str
    passed: bool
    worst_margin: float


def _wrap(values: np.ndarray, like: ArrayLike) -> ArrayLike:
    if np.ndim(like) == 0:
        return float(values)
    return values


def _check_lambda(lam: ArrayLike) -> None:
    # lam may be one value or one per sample of r
    if not np.all(np.asarray(lam) > 0):
        raise ValueError(f"lambda must be positive, got {lam}")


def resolvent(g: GraphSpec, r: ArrayLike, lam: ArrayLike) -> ArrayLike:
    """J_lambda(r) = (I + lambda beta)^{-1} r, closed form per graph kind."""
    _check_lambda(lam)
    x = np.asarray(r, dtype=float)
    if g.kind == GraphKind.STEFAN:
        out = np.where(
            x < 0,
            x / (1 + lam * g.k_s),
            np.where(x > g.L, g.L + (x - g.L) / (1 + lam * g.k_l), x),
        )
    elif g.kind == GraphKind.CUBIC:
        # real root of j + lam j^3 = r, hyperbolic form of Cardano's formula
        s = np.sqrt(3 * lam)
        out = 2 / s * np.sinh(np.arcsinh(1.5 * x * s) / 3)
    else:
        out = np.clip(x, -1.0, 1.0)
    return _wrap(out, r)


def yosida(g: GraphSpec, r: ArrayLike, lam: ArrayLike) -> ArrayLike:
    """beta_lambda(r) = (r - J_lambda(r)) / lambda."""
    _check_lambda(lam)
    x = np.asarray(r, dtype=float)
    if g.kind == GraphKind.STEFAN:
        out = np.where(
            x < 0,
            g.k_s * x / (1 + lam * g.k_s),
            np.where(x > g.L, g.k_l * (x - g.L) / (1 + lam * g.k_l), 0.0),
        )
    elif g.kind == GraphKind.CUBIC:
        out = np.asarray(resolvent(g, x, lam)) ** 3
    else:
        out = (x - np.clip(x, -1.0, 1.0)) / lam
    return _wrap(out, r)


def yosida_slope(g: GraphSpec, r: ArrayLike, lam: ArrayLike) -> ArrayLike:
    """Generalized derivative of beta_lambda; plateau side at kinks."""
    _check_lambda(lam)
    x = np.asarray(r, dtype=float)
    if g.kind == GraphKind.STEFAN:
        out = np.where(
            x < 0,
            g.k_s / (1 + lam * g.k_s),
            np.where(x > g.L, g.k_l / (1 + lam * g.k_l), 0.0),
        )
    elif g.kind == GraphKind.CUBIC:
        j = np.asarray(resolvent(g, x, lam))
        out = 3 * j**2 / (1 + 3 * lam * j**2)
    else:
        out = np.where(np.abs(x) > 1.0, 1.0 / lam, 0.0)
    return _wrap(out, r)


def beta_hat(g: GraphSpec, r: ArrayLike) -> ArrayLike:
    """Convex primitive beta_hat with beta_hat(0) = 0."""
    x = np.asarray(r, dtype=float)
    if g.kind == GraphKind.STEFAN:
        out = np.where(
            x < 0,
            0.5 * g.k_s * x**2,
            np.where(x > g.L, 0.5 * g.k_l * (x - g.L) ** 2, 0.0),
        )
    elif g.kind == GraphKind.CUBIC:
        out = x**4 / 4
    else:
        if np.any(np.abs(x) > 1.0):
            raise DomainError("beta_hat of the indicator is +inf outside [-1, 1]")
        out = np.zeros_like(x)
    return _wrap(out, r)


def moreau(g: GraphSpec, r: ArrayLike, lam: ArrayLike) -> ArrayLike:
    """Moreau-Yosida envelope (1/2 lambda)|r - J|^2 + beta_hat(J), J = J_lambda(r)."""
    x = np.asarray(r, dtype=float)
    j = np.asarray(resolvent(g, x, lam))
    out = (x - j) ** 2 / (2 * lam) + np.asarray(beta_hat(g, j))
    return _wrap(out, r)


def beta(g: GraphSpec, r: ArrayLike) -> ArrayLike:
    """Single-valued section of beta (the minimal section for the indicator)."""
    x = np.asarray(r, dtype=float)
    if g.kind == GraphKind.STEFAN:
        out = np.where(x < 0, g.k_s * x, np.where(x > g.L, g.k_l * (x - g.L), 0.0))
    elif g.kind == GraphKind.CUBIC:
        out = x**3
    else:
        if np.any(np.abs(x) > 1.0):
            raise DomainError("the indicator graph is empty outside [-1, 1]")
        out = np.zeros_like(x)
    return _wrap(out, r)


def beta_slope(g: GraphSpec, r: ArrayLike) -> ArrayLike:
    """Generalized derivative of beta; plateau side at the kinks 0 and L."""
    x = np.asarray(r, dtype=float)
    if g.kind == GraphKind.STEFAN:
        out = np.where(x < 0, g.k_s, np.where(x > g.L, g.k_l, 0.0))
    elif g.kind == GraphKind.CUBIC:
        out = 3 * x**2
    else:
        raise GraphMismatch("the indicator graph has no pointwise derivative")
    return _wrap(out, r)


def pi_value(p: PerturbationSpec, r: ArrayLike) -> ArrayLike:
    x = np.asarray(r, dtype=float)
    if p.kind == PerturbationKind.STEFAN_PLATEAU:
        out = p.L / 2 - np.clip(x, 0.0, p.L)
    elif p.kind == PerturbationKind.DOUBLE_WELL:
        out = -x
    else:
        out = np.zeros_like(x)
    return _wrap(out, r)


def pi_slope(p: PerturbationSpec, r: ArrayLike) -> ArrayLike:
    """Derivative of pi; plateau side at the kinks."""
    x = np.asarray(r, dtype=float)
    if p.kind == PerturbationKind.STEFAN_PLATEAU:
        out = np.where((x >= 0) & (x <= p.L), -1.0, 0.0)
    elif p.kind == PerturbationKind.DOUBLE_WELL:
        out = -np.ones_like(x)
    else:
        out = np.zeros_like(x)
    return _wrap(out, r)


def pi_hat(p: PerturbationSpec, r: ArrayLike) -> ArrayLike:
    """Primitive of pi vanishing at 0."""
    x = np.asarray(r, dtype=float)
    if p.kind == PerturbationKind.STEFAN_PLATEAU:
        half = p.L / 2
        out = np.where(
            x < 0,
            half * x,
            np.where(x > p.L, -half * (x - p.L), half * x - x**2 / 2),
        )
    elif p.kind == PerturbationKind.DOUBLE_WELL:
        out = -(x**2) / 2
    else:
        out = np.zeros_like(x)
    return _wrap(out, r)


def double_well(g: GraphSpec, p: PerturbationSpec, r: ArrayLike, epsilon: float) -> ArrayLike:
    """W = beta_hat + epsilon * pi_hat."""
    x = np.asarray(r, dtype=float)
    out = np.asarray(beta_hat(g, x)) + epsilon * np.asarray(pi_hat(p, x))
    return _wrap(out, r)


def certificate_grid(radius: Optional[float] = None, step: Optional[float] = None) -> np.ndarray:
    """Validation window [-radius, radius]; unset bounds come from the certificate settings."""
    radius = settings.certificate_radius if radius is None else radius
    step = settings.certificate_step if step is None else step
    n = int(round(2 * radius / step))
    return np.linspace(-radius, radius, n + 1)


def _certificate_lambdas(lambdas: Optional[Sequence[float]]) -> Tuple[float, ...]:
    return tuple(settings.certificate_lambdas if lambdas is None else lambdas)


def check_growth(g: GraphSpec, radius: Optional[float] = None, step: Optional[float] = None) -> Certificate:
    """Quadratic growth beta_hat(r) >= c1 r^2 - c2 on the window (finite part of the domain)."""
    r = certificate_grid(radius, step)
    lo, hi = g.domain
    r = r[(r >= lo) & (r <= hi)]
    margin = np.asarray(beta_hat(g, r)) - (g.c1 * r**2 - g.c2)
    worst = float(margin.min())
    return Certificate(name="growth", passed=worst >= 0.0, worst_margin=worst)


def check_lipschitz(
    p: PerturbationSpec, radius: Optional[float] = None, step: Optional[float] = None
) -> Certificate:
    """Difference quotients of pi bounded by 1 on the window."""
    r = certificate_grid(radius, step)
    values = np.asarray(pi_value(p, r))
    quotients = np.abs(np.diff(values)) / np.diff(r)
    worst = float(1.0 - quotients.max())
    return Certificate(name="lipschitz", passed=worst >= -1e-12, worst_margin=worst)


def gms_constants(
    g: GraphSpec,
    m0: float,
    radius: Optional[float] = None,
    step: Optional[float] = None,
    lambdas: Optional[Sequence[float]] = None,
) -> Tuple[float, float]:
    """Constants of beta_lambda(r)(r - m0) >= c3 |beta_lambda(r)| - c4.

    c3 is half the distance from m0 to the boundary of D(beta), capped at 1 when
    D(beta) is the whole line; c4 is the smallest nonnegative constant that makes
    the inequality hold on the (r, lambda) certificate grid.
    """
    lo, hi = g.domain
    if not lo < m0 < hi:
        raise InteriorityError(f"m0={m0} is not interior to D(beta)=[{lo}, {hi}]")

    c3 = min(1.0, (m0 - lo) / 2, (hi - m0) / 2)
    r = certificate_grid(radius, step)
    c4 = 0.0
    for lam in _certificate_lambdas(lambdas):
        b = np.asarray(yosida(g, r, lam))
        deficit = c3 * np.abs(b) - b * (r - m0)
        c4 = max(c4, float(deficit.max()))
    # round-off slack so the certificate re-validates on the same grid
    c4 = c4 * (1 + 1e-12) + 1e-12 if c4 > 0 else 0.0
    return c3, c4


def check_gms(
    g: GraphSpec,
    m0: float,
    c3: float,
    c4: float,
    radius: Optional[float] = None,
    step: Optional[float] = None,
    lambdas: Optional[Sequence[float]] = None,
) -> Certificate:
    r = certificate_grid(radius, step)
    worst = math.inf
    for lam in _certificate_lambdas(lambdas):
        b = np.asarray(yosida(g, r, lam))
        margin = b * (r - m0) - c3 * np.abs(b) + c4
        worst = min(worst, float(margin.min()))
    return Certificate(name="gms", passed=worst >= 0.0, worst_margin=worst)


def certify_interiority(g: GraphSpec, m0: float) -> GraphSpec:
    """GraphSpec with (c3, c4) filled for m0 and re-validated on the certificate grid."""
    certified = g.with_interiority(m0)
    certificate = check_gms(certified, m0, certified.c3, certified.c4)
    if not certificate.passed:
        raise InteriorityError(
            f"GMS constants c3={certified.c3:g}, c4={certified.c4:g} fail on the grid "
            f"(worst margin {certificate.worst_margin:.3e})"
        )
    logger.debug(f"GMS constants for m0={m0:g}: c3={certified.c3:g}, c4={certified.c4:g}")
    return certified
