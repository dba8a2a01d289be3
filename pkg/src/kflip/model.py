"""Game parameters, noisy choice probabilities and equilibrium structure.

A k-flip Ising game lives on a complete graph of ``N`` agents. At every step
``k`` of them re-decide; an agent picks ``+1`` with probability

    p_plus(phi) = F(c * (H + J * (2 * phi - 1)))

where ``phi = N+/N`` and ``F``/``c`` depend on the noise law:

* Gumbel noise: ``F`` is the logistic function and ``c = 2 * beta``.
* Normal noise, each noise term ~ N(0, 1/beta**2): ``F`` is the standard
  normal CDF and ``c = sqrt(2) * beta``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dc_field, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy import optimize, special
from scipy.integrate import cumulative_simpson

from .errors import (
    InvalidParameter,
    NoMetastableState,
    QuadratureFailure,
    SubcriticalTemperature,
)

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# grid used to bracket roots of p_plus(phi) - phi
_ROOT_SCAN_POINTS = 2048


class NoiseKind(str, enum.Enum):
    GUMBEL = "gumbel"
    NORMAL = "normal"


class Regime(str, enum.Enum):
    HIGH_TEMPERATURE = "high_temperature"
    LOW_TEMPERATURE_HYSTERESIS = "low_temperature_hysteresis"
    LOW_TEMPERATURE_SINGLE = "low_temperature_single"


def _as_kind(kind) -> NoiseKind:
    try:
        return NoiseKind(kind)
    except ValueError:
        raise InvalidParameter(f"unknown noise kind {kind!r}") from None


@dataclass(frozen=True)
class NoiseModel:
    """Noise law of the per-strategy utility shocks.

    Parameters
    ----------
    kind : NoiseKind or str
        ``"gumbel"`` (logit choice) or ``"normal"``.
    beta : float
        Inverse temperature, must be positive and finite.
    """

    kind: NoiseKind = NoiseKind.GUMBEL
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", _as_kind(self.kind))
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise InvalidParameter(f"beta must be positive and finite, got {self.beta}")

    @property
    def scale(self) -> float:
        """Multiplier ``c`` of the utility gap inside the link function."""
        if self.kind is NoiseKind.GUMBEL:
            return 2.0 * self.beta
        return math.sqrt(2.0) * self.beta

    def link(self, u):
        if self.kind is NoiseKind.GUMBEL:
            return special.expit(u)
        return special.ndtr(u)

    def link_density(self, u):
        if self.kind is NoiseKind.GUMBEL:
            s = special.expit(u)
            return s * (1.0 - s)
        return np.exp(-0.5 * np.square(u)) / _SQRT_2PI


def critical_beta_j(kind) -> float:
    """Value of beta*J at which the symmetric fixed point loses stability."""
    kind = _as_kind(kind)
    if kind is NoiseKind.GUMBEL:
        return 1.0
    return math.sqrt(math.pi) / 2.0


@dataclass(frozen=True)
class GameParams:
    """Parameters of one k-flip Ising game instance."""

    n_agents: int
    k_flip: int
    coupling: float = 1.0
    field: float = 0.0
    noise: NoiseModel = dc_field(default_factory=NoiseModel)

    def __post_init__(self):
        if int(self.n_agents) != self.n_agents or self.n_agents < 1:
            raise InvalidParameter(f"n_agents must be an integer >= 1, got {self.n_agents}")
        if int(self.k_flip) != self.k_flip or not 1 <= self.k_flip <= self.n_agents:
            raise InvalidParameter(
                f"k_flip must be an integer in [1, {self.n_agents}], got {self.k_flip}"
            )
        if not (math.isfinite(self.coupling) and self.coupling > 0):
            raise InvalidParameter(f"coupling must be positive, got {self.coupling}")
        if not math.isfinite(self.field):
            raise InvalidParameter(f"field must be finite, got {self.field}")
        object.__setattr__(self, "n_agents", int(self.n_agents))
        object.__setattr__(self, "k_flip", int(self.k_flip))

    @classmethod
    def create(cls, n_agents, k_flip, beta, field=0.0, coupling=1.0, noise="gumbel"):
        return cls(n_agents, k_flip, coupling, field, NoiseModel(_as_kind(noise), beta))

    @classmethod
    def at_gamma(cls, n_agents, k_flip, beta, gamma, coupling=1.0, noise="gumbel"):
        """Build parameters with the field set to ``gamma * H*(beta, J)``."""
        hs = h_star(beta, coupling, noise)
        return cls.create(n_agents, k_flip, beta, gamma * hs, coupling, noise)

    @property
    def beta(self) -> float:
        return self.noise.beta

    @property
    def rho(self) -> float:
        return self.k_flip / self.n_agents

    def with_k(self, k_flip: int) -> "GameParams":
        return replace(self, k_flip=k_flip)

    def with_field(self, field: float) -> "GameParams":
        return replace(self, field=field)


def p_plus(params: GameParams, phi):
    """Probability that a re-deciding agent picks ``+1`` at adoption fraction ``phi``."""
    u = params.noise.scale * (params.field + params.coupling * (2.0 * np.asarray(phi, float) - 1.0))
    out = params.noise.link(u)
    return float(out) if np.ndim(out) == 0 else out


def p_plus_prime(params: GameParams, phi):
    """Derivative of :func:`p_plus` with respect to ``phi``."""
    c = params.noise.scale
    u = c * (params.field + params.coupling * (2.0 * np.asarray(phi, float) - 1.0))
    out = 2.0 * params.coupling * c * params.noise.link_density(u)
    return float(out) if np.ndim(out) == 0 else out


class _Tangency(NamedTuple):
    field: float  # H* >= 0
    phi: float  # lower-branch tangency point at H = +H*


def _tangency(beta: float, coupling: float, kind: NoiseKind) -> _Tangency:
    noise = NoiseModel(kind, beta)
    c = noise.scale
    slope0 = 2.0 * coupling * c * float(noise.link_density(0.0))
    if slope0 < 1.0 - 1e-12:
        raise SubcriticalTemperature(
            f"beta*J = {beta * coupling:.6g} is below the critical value "
            f"{critical_beta_j(kind):.6g} for {kind.value} noise"
        )
    # lower branch: slope p_plus' = 1 at a negative link argument
    target = 1.0 / (2.0 * coupling * c)
    if abs(slope0 - 1.0) <= 1e-12:
        u = 0.0
    else:
        lo = -1.0
        while float(noise.link_density(lo)) >= target:
            lo *= 2.0
        u = optimize.brentq(
            lambda x: float(noise.link_density(x)) - target, lo, 0.0, xtol=1e-15
        )
    phi_t = float(noise.link(u))
    return _Tangency(u / c - coupling * (2.0 * phi_t - 1.0), phi_t)


def h_star(beta: float, coupling: float = 1.0, noise_kind="gumbel") -> float:
    """Critical field beyond which the lower solution branch disappears.

    Gumbel noise uses the closed form; for normal noise the tangency of
    ``p_plus(phi)`` with the diagonal is located numerically.

    Raises
    ------
    SubcriticalTemperature
        If ``beta * coupling`` is below the critical value of the noise kind.
    """
    kind = _as_kind(noise_kind)
    crit = critical_beta_j(kind)
    bj = beta * coupling
    if bj < crit and not math.isclose(bj, crit, rel_tol=1e-12):
        raise SubcriticalTemperature(
            f"beta*J = {bj:.6g} is below the critical value {crit:.6g}; H* is undefined"
        )
    if kind is NoiseKind.GUMBEL:
        if bj <= 1.0:
            return 0.0
        r = math.sqrt((bj - 1.0) / bj)
        return coupling * r - math.atanh(r) / beta
    return max(_tangency(beta, coupling, kind).field, 0.0)


def phi_star(beta: float, coupling: float = 1.0) -> float:
    """Spinodal adoption fraction for Gumbel noise, ``(1 + sqrt(1 - 1/(beta J))) / 2``."""
    bj = beta * coupling
    if bj <= 1.0:
        raise SubcriticalTemperature(f"beta*J = {bj:.6g} <= 1, no spinodal point")
    return 0.5 * (1.0 + math.sqrt((bj - 1.0) / bj))


@dataclass(frozen=True)
class Equilibria:
    """Fixed points of ``phi = p_plus(phi)`` on [0, 1].

    ``phi_plus`` always holds the largest stable root. ``phi_minus`` and
    ``phi_zero`` are ``None`` unless all three roots are present.
    """

    phi_plus: float
    phi_minus: Optional[float]
    phi_zero: Optional[float]
    h_star: Optional[float]
    phi_star: Optional[float]
    regime: Regime
    roots: tuple = ()
    stable: tuple = ()


def _scan_roots(g, lo=0.0, hi=1.0, points=_ROOT_SCAN_POINTS):
    x = np.linspace(lo, hi, points)
    v = g(x)
    roots = []
    for a, b, va, vb in zip(x[:-1], x[1:], v[:-1], v[1:]):
        if va == 0.0:
            roots.append(float(a))
        elif va * vb < 0.0:
            roots.append(optimize.bisect(g, a, b, xtol=1e-15, maxiter=200))
    if v[-1] == 0.0:
        roots.append(float(x[-1]))
    return roots


def solve_equilibria(params: GameParams) -> Equilibria:
    """Locate and classify all Curie-Weiss fixed points.

    Roots are bracketed on a uniform grid and refined by bisection; a root is
    stable when ``p_plus'(phi) < 1``.
    """
    roots = _scan_roots(lambda x: p_plus(params, x) - x)
    stable = tuple(bool(p_plus_prime(params, r) < 1.0) for r in roots)

    kind = params.noise.kind
    hs = ps = None
    if params.beta * params.coupling > critical_beta_j(kind):
        hs = h_star(params.beta, params.coupling, kind)
        if kind is NoiseKind.GUMBEL:
            ps = phi_star(params.beta, params.coupling)
        else:
            ps = 1.0 - _tangency(params.beta, params.coupling, kind).phi
        regime = (
            Regime.LOW_TEMPERATURE_HYSTERESIS if len(roots) == 3 else Regime.LOW_TEMPERATURE_SINGLE
        )
    else:
        regime = Regime.HIGH_TEMPERATURE

    stable_roots = [r for r, s in zip(roots, stable) if s]
    if not stable_roots:  # cannot happen for a continuous map of [0,1] into (0,1)
        stable_roots = roots
    if len(roots) == 3 and regime is Regime.LOW_TEMPERATURE_HYSTERESIS:
        lo, mid, up = roots
        return Equilibria(up, lo, mid, hs, ps, regime, tuple(roots), stable)
    return Equilibria(max(stable_roots), None, None, hs, ps, regime, tuple(roots), stable)


class Endpoints(NamedTuple):
    meta: int
    unstable: int
    stable: int


def _round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def state_index(phi: float, n_agents: int) -> int:
    """Nearest lattice state ``round(phi * N)``, ties away from zero."""
    return _round_half_away(phi * n_agents)


def trajectory_endpoints(params: GameParams, gamma: float) -> Endpoints:
    """State indices of the metastable, unstable (phi = 1/2) and stable states at ``H = gamma * H*``.

    The field stored in ``params`` is ignored and replaced by ``gamma * H*``.
    """
    if not gamma > 0:
        raise InvalidParameter(f"gamma must be positive, got {gamma}")
    if gamma >= 1:
        raise NoMetastableState(f"gamma = {gamma} >= 1 lies beyond the spinodal field")
    try:
        hs = h_star(params.beta, params.coupling, params.noise.kind)
    except SubcriticalTemperature as exc:
        raise NoMetastableState(str(exc)) from exc
    eq = solve_equilibria(params.with_field(gamma * hs))
    if eq.regime is not Regime.LOW_TEMPERATURE_HYSTERESIS:
        raise NoMetastableState(f"no three-root structure at beta={params.beta}, gamma={gamma}")
    n = params.n_agents
    return Endpoints(state_index(eq.phi_minus, n), state_index(0.5, n), state_index(eq.phi_plus, n))


def metastable_endpoints(params: GameParams) -> Endpoints:
    """Like :func:`trajectory_endpoints` but uses the field already in ``params``."""
    eq = solve_equilibria(params)
    if eq.regime is not Regime.LOW_TEMPERATURE_HYSTERESIS:
        raise NoMetastableState(
            f"no three-root structure at beta={params.beta}, H={params.field}"
        )
    n = params.n_agents
    return Endpoints(state_index(eq.phi_minus, n), state_index(0.5, n), state_index(eq.phi_plus, n))


def fp_potential(params: GameParams, phi_grid) -> np.ndarray:
    """Continuum effective potential from the stationary Fokker-Planck density.

    Integrates ``-(N/2) * (t - m) / (1 - m t)`` with ``m = 2 phi - 1`` and
    ``t = 2 p_plus(phi) - 1`` (``t = tanh(beta H + beta J m)`` for Gumbel noise)
    by cumulative Simpson quadrature from the first grid point. The result is
    shifted so that its minimum is zero.

    Raises
    ------
    QuadratureFailure
        If the denominator ``1 - m t`` drops below 1e-14 on the grid.
    """
    x = np.asarray(phi_grid, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise InvalidParameter("phi_grid must be a 1-d array with at least two points")
    if np.any(x <= 0.0) or np.any(x >= 1.0) or np.any(np.diff(x) <= 0):
        raise InvalidParameter("phi_grid must be strictly increasing inside (0, 1)")
    m = 2.0 * x - 1.0
    t = 2.0 * p_plus(params, x) - 1.0
    den = 1.0 - m * t
    if np.min(den) < 1e-14:
        raise QuadratureFailure(f"integrand denominator {np.min(den):.3e} below 1e-14")
    integral = cumulative_simpson((t - m) / den, x=x, initial=0.0)
    v = -0.5 * params.n_agents * integral
    return v - v.min()
