"""Escape from the metastable state: where the mean escape time is minimal in k.

Two routes to the minimizing flip fraction ``rho_min = k*/N``:

* exact: scan ``k = 1..N`` and take the argmin of the mean hitting time;
* estimated: at the point ``phi_mid`` of strongest restoring drift, find the
  ``k`` where the growth of the drift magnitude with ``k`` equals the growth
  of the step-size standard deviation with ``k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, TextIO

import numpy as np
from scipy import optimize

from ._parallel import ordered_map
from .chain import hitting_curve, hitting_moments
from .errors import InvalidParameter, KFlipError, NoMetastableState
from .model import (
    GameParams,
    Regime,
    h_star,
    metastable_endpoints,
    p_plus,
    solve_equilibria,
)
from .transition import dsigma_dk

_MID_SCAN_POINTS = 256
_K_SCAN_POINTS = 1024


@dataclass(frozen=True)
class EscapeEstimate:
    phi_mid: Optional[float] = None
    k_min_estimated: Optional[float] = None
    rho_min_estimated: Optional[float] = None
    k_min_exact: Optional[int] = None
    rho_min_exact: Optional[float] = None


def _three_roots(params: GameParams):
    eq = solve_equilibria(params)
    if eq.regime is not Regime.LOW_TEMPERATURE_HYSTERESIS:
        raise NoMetastableState(f"no metastable state at beta={params.beta}, H={params.field}")
    return eq


def phi_mid(params: GameParams) -> float:
    """Point between the metastable and unstable roots where ``|p_plus(phi) - phi|`` peaks."""
    eq = _three_roots(params)
    lo, hi = eq.phi_minus, eq.phi_zero
    drift = lambda x: -abs(p_plus(params, x) - x)
    grid = np.linspace(lo, hi, _MID_SCAN_POINTS)
    m = int(np.argmin(drift(grid)))
    m = min(max(m, 1), len(grid) - 2)
    res = optimize.minimize_scalar(
        drift, bracket=(grid[m - 1], grid[m], grid[m + 1]), method="golden", tol=1e-10
    )
    return float(res.x)


def kmin_balance(params: GameParams, phi: float, k: float) -> float:
    """``-d<dphi>/dk - d sigma/dk`` at ``phi``; zero at the estimated ``k_min``."""
    n = params.n_agents
    p = p_plus(params, phi)
    return -(p - phi) / n - dsigma_dk(n, k, p, phi)


def estimate_k_min(params: GameParams) -> EscapeEstimate:
    """Estimate ``k_min`` by balancing restoring-drift growth against diffusion growth.

    ``k`` is treated as continuous on ``[1, N]`` and the smallest root of
    :func:`kmin_balance` is returned. With no root on the interval the
    escape time is taken to decrease monotonically and ``rho = 1`` is reported.
    """
    n = params.n_agents
    if n < 2:
        raise InvalidParameter("k_min estimate needs N >= 2")
    mid = phi_mid(params)
    f = lambda k: kmin_balance(params, mid, k)
    ks = np.linspace(1.0, float(n), _K_SCAN_POINTS)
    vals = np.array([f(k) for k in ks])
    change = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)
    if change.size == 0:
        return EscapeEstimate(phi_mid=mid, k_min_estimated=float(n), rho_min_estimated=1.0)
    a, b = ks[change[0]], ks[change[0] + 1]
    k = a if vals[change[0]] == 0.0 else optimize.bisect(f, a, b, xtol=1e-10, maxiter=200)
    return EscapeEstimate(phi_mid=mid, k_min_estimated=float(k), rho_min_estimated=k / n)


def exact_rho_min(
    params: GameParams, start: int, target: int, ks: Optional[Sequence[int]] = None, threads: int = 1
) -> EscapeEstimate:
    """Integer ``k`` minimizing the mean hitting time ``start -> target``; ties go to smaller ``k``."""
    curve = hitting_curve(params, start, target, ks, threads)
    m = int(np.argmin(curve.T))
    k = int(curve.ks[m])
    return EscapeEstimate(k_min_exact=k, rho_min_exact=k / params.n_agents)


def rho_min_analysis(params: GameParams, threads: int = 1) -> EscapeEstimate:
    """Exact and estimated minimum for the metastable -> stable trajectory."""
    ends = metastable_endpoints(params)
    est = estimate_k_min(params)
    exact = exact_rho_min(params, ends.meta, ends.stable, threads=threads)
    return replace(est, k_min_exact=exact.k_min_exact, rho_min_exact=exact.rho_min_exact)


def end_slope(params: GameParams) -> float:
    """``ln[T(k=N) / T(k=N-1)]`` for the metastable -> stable trajectory.

    Positive when the mean escape time grows as ``k`` approaches ``N``
    (an interior minimum exists), negative for a monotone decrease.
    """
    n = params.n_agents
    if n < 2:
        raise InvalidParameter("end slope needs N >= 2")
    ends = metastable_endpoints(params)
    t_n, _ = hitting_moments(params.with_k(n), ends.meta, ends.stable)
    t_prev, _ = hitting_moments(params.with_k(n - 1), ends.meta, ends.stable)
    return math.log(t_n / t_prev)


@dataclass(frozen=True, eq=False)
class PhaseDiagram:
    """End-slope indicator on a ``beta x (gamma | N)`` grid; NaN marks failed cells."""

    betas: np.ndarray
    values: np.ndarray
    axis: str
    log_ratio: np.ndarray

    def to_csv(self, fh: TextIO) -> None:
        second = "gamma" if self.axis == "gamma" else "N"
        fh.write(f"beta,{second},log_ratio\n")
        for a, b in enumerate(self.betas):
            for c, v in enumerate(self.values):
                x = self.log_ratio[a, c]
                vs = f"{int(v)}" if self.axis == "n" else f"{v:.17g}"
                xs = "" if math.isnan(x) else f"{x:.17g}"
                fh.write(f"{b:.17g},{vs},{xs}\n")


def phase_diagram(
    betas: Sequence[float],
    values: Sequence[float],
    axis: str = "gamma",
    n_agents: int = 80,
    gamma: float = 0.8,
    coupling: float = 1.0,
    noise: str = "gumbel",
    threads: int = 1,
) -> PhaseDiagram:
    """Grid of :func:`end_slope` values.

    Parameters
    ----------
    betas : sequence of float
        First grid axis.
    values : sequence
        Second axis: ``gamma`` values at fixed ``n_agents`` when
        ``axis="gamma"``, system sizes at fixed ``gamma`` when ``axis="n"``.
    """
    if axis not in ("gamma", "n"):
        raise InvalidParameter(f"axis must be 'gamma' or 'n', got {axis!r}")
    betas = np.asarray(betas, dtype=float)
    values = np.asarray(values, dtype=int if axis == "n" else float)

    def cell(idx):
        b, v = betas[idx[0]], values[idx[1]]
        try:
            g, n = (v, n_agents) if axis == "gamma" else (gamma, int(v))
            if not 0 < g < 1:
                raise NoMetastableState(f"gamma={g} outside (0, 1)")
            hs = h_star(b, coupling, noise)
            params = GameParams.create(n, n, b, g * hs, coupling, noise)
            return end_slope(params)
        except KFlipError:
            return math.nan

    cells = [(a, c) for a in range(len(betas)) for c in range(len(values))]
    out = np.array(ordered_map(cell, cells, threads)).reshape(len(betas), len(values))
    return PhaseDiagram(betas, values, axis, out)
