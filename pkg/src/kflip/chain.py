"""Stationary distribution and first-hitting-time moments of the k-flip chain.

Two independent routes to hitting moments are provided:

* the fundamental matrix ``Z = (I - Omega + Pi)^-1`` of the ergodic chain,
  giving every pair ``(i, j)`` at once;
* a direct solve of the first-step recurrences for one target state.

Hitting times into states with tiny stationary weight are astronomically
large and cannot be resolved in double precision by either route, so
callers should restrict checks to the targets they care about (``targets``).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, TextIO

import numpy as np
from scipy import linalg

from ._parallel import ordered_map
from .errors import (
    IllConditioned,
    NegativeVariance,
    NonPositiveStationary,
    SingularSystem,
)
from .model import GameParams
from .transition import TransitionMatrix, build_transition_matrix

log = logging.getLogger(__name__)

STATIONARY_RESIDUAL_TOL = 1e-10
STATIONARY_RELATIVE_TOL = 1e-8
FUNDAMENTAL_RESIDUAL_TOL = 1e-8
NEGATIVE_DUST = 1e-13
VARIANCE_DUST = 1e-6
_POWER_TOL = 1e-13
_POWER_MAX_ITER = 1_000_000
# keep the unnormalized GTH back-substitution inside the float range
_GTH_RESCALE = 1e200


def _as_array(omega) -> np.ndarray:
    if isinstance(omega, TransitionMatrix):
        return omega.matrix
    return np.asarray(omega, dtype=float)


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    """``pi`` with its max-norm residual ``|pi Omega - pi|`` and the worst residual relative to ``pi``."""

    pi: np.ndarray
    residual: float
    method: str = "gth"
    relative_residual: float = 0.0

    @property
    def potential(self) -> np.ndarray:
        return potential_from_pi(self)


def _gth(P: np.ndarray) -> np.ndarray:
    """Grassmann-Taksar-Heyman elimination; subtraction-free, so tiny entries keep relative accuracy."""
    A = np.array(P, dtype=float, copy=True)
    n = A.shape[0]
    for m in range(n - 1, 0, -1):
        s = A[m, :m].sum()
        if not s > 0.0:
            raise SingularSystem(f"chain is reducible: state {m} cannot reach states below it")
        A[:m, m] /= s
        A[:m, :m] += np.outer(A[:m, m], A[m, :m])
    pi = np.zeros(n)
    pi[0] = 1.0
    for m in range(1, n):
        pi[m] = pi[:m] @ A[:m, m]
        if pi[m] > _GTH_RESCALE:
            pi[: m + 1] /= pi[m]
    return pi / pi.sum()


def _replaced_row_solve(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", linalg.LinAlgWarning)
            pi = linalg.solve(A, b)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    for w in caught:
        log.info("replaced-row solve: %s", w.message)
    if not np.all(np.isfinite(pi)):
        raise SingularSystem("non-finite stationary solution")
    if pi.min() < -NEGATIVE_DUST:
        raise NonPositiveStationary(f"stationary entry {pi.min():.3e} is negative")
    pi = np.where(pi < 0.0, 0.0, pi)
    return pi / pi.sum()


def _power_iteration(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    pi = np.full(n, 1.0 / n)
    for _ in range(_POWER_MAX_ITER):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < _POWER_TOL:
            return nxt
        pi = nxt
    raise SingularSystem(f"power iteration did not converge in {_POWER_MAX_ITER} steps")


def stationary_distribution(omega, method: str = "gth") -> StationaryDistribution:
    """Solve ``pi Omega = pi`` with ``sum(pi) = 1``.

    Parameters
    ----------
    omega : TransitionMatrix or ndarray
        Row-stochastic matrix.
    method : {"gth", "lu"}
        ``"gth"`` uses GTH elimination (default); ``"lu"`` solves
        ``(Omega^T - I) pi = 0`` with the last equation replaced by the
        normalization. Both fall back to power iteration on a singular
        factorization.

    Raises
    ------
    NonPositiveStationary
        An entry is negative beyond round-off or underflowed to zero.
    IllConditioned
        The residual ``max |pi Omega - pi|`` exceeds 1e-10, or some entry
        of ``|pi Omega - pi| / pi`` exceeds 1e-8.
    """
    P = _as_array(omega)
    if method == "gth":
        solver = _gth
    elif method == "lu":
        solver = _replaced_row_solve
    else:
        raise ValueError(f"unknown method {method!r}")
    try:
        pi = solver(P)
    except SingularSystem as exc:
        log.info("direct stationary solve failed (%s); using power iteration", exc)
        pi = _power_iteration(P)
        method = "power"
    if np.any(pi <= 0.0):
        zero = int(np.flatnonzero(pi <= 0.0)[0])
        raise NonPositiveStationary(f"stationary probability of state {zero} is not positive")
    err = np.abs(pi @ P - pi)
    residual = float(np.max(err))
    if residual > STATIONARY_RESIDUAL_TOL:
        raise IllConditioned(f"stationary residual {residual:.3e} exceeds {STATIONARY_RESIDUAL_TOL}")
    # tiny entries can be wrong by orders of magnitude while the absolute residual looks fine
    relative = float(np.max(err / pi))
    if relative > STATIONARY_RELATIVE_TOL:
        raise IllConditioned(f"stationary residual relative to pi is {relative:.3e}")
    pi.setflags(write=False)
    return StationaryDistribution(pi, residual, method, relative)


def potential_from_pi(dist) -> np.ndarray:
    """Effective potential ``-ln pi`` shifted to a zero minimum."""
    pi = dist.pi if isinstance(dist, StationaryDistribution) else np.asarray(dist, float)
    v = -np.log(pi)
    return v - v.min()


def fundamental_matrix(omega, dist: StationaryDistribution) -> np.ndarray:
    """Dense ``(I - Omega + Pi)^-1`` with ``Pi`` the matrix whose rows are ``pi``."""
    P = _as_array(omega)
    n = P.shape[0]
    M = np.eye(n) - P + np.broadcast_to(dist.pi, (n, n))
    try:
        Z = linalg.inv(M)
    except (linalg.LinAlgError, ValueError) as exc:
        raise IllConditioned(str(exc)) from exc
    residual = float(np.max(np.abs(Z @ M - np.eye(n))))
    if not residual < FUNDAMENTAL_RESIDUAL_TOL:
        raise IllConditioned(f"|Z (I - Omega + Pi) - I| = {residual:.3e}")
    return Z


def mean_hitting_times(Z: np.ndarray, dist: StationaryDistribution) -> np.ndarray:
    """``T = (E diag Z - Z + I) D``; the diagonal holds mean return times ``1/pi``."""
    pi = dist.pi
    T = (np.diag(Z)[None, :] - Z) / pi[None, :]
    np.fill_diagonal(T, 1.0 / pi)
    return T


def _columns(n, targets):
    return np.arange(n) if targets is None else np.atleast_1d(np.asarray(targets, dtype=int))


def _checked_variance(T2, T, cols):
    var = T2 - T * T
    dust = (var < 0.0) & (var >= -VARIANCE_DUST * np.abs(T2))
    bad = var[:, cols] < -VARIANCE_DUST * np.abs(T2[:, cols])
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise NegativeVariance(
            f"Var tau[{r},{cols[c]}] = {var[r, cols[c]]:.3e} is negative beyond round-off"
        )
    return np.where(dust, 0.0, var)


def second_moment_hitting(Z, T, dist: StationaryDistribution, targets=None):
    """Second moments of hitting times and the variance matrix.

    Evaluates ``T2 = 2 T D diag Z - 3 T + 2 (I + E diag(Z^2) - Z^2) D``.

    Parameters
    ----------
    targets : sequence of int, optional
        Columns checked for negative variance; all columns when omitted.

    Returns
    -------
    T2, var : ndarray
    """
    pi = dist.pi
    n = len(pi)
    z_diag = np.diag(Z)
    Z2 = Z @ Z
    T2 = 2.0 * T * (z_diag / pi)[None, :] - 3.0 * T
    T2 += 2.0 * (np.eye(n) + np.diag(Z2)[None, :] - Z2) / pi[None, :]
    return T2, _checked_variance(T2, T, _columns(n, targets))


@dataclass(frozen=True, eq=False)
class HittingAnalysis:
    Z: np.ndarray
    T: np.ndarray
    T2: np.ndarray
    var: np.ndarray
    stationary: StationaryDistribution


def analyze(omega, targets=None, dist: Optional[StationaryDistribution] = None) -> HittingAnalysis:
    """Full fundamental-matrix analysis of a chain."""
    dist = stationary_distribution(omega) if dist is None else dist
    Z = fundamental_matrix(omega, dist)
    T = mean_hitting_times(Z, dist)
    T2, var = second_moment_hitting(Z, T, dist, targets)
    return HittingAnalysis(Z, T, T2, var, dist)


def hitting_times_linear_solve(omega, target: int):
    """First two hitting-time moments into ``target`` from the first-step recurrences.

    With ``Q`` the matrix with row and column ``target`` removed, solves
    ``(I - Q) t = 1`` and ``(I - Q) t2 = 1 + 2 Q t``. Entry ``target`` of the
    returned vectors holds the moments of the return time.

    Returns
    -------
    t, t2 : ndarray, shape (N+1,)
    """
    P = _as_array(omega)
    n = P.shape[0]
    keep = np.arange(n) != target
    Q = P[np.ix_(keep, keep)]
    try:
        lu = linalg.lu_factor(np.eye(n - 1) - Q, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    if np.any(np.diag(lu[0]) == 0.0):
        raise SingularSystem(f"I - Q is singular for target {target}")
    ones = np.ones(n - 1)
    t_rest = linalg.lu_solve(lu, ones)
    t2_rest = linalg.lu_solve(lu, ones + 2.0 * (Q @ t_rest))
    if not (np.all(np.isfinite(t_rest)) and np.all(np.isfinite(t2_rest))):
        raise SingularSystem(f"non-finite hitting times for target {target}")
    row = P[target, keep]
    t = np.empty(n)
    t2 = np.empty(n)
    t[keep], t2[keep] = t_rest, t2_rest
    t[target] = 1.0 + row @ t_rest
    t2[target] = 1.0 + row @ t2_rest + 2.0 * (row @ t_rest)
    return t, t2


def hitting_moments(params: GameParams, start: int, target: int):
    """Mean and variance of the hitting time ``start -> target`` for one parameter set."""
    t, t2 = hitting_times_linear_solve(build_transition_matrix(params), target)
    mean, second = t[start], t2[start]
    var = second - mean * mean
    if var < 0.0:
        if var < -VARIANCE_DUST * second:
            raise NegativeVariance(
                f"Var tau = {var:.3e} for {start}->{target} at k={params.k_flip}"
            )
        var = 0.0
    return float(mean), float(var)


@dataclass(frozen=True, eq=False)
class HittingCurve:
    """Hitting-time moments of one trajectory as a function of ``k``.

    ``r_tau`` and ``r_sigma`` are normalized by the ``k = 1`` values.
    """

    params: GameParams
    start: int
    target: int
    ks: np.ndarray
    T: np.ndarray
    var: np.ndarray
    T_k1: float
    var_k1: float

    @property
    def rho(self) -> np.ndarray:
        return self.ks / self.params.n_agents

    @property
    def r_tau(self) -> np.ndarray:
        return self.T / self.T_k1

    @property
    def r_sigma(self) -> np.ndarray:
        return self.var / self.var_k1

    def to_csv(self, fh: TextIO) -> None:
        fh.write("k,rho,T_mean,T_var,r_tau,r_sigma\n")
        for row in zip(self.ks, self.rho, self.T, self.var, self.r_tau, self.r_sigma):
            k, *rest = row
            fh.write(f"{int(k)}," + ",".join(f"{x:.17g}" for x in rest) + "\n")


def hitting_curve(
    params: GameParams,
    start: int,
    target: int,
    ks: Optional[Iterable[int]] = None,
    threads: int = 1,
) -> HittingCurve:
    """Sweep ``k`` at fixed ``(N, beta, H, noise)`` for the trajectory ``start -> target``."""
    n = params.n_agents
    ks = np.arange(1, n + 1) if ks is None else np.asarray(sorted(set(int(k) for k in ks)))
    sweep = ks if ks[0] == 1 else np.concatenate(([1], ks))
    moments = ordered_map(lambda k: hitting_moments(params.with_k(int(k)), start, target), sweep, threads)
    T = np.array([m[0] for m in moments])
    var = np.array([m[1] for m in moments])
    off = len(sweep) - len(ks)
    return HittingCurve(params, start, target, ks, T[off:], var[off:], T[0], var[0])


def r_tau(params: GameParams, start: int, target: int, ks=None, threads: int = 1) -> np.ndarray:
    """Mean hitting time over ``k`` divided by its value at ``k = 1``."""
    return hitting_curve(params, start, target, ks, threads).r_tau


def r_sigma(params: GameParams, start: int, target: int, ks=None, threads: int = 1) -> np.ndarray:
    """Hitting-time variance over ``k`` divided by its value at ``k = 1``."""
    return hitting_curve(params, start, target, ks, threads).r_sigma
