"""Transition matrix of the k-flip dynamics and one-step moments of phi.

State ``i`` is the number of agents currently playing ``+1``. In one step ``k``
distinct agents are drawn without replacement and each re-decides
independently, choosing ``+1`` with probability ``p_plus(i / N)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import TextIO

import numba
import numpy as np
from scipy import special, stats

from .errors import DegenerateSigma, InstanceTooLarge, InvalidParameter, OverflowGuard
from .model import GameParams, p_plus

log = logging.getLogger(__name__)

# raw row sums further than this from one are renormalized
RENORMALIZE_THRESHOLD = 1e-13
# deviations above this point at a formula error rather than rounding
_SUSPICIOUS_DEVIATION = 1e-8
LOG_MAX = math.log(np.finfo(float).max)

BRUTEFORCE_MAX_N = 14


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Dense row-stochastic matrix over states ``0..N``.

    Attributes
    ----------
    matrix : ndarray, shape (N+1, N+1)
        Read-only transition probabilities ``matrix[i, j] = P(i -> j)``.
    params : GameParams
        Parameters the matrix was built from.
    max_row_deviation : float
        Largest ``|sum_j P(i -> j) - 1|`` before renormalization.
    renormalized : bool
        Whether rows were rescaled to sum to one.
    """

    matrix: np.ndarray
    params: GameParams
    max_row_deviation: float = 0.0
    renormalized: bool = False

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def window(self, i: int) -> tuple[int, int]:
        return reachable_window(self.params.n_agents, self.params.k_flip, i)

    def to_csv(self, fh: TextIO) -> None:
        """Write ``i,j,prob`` rows for every reachable transition."""
        fh.write("i,j,prob\n")
        for i in range(self.n_states):
            lo, hi = self.window(i)
            for j in range(lo, hi + 1):
                fh.write(f"{i},{j},{self.matrix[i, j]:.17g}\n")


def reachable_window(n_agents: int, k_flip: int, i: int) -> tuple[int, int]:
    """Inclusive range of states reachable from ``i`` in one step."""
    return i - min(k_flip, i), i + min(k_flip, n_agents - i)


@numba.njit(cache=True)
def _log_comb_scalar(log_fact, n, r):
    if r < 0 or r > n:
        return -np.inf
    return log_fact[n] - log_fact[r] - log_fact[n - r]


@numba.njit(cache=True)
def _xlog(x, logv):
    # x * log(v) with 0 * log(0) = 0
    return 0.0 if x == 0 else x * logv


@numba.njit(cache=True, nogil=True)
def _fill_omega(n, k, log_p, log_q, log_fact, out, terms):
    """Fill ``out`` row by row; returns the first offending row or -1."""
    for i in range(n + 1):
        norm = log_fact[i] + log_fact[n - i] - log_fact[n]
        lo = i - min(k, i)
        hi = i + min(k, n - i)
        for j in range(lo, hi + 1):
            d = j - i
            a = abs(d)
            d_plus = (a + d) // 2
            d_minus = (a - d) // 2
            top = -np.inf
            m = k - a + 1
            for s in range(m):
                t = (
                    _log_comb_scalar(log_fact, n - k, n - i - s - d_plus)
                    + _log_comb_scalar(log_fact, k, s)
                    + _log_comb_scalar(log_fact, k, s + a)
                    + _xlog(k - s - d_minus, log_p[i])
                    + _xlog(s + d_minus, log_q[i])
                    + norm
                )
                if np.isnan(t) or t > LOG_MAX:
                    return i
                terms[s] = t
                if t > top:
                    top = t
            if top == -np.inf:
                out[i, j] = 0.0
                continue
            acc = 0.0
            for s in range(m):
                acc += np.exp(terms[s] - top)
            out[i, j] = np.exp(top) * acc
    return -1


def build_transition_matrix(params: GameParams) -> TransitionMatrix:
    """Assemble the exact k-flip transition matrix.

    Each entry is a sum over the number ``s`` of sampled agents that choose
    ``-1``; every summand is a product of three binomial coefficients, powers
    of ``p_plus`` and ``i! (N-i)! / N!``, evaluated in log space from a
    log-gamma table and combined with a log-sum-exp anchored at the largest
    term.

    Raises
    ------
    OverflowGuard
        If a log-term is NaN or exceeds the floating-point range.
    """
    n = params.n_agents
    log_fact = special.gammaln(np.arange(n + 1) + 1.0)
    k = params.k_flip
    p = np.asarray(p_plus(params, np.arange(n + 1) / n), dtype=float)
    with np.errstate(divide="ignore"):
        log_p, log_q = np.log(p), np.log1p(-p)
    omega = np.zeros((n + 1, n + 1))
    bad = _fill_omega(n, k, log_p, log_q, log_fact, omega, np.empty(k + 1))
    if bad >= 0:
        raise OverflowGuard(f"log-term out of range in row {bad}")

    sums = omega.sum(axis=1)
    deviation = float(np.max(np.abs(sums - 1.0)))
    renormalized = deviation > RENORMALIZE_THRESHOLD
    if renormalized:
        if deviation > _SUSPICIOUS_DEVIATION:
            log.warning("transition rows deviate from 1 by %.3e before renormalization", deviation)
        else:
            log.debug("renormalizing transition rows, raw deviation %.3e", deviation)
        omega /= sums[:, None]
    omega.setflags(write=False)
    return TransitionMatrix(omega, params, deviation, renormalized)


def transition_prob_bruteforce(params: GameParams, i: int, j: int) -> float:
    """Transition probability from the literal sum over agent-level outcomes.

    ``x1..x4`` count the sampled agents making the moves ``-1 -> +1``,
    ``-1 -> -1``, ``+1 -> +1`` and ``+1 -> -1``. Combinatorial weights are
    exact rationals. Only meant as a test oracle.
    """
    n, k = params.n_agents, params.k_flip
    if n > BRUTEFORCE_MAX_N:
        raise InstanceTooLarge(f"brute force limited to N <= {BRUTEFORCE_MAX_N}, got N={n}")
    n_plus, n_minus = i, n - i
    p = p_plus(params, i / n)
    q = 1.0 - p
    draws = math.perm(n, k)
    total = 0.0
    for x1 in range(k + 1):
        x4 = x1 - (j - i)
        if x4 < 0:
            continue
        for x2 in range(k - x1 - x4 + 1):
            x3 = k - x1 - x2 - x4
            if x3 < 0 or x1 + x2 > n_minus or x3 + x4 > n_plus:
                continue
            multinom = math.factorial(k) // (
                math.factorial(x1) * math.factorial(x2) * math.factorial(x3) * math.factorial(x4)
            )
            weight = Fraction(
                multinom * math.perm(n_minus, x1 + x2) * math.perm(n_plus, x3 + x4), draws
            )
            total += float(weight) * p ** (x1 + x3) * q ** (x2 + x4)
    return total


def transition_prob_convolution(params: GameParams, i: int, j: int) -> float:
    """Transition probability as a hypergeometric-binomial convolution.

    ``h ~ Hypergeometric(N, i, k)`` sampled agents currently play ``+1`` and
    ``b ~ Binomial(k, p_plus)`` of the sampled agents choose ``+1``; the new
    state is ``i - h + b``.
    """
    n, k = params.n_agents, params.k_flip
    p = p_plus(params, i / n)
    h = np.arange(k + 1)
    with np.errstate(divide="ignore"):
        terms = stats.hypergeom.logpmf(h, n, i, k) + stats.binom.logpmf(j - i + h, k, p)
    if np.all(np.isneginf(terms)):
        return 0.0
    return float(np.exp(special.logsumexp(terms)))


@dataclass(frozen=True)
class StepMoments:
    mean_dphi: float
    mean_dphi2: float
    sigma: float


def _check_lattice(params: GameParams, phi: float) -> None:
    x = phi * params.n_agents
    if not (0.0 <= phi <= 1.0) or abs(x - round(x)) > 1e-9:
        raise InvalidParameter(f"phi={phi} is not a lattice state i/N for N={params.n_agents}")


def _second_moment(n, k, p, phi):
    if n == 1:
        # k = N = 1: the finite-population term reduces to N * phi**2
        tail = phi * phi
    else:
        tail = phi * (-k + n + (k - 1) * n * phi) / (n - 1)
    return k / n**2 * (p * p * (k - 1) + p * (1 - 2 * k * phi) + tail)


def sigma_dphi(n: int, k: float, p: float, phi: float) -> float:
    """Standard deviation of the one-step change of phi, with ``k`` allowed to be real.

    Equals the root of ``[k p (1-p) + k (N-k)/(N-1) phi (1-phi)] / N**2``:
    binomial choice noise plus the hypergeometric sampling noise.
    """
    fpc = 0.0 if n == 1 else k * (n - k) / (n - 1)
    var = (k * p * (1 - p) + fpc * phi * (1 - phi)) / n**2
    return math.sqrt(max(var, 0.0))


def step_moments(params: GameParams, phi: float) -> StepMoments:
    """Mean, mean square and standard deviation of the one-step change of phi."""
    _check_lattice(params, phi)
    n, k = params.n_agents, params.k_flip
    p = p_plus(params, phi)
    mean = k / n * (p - phi)
    mean2 = _second_moment(n, k, p, phi)
    # closed-form sigma avoids the cancellation in mean2 - mean**2
    return StepMoments(mean, mean2, sigma_dphi(n, k, p, phi))


def dsigma_dk(n: int, k: float, p: float, phi: float) -> float:
    """``d sigma / dk`` at fixed ``phi`` and ``p``, treating ``k`` as continuous."""
    if n < 2:
        raise InvalidParameter("d sigma / dk needs N >= 2")
    sigma = sigma_dphi(n, k, p, phi)
    if sigma == 0.0:
        raise DegenerateSigma(f"sigma vanishes at k={k}, phi={phi}, p={p}")
    return sigma / (2 * k) - k * phi * (1 - phi) / (2 * sigma * n**2 * (n - 1))


def step_moment_k_derivatives(params: GameParams, phi: float, k: float | None = None):
    """Derivatives of the mean step and of sigma with respect to ``k``.

    Parameters
    ----------
    params : GameParams
    phi : float
        Adoption fraction; need not be a lattice state.
    k : float, optional
        Real-valued flip count overriding ``params.k_flip``.

    Returns
    -------
    d_mean_dk, d_sigma_dk : float
    """
    n = params.n_agents
    k = params.k_flip if k is None else float(k)
    p = p_plus(params, phi)
    return (p - phi) / n, dsigma_dk(n, k, p, phi)
