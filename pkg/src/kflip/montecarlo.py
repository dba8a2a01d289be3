"""Seeded simulation of the k-flip dynamics and first-hitting-time sampling.

The walk tracks only the number of ``+1`` agents, which is a sufficient
statistic on the complete graph. Every sample draws from its own generator,
derived from ``(seed, sample index)``, so a batch does not depend on how
samples are scheduled across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numba
import numpy as np
from scipy import stats

from ._parallel import ordered_map
from .errors import AllCensored, Censored, InvalidParameter
from .model import GameParams, p_plus

DEFAULT_MAX_STEPS = 10**9
DEFAULT_BINS = 40
_SEED_LIMIT = 2**64


@dataclass(frozen=True)
class RunConfig:
    """One first-hitting-time experiment.

    Attributes
    ----------
    params : GameParams
    start_state, target_state : int
        States ``0..N``; they must differ.
    n_samples : int
        Number of independent walks.
    seed : int
        Root seed in ``[0, 2**64)``.
    max_steps : int
        Cap per walk; walks reaching it are counted as censored.
    """

    params: GameParams
    start_state: int
    target_state: int
    n_samples: int
    seed: int
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self):
        n = self.params.n_agents
        for name in ("start_state", "target_state"):
            v = getattr(self, name)
            if not 0 <= v <= n:
                raise InvalidParameter(f"{name}={v} outside [0, {n}]")
        if self.start_state == self.target_state:
            raise InvalidParameter("start_state and target_state must differ")
        if self.n_samples < 1:
            raise InvalidParameter(f"n_samples must be >= 1, got {self.n_samples}")
        if self.max_steps < 1:
            raise InvalidParameter(f"max_steps must be >= 1, got {self.max_steps}")
        if not 0 <= self.seed < _SEED_LIMIT:
            raise InvalidParameter(f"seed must be a 64-bit unsigned integer, got {self.seed}")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent PCG64 stream for sample ``index`` under root ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def step(i: int, params: GameParams, rng: np.random.Generator, size: Optional[int] = None):
    """One k-flip update of the ``+1`` count.

    ``h`` of the ``k`` sampled agents currently play ``+1`` (hypergeometric)
    and ``b`` of them choose ``+1`` afterwards (binomial), so the new state is
    ``i - h + b``. With ``size`` given, returns that many independent draws.
    """
    n, k = params.n_agents, params.k_flip
    if not 0 <= i <= n:
        raise InvalidParameter(f"state {i} outside [0, {n}]")
    h = rng.hypergeometric(i, n - i, k, size=size)
    b = rng.binomial(k, p_plus(params, i / n), size=size)
    j = i - h + b
    return int(j) if size is None else j.astype(np.int64)


def _cdf_tables(params: GameParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-state CDFs of ``h`` and ``b``, each of shape ``(N+1, k+1)``.

    Entries from the top of each support onward are set to exactly one so the
    inverse-CDF search always terminates inside the support.
    """
    n, k = params.n_agents, params.k_flip
    states = np.arange(n + 1)
    draws = np.arange(k + 1)
    hcdf = np.cumsum(stats.hypergeom.pmf(draws[None, :], n, states[:, None], k), axis=1)
    p = np.asarray(p_plus(params, states / n), dtype=float)
    bcdf = np.cumsum(stats.binom.pmf(draws[None, :], k, p[:, None]), axis=1)
    h_top = np.minimum(states, k)
    b_top = np.where(p > 0.0, k, 0)
    hcdf[draws[None, :] >= h_top[:, None]] = 1.0
    bcdf[draws[None, :] >= b_top[:, None]] = 1.0
    return np.ascontiguousarray(hcdf), np.ascontiguousarray(bcdf)


@numba.njit(cache=True)
def _inverse_cdf(row, u):
    lo, hi = 0, row.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if u < row[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


@numba.njit(cache=True)
def _table_step(rng, i, hcdf, bcdf):
    h = _inverse_cdf(hcdf[i], rng.random())
    b = _inverse_cdf(bcdf[i], rng.random())
    return i - h + b


@numba.njit(cache=True, nogil=True)
def _walk(rng, start, target, hcdf, bcdf, max_steps):
    # -1 marks a censored walk
    i = start
    for t in range(1, max_steps + 1):
        i = _table_step(rng, i, hcdf, bcdf)
        if i == target:
            return t
    return -1


@numba.njit(cache=True)
def _table_steps(rng, i, hcdf, bcdf, n_draws):
    out = np.empty(n_draws, dtype=np.int64)
    for m in range(n_draws):
        out[m] = _table_step(rng, i, hcdf, bcdf)
    return out


def table_steps(params: GameParams, i: int, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """``n_draws`` one-step transitions from ``i`` using the simulation kernel."""
    hcdf, bcdf = _cdf_tables(params)
    return _table_steps(rng, i, hcdf, bcdf, n_draws)


def _run_one(config: RunConfig, index: int, tables) -> int:
    hcdf, bcdf = tables
    rng = sample_rng(config.seed, index)
    return int(_walk(rng, config.start_state, config.target_state, hcdf, bcdf, config.max_steps))


def sample_hitting_time(config: RunConfig, index: int) -> int:
    """Steps until the walk from ``start_state`` first sits exactly on ``target_state``.

    Raises
    ------
    Censored
        If the target is not reached within ``max_steps``.
    """
    t = _run_one(config, index, _cdf_tables(config.params))
    if t < 0:
        raise Censored(config.max_steps)
    return t


@dataclass(frozen=True, eq=False)
class SimSummary:
    """Statistics of a batch of hitting times.

    ``samples`` holds the uncensored hitting times in sample-index order;
    all statistics are computed on the sorted values so they do not depend
    on evaluation order. With a single sample the variance is reported as 0.
    """

    samples: np.ndarray
    mean: float
    variance: float
    std_error: float
    histogram: tuple[np.ndarray, np.ndarray]
    n_censored: int
    seed: int
    _sorted: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return int(self.samples.size)

    @property
    def variance_std_error(self) -> float:
        """Standard error of the sample variance, ``sqrt((m4 - s**4 (n-3)/(n-1)) / n)``."""
        n = self.n
        if n < 2:
            return 0.0
        x = self._sorted.astype(float)
        m4 = float(np.mean((x - self.mean) ** 4))
        return math.sqrt(max(m4 - self.variance**2 * (n - 3) / (n - 1), 0.0) / n)

    def skewness(self) -> float:
        return float(stats.skew(self._sorted.astype(float)))

    def quantile(self, q) -> float:
        return float(np.quantile(self._sorted, q))

    def to_dict(self) -> dict:
        edges, counts = self.histogram
        return {
            "mean": self.mean,
            "variance": self.variance,
            "std_error": self.std_error,
            "n": self.n,
            "n_censored": self.n_censored,
            "histogram": {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]},
            "seed": self.seed,
        }

    def dump_samples(self, fh: TextIO) -> None:
        for t in self.samples:
            fh.write(f"{int(t)}\n")


def _log_histogram(x: np.ndarray, bins: int):
    lo, hi = float(x[0]), float(x[-1])
    edges = np.geomspace(lo, hi, bins + 1) if hi > lo else np.array([lo, lo + 1.0])
    counts, _ = np.histogram(x, bins=edges)
    return edges, counts


def summarize(samples, n_censored: int, seed: int, bins: int = DEFAULT_BINS) -> SimSummary:
    samples = np.asarray(samples, dtype=np.int64)
    if samples.size == 0:
        raise AllCensored(f"all {n_censored} samples censored")
    x = np.sort(samples)
    n = x.size
    mean = float(np.mean(x))
    variance = float(np.var(x, ddof=1)) if n > 1 else 0.0
    return SimSummary(
        samples=samples,
        mean=mean,
        variance=variance,
        std_error=math.sqrt(variance / n),
        histogram=_log_histogram(x, bins),
        n_censored=n_censored,
        seed=seed,
        _sorted=x,
    )


def run_batch(config: RunConfig, threads: int = 1, bins: int = DEFAULT_BINS) -> SimSummary:
    """Run ``config.n_samples`` independent walks.

    Raises
    ------
    AllCensored
        If no walk reached the target.
    """
    tables = _cdf_tables(config.params)
    raw = np.array(
        ordered_map(lambda idx: _run_one(config, idx, tables), range(config.n_samples), threads),
        dtype=np.int64,
    )
    done = raw >= 0
    return summarize(raw[done], int(np.count_nonzero(~done)), config.seed, bins)
