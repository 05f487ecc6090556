"""Domain types, the negative-binomial GLC likelihood and prior densities.

All samplers go through this module for probability computations.  Time is
0-based: index 0 always opens segment 1.

The negative binomial is parameterised by mean ``mu`` and dispersion ``phi``
with variance ``mu + mu**2 / phi`` (scipy's ``nbinom(n=phi, p=phi/(mu+phi))``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from numba import njit
from scipy.special import gammaln

EPS_MEAN = 1e-10
PHI_MAX = 100.0


class DomainError(ValueError):
    """Raised for arguments outside a density's domain."""


class InfeasibleError(ValueError):
    """Raised when a requested segmentation cannot exist under the gap rule."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EpidemicSeries:
    """Observed cumulative counts ``C_1..C_T`` plus ``C_0`` and population ``N``."""

    initial_count: int
    cumulative: np.ndarray
    population: int
    dates: tuple[str, ...] | None = None

    def __post_init__(self):
        cum = np.asarray(self.cumulative, dtype=np.int64)
        if cum.ndim != 1 or cum.size == 0:
            raise ValueError("cumulative must be a non-empty 1-d sequence")
        if self.initial_count < 0:
            raise ValueError("initial_count must be nonnegative")
        if self.population <= 0:
            raise ValueError("population must be positive")
        new = np.diff(cum, prepend=self.initial_count)
        if np.any(new < 0):
            bad = int(np.flatnonzero(new < 0)[0])
            raise ValueError(f"cumulative count decreases at index {bad}")
        if cum[-1] > self.population:
            raise ValueError("cumulative count exceeds population")
        if self.dates is not None and len(self.dates) != cum.size:
            raise ValueError("dates must match the series length")
        cum.setflags(write=False)
        object.__setattr__(self, "cumulative", cum)
        object.__setattr__(self, "initial_count", int(self.initial_count))
        object.__setattr__(self, "population", int(self.population))

    @property
    def T(self) -> int:
        return int(self.cumulative.size)

    @cached_property
    def new_cases(self) -> np.ndarray:
        new = np.diff(self.cumulative, prepend=self.initial_count)
        new.setflags(write=False)
        return new

    @cached_property
    def previous_cumulative(self) -> np.ndarray:
        """``C_{t-1}`` for each t, with ``C_0`` for the first point."""
        prev = np.concatenate(([self.initial_count], self.cumulative[:-1]))
        prev.setflags(write=False)
        return prev

    def head(self, n: int) -> "EpidemicSeries":
        """The first ``n`` observations as a new series."""
        dates = None if self.dates is None else self.dates[:n]
        return EpidemicSeries(self.initial_count, self.cumulative[:n], self.population, dates)

    def __eq__(self, other):
        if not isinstance(other, EpidemicSeries):
            return NotImplemented
        return (
            self.initial_count == other.initial_count
            and self.population == other.population
            and np.array_equal(self.cumulative, other.cumulative)
            and self.dates == other.dates
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Segmentation:
    """Change-point indicator vector ``delta`` and its derived labels.

    Construction does not enforce the gap rule; infeasible indicators are
    representable so that proposals can be scored (and rejected) by the prior.
    Use :func:`segmentation_is_valid` to check the structural invariants.
    """

    indicator: np.ndarray

    def __post_init__(self):
        ind = np.asarray(self.indicator, dtype=np.uint8)
        if ind.ndim != 1 or ind.size == 0:
            raise ValueError("indicator must be a non-empty 1-d sequence")
        if ind[0] != 1:
            raise ValueError("indicator[0] must be 1")
        if np.any(ind > 1):
            raise ValueError("indicator must be binary")
        ind.setflags(write=False)
        object.__setattr__(self, "indicator", ind)

    @classmethod
    def from_changepoints(cls, T: int, changepoints: Sequence[int]) -> "Segmentation":
        """Build from the free change points (index 0 is implied)."""
        ind = np.zeros(T, dtype=np.uint8)
        ind[0] = 1
        cps = [int(c) for c in changepoints]
        if any(c <= 0 or c >= T for c in cps):
            raise ValueError("change points must lie in [1, T-1]")
        ind[cps] = 1
        return cls(ind)

    @property
    def T(self) -> int:
        return int(self.indicator.size)

    @cached_property
    def starts(self) -> np.ndarray:
        """Start index of each segment (``starts[0] == 0``)."""
        return np.flatnonzero(self.indicator)

    @property
    def changepoints(self) -> list[int]:
        return [int(s) for s in self.starts[1:]]

    @property
    def segment_count(self) -> int:
        return int(self.starts.size)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.cumsum(self.indicator, dtype=np.int64)

    def bounds(self, segment_index: int) -> tuple[int, int]:
        """Half-open ``[start, stop)`` range of 1-based segment ``segment_index``."""
        starts = self.starts
        if not 1 <= segment_index <= starts.size:
            raise IndexError(f"segment_index {segment_index} outside 1..{starts.size}")
        stop = starts[segment_index] if segment_index < starts.size else self.T
        return int(starts[segment_index - 1]), int(stop)

    def __eq__(self, other):
        if not isinstance(other, Segmentation):
            return NotImplemented
        return np.array_equal(self.indicator, other.indicator)

    __hash__ = None


class SegmentParams(NamedTuple):
    """Growth parameters of one sub-epidemic."""

    final_size: float  # K
    growth_rate: float  # lambda
    scaling: float  # p


@dataclass(frozen=True, eq=False)
class ModelState:
    segmentation: Segmentation
    params: tuple[SegmentParams, ...]
    dispersion: float

    def __post_init__(self):
        params = tuple(SegmentParams(*map(float, p)) for p in self.params)
        if len(params) != self.segmentation.segment_count:
            raise ValueError(
                f"{len(params)} parameter sets for {self.segmentation.segment_count} segments"
            )
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "dispersion", float(self.dispersion))

    @property
    def segment_count(self) -> int:
        return len(self.params)

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        return (
            self.segmentation == other.segmentation
            and self.params == other.params
            and self.dispersion == other.dispersion
        )

    __hash__ = None


@dataclass(frozen=True)
class PriorSpec:
    omega_default: float = 0.001
    omega_overrides: Mapping[int, float] = field(default_factory=dict)
    q_gap: int = 7
    rho: float = 0.3
    a_lambda: float = 0.001
    b_lambda: float = 0.001
    a_phi: float = 0.001
    b_phi: float = 0.001
    a_p: float = 1.0
    b_p: float = 1.0
    eta: float = 1e-4
    m_max: int = 50

    def __post_init__(self):
        if not 0.0 < self.omega_default < 1.0:
            raise ValueError("omega_default must lie in (0, 1)")
        for t, w in self.omega_overrides.items():
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"omega override at {t} is not a probability")
        if self.q_gap < 1:
            raise ValueError("q_gap must be positive")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")
        for name in ("a_lambda", "b_lambda", "a_phi", "b_phi", "a_p", "b_p", "eta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.m_max < 1:
            raise ValueError("m_max must be positive")
        overrides = {int(t): float(w) for t, w in self.omega_overrides.items()}
        object.__setattr__(self, "omega_overrides", overrides)

    def k_upper(self, population: int) -> int:
        """``ceil(rho * N)``, the largest admissible final size."""
        return math.ceil(self.rho * population)

    def omega(self, T: int) -> np.ndarray:
        """Per-index inclusion probabilities with the structural zeros/ones."""
        q = self.q_gap
        w = np.zeros(T)
        w[0] = 1.0
        if T - q >= q:
            w[q : T - q + 1] = self.omega_default
        for t, v in self.omega_overrides.items():
            if not q <= t <= T - q:
                raise ValueError(f"omega override at {t} is outside the free region [{q}, {T - q}]")
            w[t] = v
        return w


@dataclass(frozen=True)
class SamplerConfig:
    total_iterations: int = 100_000
    burn_in: int = 50_000
    step_phi: float = 1.0
    step_K: float = 1.0
    step_lambda: float = 0.1
    step_p: float = 0.1
    seed: int = 0
    paper_approx_ratios: bool = False

    def __post_init__(self):
        if self.total_iterations <= 0:
            raise ValueError("total_iterations must be positive")
        if not 0 <= self.burn_in < self.total_iterations:
            raise ValueError("burn_in must lie in [0, total_iterations)")
        for name in ("step_phi", "step_K", "step_lambda", "step_p"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------


def glc_mean(prev_cumulative: float, params: SegmentParams) -> float:
    """Discrete GLC increment ``lambda * C**p * (1 - C/K)``, floored at ``EPS_MEAN``.

    ``0**0`` is taken as 1 so the linear-growth limit is continuous.
    """
    K, lam, p = params
    if prev_cumulative < 0:
        raise DomainError("prev_cumulative must be nonnegative")
    c = float(prev_cumulative)
    value = lam * c**p * (1.0 - c / K)
    return value if value > EPS_MEAN else EPS_MEAN


def glc_mean_array(prev_cumulative: np.ndarray, K, lam, p) -> np.ndarray:
    """Vectorised :func:`glc_mean`; parameters broadcast against ``prev_cumulative``."""
    c = np.asarray(prev_cumulative, dtype=float)
    value = lam * np.power(c, p) * (1.0 - c / K)
    return np.maximum(value, EPS_MEAN)


def nb_log_pmf(count, mean, dispersion):
    """Log NB pmf with mean/dispersion parameterisation; vectorised."""
    y = np.asarray(count, dtype=float)
    mu = np.asarray(mean, dtype=float)
    phi = np.asarray(dispersion, dtype=float)
    if np.any(mu <= 0) or np.any(phi <= 0):
        raise DomainError("NB mean and dispersion must be positive")
    if np.any(y < 0):
        raise DomainError("NB count must be nonnegative")
    out = (
        gammaln(y + phi)
        - gammaln(y + 1.0)
        - gammaln(phi)
        - phi * np.log1p(mu / phi)
        + y * (np.log(mu) - np.log(mu + phi))
    )
    return float(out) if out.ndim == 0 else out


@njit(cache=True)
def _segment_ll_kernel(y, cprev, lgy1, start, stop, K, lam, p, phi):
    lg_phi = math.lgamma(phi)
    total = 0.0
    for t in range(start, stop):
        c = cprev[t]
        mu = lam * c**p * (1.0 - c / K)
        if mu < 1e-10:
            mu = 1e-10
        yt = y[t]
        total += (
            math.lgamma(yt + phi)
            - lgy1[t]
            - lg_phi
            - phi * math.log1p(mu / phi)
            + yt * (math.log(mu) - math.log(mu + phi))
        )
    return total


def segment_log_lik(
    series: EpidemicSeries,
    segmentation: Segmentation,
    segment_index: int,
    params: SegmentParams,
    dispersion: float,
) -> float:
    """NB log-likelihood of the time points carrying label ``segment_index``."""
    if dispersion <= 0:
        raise DomainError("dispersion must be positive")
    start, stop = segmentation.bounds(segment_index)
    y = series.new_cases.astype(float)
    return float(
        _segment_ll_kernel(
            y, series.previous_cumulative.astype(float), gammaln(y + 1.0), start, stop, *params, dispersion
        )
    )


def full_log_lik(series: EpidemicSeries, state: ModelState) -> float:
    seg = state.segmentation
    if seg.T != series.T:
        raise ValueError("segmentation length does not match the series")
    return float(
        sum(
            segment_log_lik(series, seg, m, state.params[m - 1], state.dispersion)
            for m in range(1, state.segment_count + 1)
        )
    )


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


def segmentation_is_valid(segmentation: Segmentation, q_gap: int) -> bool:
    """Forced positions and the minimum-gap rule."""
    T = segmentation.T
    starts = segmentation.starts
    if starts[0] != 0:
        return False
    if starts.size > 1:
        if np.any(np.diff(starts) < q_gap):
            return False
        if starts[-1] > T - q_gap:
            return False
    return T >= q_gap


def log_prior_indicator(segmentation: Segmentation, prior: PriorSpec) -> float:
    """Bernoulli log prior over the free positions ``[Q, T-Q]``; ``-inf`` if infeasible."""
    if not segmentation_is_valid(segmentation, prior.q_gap):
        return -math.inf
    T, q = segmentation.T, prior.q_gap
    if T - q < q:
        return 0.0
    w = prior.omega(T)[q : T - q + 1]
    d = segmentation.indicator[q : T - q + 1].astype(bool)
    with np.errstate(divide="ignore"):
        terms = np.where(d, np.log(w), np.log1p(-w))
    return float(terms.sum())


def _gamma_logpdf(x: float, a: float, b: float) -> float:
    # rate parameterisation
    if x <= 0:
        return -math.inf
    return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(x) - b * x


def _beta_logpdf(x: float, a: float, b: float) -> float:
    if not 0.0 <= x <= 1.0:
        return -math.inf
    norm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    out = norm
    if a != 1.0:
        out += (a - 1.0) * math.log(x) if x > 0 else (math.inf if a < 1 else -math.inf)
    if b != 1.0:
        out += (b - 1.0) * math.log1p(-x) if x < 1 else (math.inf if b < 1 else -math.inf)
    return out


def log_prior_segment_params(
    params: SegmentParams, segment_max_cumulative: int, prior: PriorSpec, population: int
) -> float:
    """Uniform(max C, ceil(rho N)] on K, Gamma on lambda, Beta on p.

    K is treated as continuous so the density is ``1 / (ceil(rho N) - max C)``.
    """
    K, lam, p = params
    upper = prior.k_upper(population)
    if not segment_max_cumulative < K <= upper:
        return -math.inf
    out = -math.log(upper - segment_max_cumulative)
    out += _gamma_logpdf(lam, prior.a_lambda, prior.b_lambda)
    out += _beta_logpdf(p, prior.a_p, prior.b_p)
    return out


def log_prior_dispersion(dispersion: float, prior: PriorSpec) -> float:
    if not 0.0 < dispersion <= PHI_MAX:
        return -math.inf
    return _gamma_logpdf(dispersion, prior.a_phi, prior.b_phi)


def _log_truncated_poisson_norm(eta: float, m_max: int) -> float:
    m = np.arange(1, m_max + 1)
    terms = m * math.log(eta) - gammaln(m + 1.0)
    top = terms.max()
    return float(top + math.log(np.exp(terms - top).sum()))


def log_prior_segment_count(m: int, prior: PriorSpec) -> float:
    """Poisson(eta) truncated to ``[1, m_max]``."""
    if not 1 <= m <= prior.m_max:
        return -math.inf
    return m * math.log(prior.eta) - math.lgamma(m + 1.0) - _log_truncated_poisson_norm(
        prior.eta, prior.m_max
    )


def log_indicator_normalizers(T: int, prior: PriorSpec, m_max: int) -> np.ndarray:
    """``log Z_M`` for M = 0..m_max, where ``Z_M`` sums the Bernoulli prior
    over every feasible indicator with exactly M segments (entry 0 unused).

    ``log_prior_indicator - log Z_M`` is then the conditional log prior of
    the indicator given M.  Infeasible M get ``-inf``.
    """
    q = prior.q_gap
    out = np.full(m_max + 1, -np.inf)
    if T < q:
        return out
    w = prior.omega(T)
    with np.errstate(divide="ignore"):
        lw1 = np.log(w)
        lw0 = np.log1p(-w)
    # forced zeros outside the free region carry weight 1
    free = np.zeros(T, dtype=bool)
    if T - q >= q:
        free[q : T - q + 1] = True
    lw1[~free] = -np.inf
    lw0[~free] = 0.0
    # dp[k, d]: k change points so far (segments - 1), d = steps since last one, capped at q
    dp = np.full((m_max, q + 1), -np.inf)
    dp[0, 1] = 0.0  # index 0 opens segment 1
    for t in range(1, T):
        new = np.full_like(dp, -np.inf)
        # no change point at t
        stay = dp + lw0[t]
        new[:, 2:] = np.logaddexp(new[:, 2:], stay[:, 1:-1])
        new[:, q] = np.logaddexp(new[:, q], stay[:, q])
        # change point at t; requires the previous one q or more steps back
        if lw1[t] > -np.inf:
            new[1:, 1] = np.logaddexp(new[1:, 1], dp[:-1, q] + lw1[t])
        dp = new
    # drop the d index; a trailing segment shorter than q is excluded by the forced zeros
    with np.errstate(invalid="ignore"):
        tot = np.logaddexp.reduce(dp, axis=1)
    out[1:] = tot
    return out


class LogDensity:
    """Log-likelihood and log-prior terms for one series, keyed by segment bounds.

    This is the evaluator the samplers use; segments are passed as ``starts``
    arrays (sorted segment start indices, ``starts[0] == 0``) instead of
    :class:`Segmentation` objects.  With ``use_likelihood=False`` every
    likelihood term is zero, so the chain samples the prior.
    """

    def __init__(self, series: EpidemicSeries, prior: PriorSpec, use_likelihood: bool = True):
        self.series = series
        self.prior = prior
        self.use_likelihood = use_likelihood
        self.T = series.T
        self.q = prior.q_gap
        self.y = series.new_cases.astype(float)
        self.cprev = series.previous_cumulative.astype(float)
        self.cum = series.cumulative.astype(float)
        self.lgy1 = gammaln(self.y + 1.0)
        self.k_upper = float(prior.k_upper(series.population))
        if self.cum[-1] >= self.k_upper:
            raise InfeasibleError("observed cumulative count reaches ceil(rho*N); no admissible K")
        self._lam_norm = prior.a_lambda * math.log(prior.b_lambda) - math.lgamma(prior.a_lambda)
        self._p_uniform = prior.a_p == 1.0 and prior.b_p == 1.0
        w = prior.omega(self.T)
        free = np.zeros(self.T, dtype=bool)
        if self.T - self.q >= self.q:
            free[self.q : self.T - self.q + 1] = True
        with np.errstate(divide="ignore"):
            lw1 = np.log(w)
            lw0 = np.log1p(-w)
        self._lw1 = np.where(free, lw1, -np.inf)
        self._neg0 = free & np.isneginf(lw0)
        self._lw0 = np.where(free & ~self._neg0, lw0, 0.0)
        self._base0 = float(self._lw0.sum())
        self._n_neg0 = int(self._neg0.sum())
        self._log_z: np.ndarray | None = None
        self._log_m_norm = _log_truncated_poisson_norm(prior.eta, prior.m_max)

    # likelihood -------------------------------------------------------------

    def seg_ll(self, start: int, stop: int, params, phi: float) -> float:
        if not self.use_likelihood:
            return 0.0
        K, lam, p = params
        return _segment_ll_kernel(self.y, self.cprev, self.lgy1, start, stop, K, lam, p, phi)

    def seg_lls(self, starts, params, phi: float) -> list[float]:
        bounds = list(starts) + [self.T]
        return [self.seg_ll(bounds[i], bounds[i + 1], params[i], phi) for i in range(len(params))]

    # priors -----------------------------------------------------------------

    def max_cum(self, stop: int) -> float:
        return self.cum[stop - 1]

    def seg_lp(self, stop: int, params) -> float:
        """Log prior of one segment's parameters; the segment ends at ``stop``."""
        K, lam, p = params
        lo = self.cum[stop - 1]
        if not (lo < K <= self.k_upper) or lam <= 0.0 or not 0.0 <= p <= 1.0:
            return -math.inf
        out = -math.log(self.k_upper - lo)
        pr = self.prior
        out += self._lam_norm + (pr.a_lambda - 1.0) * math.log(lam) - pr.b_lambda * lam
        if not self._p_uniform:
            out += _beta_logpdf(p, pr.a_p, pr.b_p)
        return out

    def seg_lps(self, starts, params) -> list[float]:
        stops = list(starts[1:]) + [self.T]
        return [self.seg_lp(stops[i], params[i]) for i in range(len(params))]

    def indicator_lp(self, starts) -> float:
        """Unconditional Bernoulli log prior of the indicator with these starts."""
        q, T = self.q, self.T
        if starts[0] != 0 or T < q:
            return -math.inf
        total = self._base0
        neg = self._n_neg0
        prev = 0
        for t in starts[1:]:
            if t - prev < q:
                return -math.inf
            total += self._lw1[t] - self._lw0[t]
            neg -= self._neg0[t]
            prev = t
        if prev > T - q or neg > 0:
            return -math.inf
        return float(total)

    def log_z(self, m: int) -> float:
        if self._log_z is None:
            self._log_z = log_indicator_normalizers(self.T, self.prior, self.prior.m_max)
        if not 1 <= m < self._log_z.size:
            return -math.inf
        return float(self._log_z[m])

    def indicator_lp_given_m(self, starts) -> float:
        """Conditional log prior ``log pi(delta | M)``."""
        lp = self.indicator_lp(starts)
        if lp == -math.inf:
            return lp
        return lp - self.log_z(len(starts))

    def m_lp(self, m: int) -> float:
        if not 1 <= m <= self.prior.m_max:
            return -math.inf
        return m * math.log(self.prior.eta) - math.lgamma(m + 1.0) - self._log_m_norm

    def phi_lp(self, phi: float) -> float:
        return log_prior_dispersion(phi, self.prior)
