"""Posterior summaries, change-point intervals and forecasts from a chain trace."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .core_model import EpidemicSeries, LogDensity, ModelState, PriorSpec, glc_mean_array
from .sampler_fixed import ChainTrace

DEFAULT_PROBS = (0.025, 0.25, 0.5, 0.75, 0.975)
PARAM_NAMES = ("final_size", "growth_rate", "scaling")


class EmptyTraceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ParameterQuantiles:
    """Quantiles per segment (``segments[m, j, i]`` is parameter ``j`` of
    segment ``m`` at ``probs[i]``; columns follow :data:`PARAM_NAMES`) and for
    the dispersion.  ``segment_count`` is the M the segment quantiles refer to.
    """

    probs: tuple
    segments: np.ndarray
    dispersion: np.ndarray
    segment_count: int
    n_samples: int

    def segment(self, m: int) -> dict:
        """Quantiles of 1-based segment ``m`` keyed by parameter name."""
        return {name: self.segments[m - 1, j] for j, name in enumerate(PARAM_NAMES)}

    def interval(self, m: int, name: str, lower: float = 0.025, upper: float = 0.975):
        j = PARAM_NAMES.index(name)
        i_lo, i_hi = self.probs.index(lower), self.probs.index(upper)
        return float(self.segments[m - 1, j, i_lo]), float(self.segments[m - 1, j, i_hi])


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    map_state: ModelState
    ppi: np.ndarray
    changepoints: list
    param_quantiles: ParameterQuantiles
    m_posterior: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ForecastResult:
    horizon: int
    draws: np.ndarray
    mean: np.ndarray
    intervals: np.ndarray

    @property
    def lower(self) -> np.ndarray:
        return self.intervals[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.intervals[:, 1]


def _require_samples(trace: ChainTrace) -> None:
    if len(trace) == 0:
        raise EmptyTraceError("trace holds no samples")


def map_estimate(
    trace: ChainTrace,
    series: EpidemicSeries | None = None,
    prior: PriorSpec | None = None,
) -> ModelState:
    """Sample maximising log-likelihood + log pi(delta | M); ties go to the earliest.

    The scores recorded during sampling are used unless both ``series`` and
    ``prior`` are given, in which case they are recomputed from scratch.
    """
    _require_samples(trace)
    if series is None or prior is None:
        score = trace.log_lik + trace.log_prior_indicator
    else:
        dens = LogDensity(series, prior)
        score = np.empty(len(trace))
        for b in range(len(trace)):
            starts = tuple(int(s) for s in np.flatnonzero(trace.indicator[b]))
            params = [tuple(r) for r in trace.segment_params(b)]
            ll = sum(dens.seg_lls(starts, params, float(trace.dispersion[b])))
            score[b] = ll + dens.indicator_lp_given_m(starts)
    # np.argmax returns the first maximiser, which is the tie-breaking rule
    return trace.state(int(np.argmax(score)))


def compute_ppi(trace: ChainTrace) -> np.ndarray:
    """Posterior probability of inclusion: fraction of samples with a change point at t."""
    _require_samples(trace)
    return trace.indicator.mean(axis=0, dtype=float)


def _negative_correlation_pvalue(x: np.ndarray, y: np.ndarray) -> float | None:
    """Lower-tail p-value of the t test for Pearson correlation; None if undefined."""
    if x.min() == x.max() or y.min() == y.max():
        return None
    n = x.size
    r = float(np.corrcoef(x, y)[0, 1])
    if r <= -1.0:
        return 0.0
    if r >= 1.0:
        return 1.0
    t_stat = r * np.sqrt((n - 2) / (1.0 - r * r))
    return float(stats.t.cdf(t_stat, df=n - 2))


def changepoint_intervals(
    trace: ChainTrace, map_state: ModelState, alpha: float = 0.05
) -> list[tuple[int, int]]:
    """Credible interval ``(lo, hi)`` around every MAP change point.

    Starting from change point t, the interval grows one step at a time in
    each direction for as long as the indicator column at the next position
    is significantly negatively correlated with column t.  Growth also stops
    at the series boundary, at a constant column, and at the midpoint towards
    the neighbouring MAP change point, so intervals never overlap.
    """
    B = len(trace)
    if B < 10:
        raise ValueError("changepoint_intervals needs at least 10 samples")
    T = trace.T
    cps = map_state.segmentation.changepoints
    ind = trace.indicator.astype(float)
    out = []
    for k, t in enumerate(cps):
        left_cap = 1 if k == 0 else (cps[k - 1] + t) // 2 + 1
        right_cap = T - 1 if k == len(cps) - 1 else (t + cps[k + 1]) // 2
        x = ind[:, t]
        lo = t
        while lo - 1 >= left_cap:
            pval = _negative_correlation_pvalue(x, ind[:, lo - 1])
            if pval is None or pval >= alpha:
                break
            lo -= 1
        hi = t
        while hi + 1 <= right_cap:
            pval = _negative_correlation_pvalue(x, ind[:, hi + 1])
            if pval is None or pval >= alpha:
                break
            hi += 1
        out.append((lo, hi))
    return out


def modal_segment_count(trace: ChainTrace) -> int:
    """Most frequent M in the trace; ties go to the smaller M."""
    _require_samples(trace)
    return int(np.argmax(np.bincount(trace.segment_count)))


def m_posterior(trace: ChainTrace) -> dict[int, float]:
    _require_samples(trace)
    counts = np.bincount(trace.segment_count)
    return {int(m): float(c) / len(trace) for m, c in enumerate(counts) if c > 0}


def parameter_quantiles(
    trace: ChainTrace, probs: Sequence[float] = DEFAULT_PROBS
) -> ParameterQuantiles:
    """Empirical quantiles with linear interpolation between order statistics
    (the type-7 rule, numpy's default).

    Segment quantiles use only the samples whose M equals the posterior mode,
    since segment identities are only comparable at a common M.  The
    dispersion quantiles use every sample.
    """
    _require_samples(trace)
    probs = tuple(float(q) for q in probs)
    m = modal_segment_count(trace)
    block = trace.params_given_m(m)
    seg = np.quantile(block, probs, axis=0, method="linear")
    seg = np.moveaxis(seg, 0, -1)
    disp = np.quantile(trace.dispersion, probs, method="linear")
    return ParameterQuantiles(probs, seg, disp, m, int(block.shape[0]))


def summarize(
    trace: ChainTrace,
    alpha: float = 0.05,
    probs: Sequence[float] = DEFAULT_PROBS,
) -> PosteriorSummary:
    map_state = map_estimate(trace)
    intervals = changepoint_intervals(trace, map_state, alpha)
    cps = list(zip(map_state.segmentation.changepoints, intervals))
    return PosteriorSummary(
        map_state=map_state,
        ppi=compute_ppi(trace),
        changepoints=cps,
        param_quantiles=parameter_quantiles(trace, probs),
        m_posterior=m_posterior(trace),
    )


def fitted_mean(series: EpidemicSeries, state: ModelState) -> np.ndarray:
    """One-step-ahead NB mean of every observed new-case count under ``state``."""
    labels = state.segmentation.labels - 1
    K, lam, p = (np.array([prm[j] for prm in state.params])[labels] for j in range(3))
    return glc_mean_array(series.previous_cumulative, K, lam, p)


def forecast(
    trace: ChainTrace,
    series: EpidemicSeries,
    horizon: int,
    rng: np.random.Generator,
) -> ForecastResult:
    """Posterior predictive new-case paths for ``horizon`` steps past the data.

    Every sample propagates its own cumulative count with its last segment's
    parameters and its dispersion.  Once C passes K the mean sits at the
    floor, so that sample forecasts zeros.
    """
    _require_samples(trace)
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    K, lam, p = trace.last_segment_params().T
    phi = trace.dispersion
    B = len(trace)
    c = np.full(B, float(series.cumulative[-1]))
    draws = np.empty((horizon, B), dtype=np.int64)
    for h in range(horizon):
        mu = glc_mean_array(c, K, lam, p)
        rate = rng.gamma(shape=phi, scale=mu / phi)
        draws[h] = rng.poisson(rate)
        c += draws[h]
    mean = draws.mean(axis=1)
    intervals = np.quantile(draws, (0.025, 0.975), axis=1).T
    # with a heavy right tail (e.g. almost every path saturated at zero) the
    # 97.5% quantile can sit below the mean; widen so the interval brackets it
    intervals[:, 0] = np.minimum(intervals[:, 0], mean)
    intervals[:, 1] = np.maximum(intervals[:, 1], mean)
    return ForecastResult(horizon, draws, mean, intervals)


def amape(forecast_mean: Sequence[float], actual: Sequence[int]) -> float:
    """Mean of ``|1 - yhat/y|`` with y replaced by 1 where it is zero."""
    yhat = np.asarray(forecast_mean, dtype=float)
    y = np.asarray(actual, dtype=float)
    if yhat.shape != y.shape:
        raise ValueError(f"length mismatch: {yhat.size} forecasts vs {y.size} actuals")
    if y.size == 0:
        raise ValueError("amape needs at least one time point")
    denom = y + (y == 0)
    return float(np.mean(np.abs(1.0 - yhat / denom)))
