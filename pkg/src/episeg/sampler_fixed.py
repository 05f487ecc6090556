"""Random-walk Metropolis-Hastings for a fixed number of segments.

Each sweep performs one indicator move (local swap 0.4, shift 0.4, global
swap 0.2), then updates lambda, K and p of every segment in ascending order,
then the shared dispersion.  Parameters are proposed on the log scale; the
Hastings ratios include the log-Jacobian and the truncated-normal
normalisation constants exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .core_model import (
    PHI_MAX,
    EpidemicSeries,
    InfeasibleError,
    LogDensity,
    ModelState,
    PriorSpec,
    SamplerConfig,
    Segmentation,
    SegmentParams,
)

LOG_PHI_MAX = math.log(PHI_MAX)


class MoveKind(str, enum.Enum):
    LOCAL_SWAP = "LocalSwap"
    GLOBAL_SWAP = "GlobalSwap"
    SHIFT = "Shift"
    PARAM_LAMBDA = "ParamLambda"
    PARAM_K = "ParamK"
    PARAM_P = "ParamP"
    DISPERSION = "Dispersion"
    BIRTH = "Birth"
    DEATH = "Death"
    STAY = "Stay"


class NoFreeChangepointError(ValueError):
    """The indicator has no movable change point (M == 1)."""


@dataclass(frozen=True, eq=False)
class MoveOutcome:
    proposed_state: ModelState
    log_hastings: float
    accepted: bool
    move_kind: MoveKind


# ---------------------------------------------------------------------------
# Truncated normal helpers (log scale)
# ---------------------------------------------------------------------------


def log_normal_mass(mean: float, sd: float, lo: float, hi: float) -> float:
    """``log P(lo <= X <= hi)`` for ``X ~ N(mean, sd**2)``."""
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    if a > 0.0:
        a, b = -b, -a
    lb = log_ndtr(b)
    la = log_ndtr(a)
    if la == -math.inf:
        return float(lb)
    return float(lb + math.log1p(-math.exp(la - lb)))


def truncnorm_draw(mean: float, sd: float, lo: float, hi: float, rng: np.random.Generator) -> float:
    if sd == 0.0:
        return min(max(mean, lo), hi)
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    flip = a > 0.0
    if flip:
        a, b = -b, -a
    pa = ndtr(a)
    pb = ndtr(b)
    u = rng.random()
    if pb - pa <= 0.0:
        # both bounds beyond double precision in one tail; mass sits at the near bound
        z = b
    else:
        z = float(ndtri(pa + u * (pb - pa)))
        z = min(max(z, a), b)
    if flip:
        z = -z
    return mean + sd * z


def log_scale_step(
    x: float, sd: float, log_lo: float, log_hi: float, rng: np.random.Generator
) -> tuple[float, float]:
    """Propose ``ln x* ~ TN(ln x, sd**2, log_lo, log_hi)``.

    Returns ``(x*, log q(x | x*) - log q(x* | x))`` with both densities taken on
    the original scale, i.e. including the ``1/x`` Jacobian.
    """
    if sd == 0.0:
        return x, 0.0
    v = math.log(x)
    v_new = truncnorm_draw(v, sd, log_lo, log_hi, rng)
    log_ratio = v_new - v
    if log_lo != -math.inf or log_hi != math.inf:
        log_ratio += log_normal_mass(v, sd, log_lo, log_hi) - log_normal_mass(v_new, sd, log_lo, log_hi)
    return math.exp(v_new), log_ratio


def log_scale_density(
    x_new: float, x_from: float, sd: float, log_lo: float, log_hi: float
) -> float:
    """Density on the original scale of :func:`log_scale_step` moving ``x_from -> x_new``."""
    v, v_new = math.log(x_from), math.log(x_new)
    if not log_lo <= v_new <= log_hi:
        return -math.inf
    z = (v_new - v) / sd
    out = -0.5 * z * z - math.log(sd) - 0.5 * math.log(2 * math.pi) - v_new
    if log_lo != -math.inf or log_hi != math.inf:
        out -= log_normal_mass(v, sd, log_lo, log_hi)
    return out


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _accept(log_h: float, rng: np.random.Generator) -> bool:
    if log_h >= 0.0:
        return True
    if log_h == -math.inf or math.isnan(log_h):
        return False
    return math.log(rng.random()) < log_h


# ---------------------------------------------------------------------------
# Indicator proposals
# ---------------------------------------------------------------------------


def _local_swap_starts(starts: tuple, T: int, rng) -> tuple | None:
    i = int(rng.integers(1, len(starts)))
    t_new = starts[i] + (1 if rng.random() < 0.5 else -1)
    if t_new <= 0 or t_new >= T:
        return None
    if t_new in starts:
        return starts
    return starts[:i] + (t_new,) + starts[i + 1 :]


def _shift_starts(starts: tuple, T: int, rng) -> tuple | None:
    d = 1 if rng.random() < 0.5 else -1
    moved = tuple(t + d for t in starts[1:])
    if moved[0] <= 0 or moved[-1] >= T:
        return None
    return (0,) + moved


def _free_zero_count(starts: tuple, T: int, q: int) -> int:
    lo, hi = q, T - q
    if hi < lo:
        return 0
    return (hi - lo + 1) - sum(1 for t in starts[1:] if lo <= t <= hi)


def _global_swap_starts(starts: tuple, T: int, q: int, rng) -> tuple | None:
    n_zero = _free_zero_count(starts, T, q)
    if n_zero == 0:
        return None
    i = int(rng.integers(1, len(starts)))
    k = int(rng.integers(n_zero))
    t = q + k
    for c in starts[1:]:
        if q <= c <= t:
            t += 1
    rest = starts[1:i] + starts[i + 1 :]
    return (0,) + tuple(sorted(rest + (t,)))


def _free_ones(ind: np.ndarray) -> np.ndarray:
    return np.flatnonzero(ind[1:]) + 1


def propose_local_swap(segmentation: Segmentation, rng: np.random.Generator) -> Segmentation:
    """Swap a uniformly chosen change point with its left or right neighbour."""
    ind = segmentation.indicator
    ones = _free_ones(ind)
    if ones.size == 0:
        raise NoFreeChangepointError("no free change point to swap")
    t = int(ones[rng.integers(ones.size)])
    t2 = t + (1 if rng.random() < 0.5 else -1)
    if t2 <= 0 or t2 >= ind.size:
        return segmentation
    new = ind.copy()
    new[t], new[t2] = ind[t2], ind[t]
    return Segmentation(new)


def propose_global_swap(
    segmentation: Segmentation, rng: np.random.Generator, q_gap: int = 7
) -> Segmentation:
    """Move one uniformly chosen change point to a uniformly chosen empty free slot.

    Free slots are the indices in ``[q_gap, T - q_gap]``.
    """
    ind = segmentation.indicator
    T = ind.size
    ones = _free_ones(ind)
    if ones.size == 0:
        raise NoFreeChangepointError("no free change point to swap")
    free = np.arange(q_gap, T - q_gap + 1)
    zeros = free[ind[free] == 0]
    if zeros.size == 0:
        raise NoFreeChangepointError("no empty free position to swap into")
    t = int(ones[rng.integers(ones.size)])
    t2 = int(zeros[rng.integers(zeros.size)])
    new = ind.copy()
    new[t], new[t2] = 0, 1
    return Segmentation(new)


def propose_shift(segmentation: Segmentation, rng: np.random.Generator) -> Segmentation:
    """Shift every free change point one step left or right together."""
    ind = segmentation.indicator
    ones = _free_ones(ind)
    if ones.size == 0:
        raise NoFreeChangepointError("shift needs at least two segments")
    d = 1 if rng.random() < 0.5 else -1
    moved = ones + d
    if moved[0] <= 0 or moved[-1] >= ind.size:
        return segmentation
    return Segmentation.from_changepoints(ind.size, moved)


# ---------------------------------------------------------------------------
# Mutable chain state and kernels
# ---------------------------------------------------------------------------


@dataclass
class ChainState:
    """Working state of a chain with cached per-segment log terms."""

    starts: tuple
    params: list
    phi: float
    seg_ll: list = field(default_factory=list)
    seg_lp: list = field(default_factory=list)

    @classmethod
    def from_model_state(cls, dens: LogDensity, state: ModelState) -> "ChainState":
        starts = tuple(int(s) for s in state.segmentation.starts)
        params = list(state.params)
        cs = cls(starts, params, state.dispersion)
        cs.refresh(dens)
        return cs

    def refresh(self, dens: LogDensity) -> None:
        self.seg_ll = dens.seg_lls(self.starts, self.params, self.phi)
        self.seg_lp = dens.seg_lps(self.starts, self.params)

    def stop(self, j: int, T: int) -> int:
        return self.starts[j + 1] if j + 1 < len(self.starts) else T

    def to_model_state(self, T: int) -> ModelState:
        return ModelState(Segmentation.from_changepoints(T, self.starts[1:]), tuple(self.params), self.phi)

    def log_lik(self) -> float:
        return math.fsum(self.seg_ll)


def indicator_step(
    dens: LogDensity, cs: ChainState, rng: np.random.Generator, kind: MoveKind | None = None
) -> tuple[bool, float, MoveKind, tuple | None]:
    """One MH update of the change-point indicator at fixed M.

    Parameters keep their ordinal association with segments.  Because the
    support of each K depends on its segment's maximum count, the ratio
    includes the change in the segment-parameter priors alongside the
    indicator prior.
    """
    T = dens.T
    if len(cs.starts) < 2:
        raise NoFreeChangepointError("no free change point to move")
    if kind is None:
        u = rng.random()
        kind = MoveKind.LOCAL_SWAP if u < 0.4 else (MoveKind.SHIFT if u < 0.8 else MoveKind.GLOBAL_SWAP)
    if kind is MoveKind.LOCAL_SWAP:
        new = _local_swap_starts(cs.starts, T, rng)
    elif kind is MoveKind.SHIFT:
        new = _shift_starts(cs.starts, T, rng)
    else:
        new = _global_swap_starts(cs.starts, T, dens.q, rng)
    if new is None:
        return False, -math.inf, kind, None
    if new == cs.starts:
        return True, 0.0, kind, new
    lp_new = dens.indicator_lp(new)
    if lp_new == -math.inf:
        return False, -math.inf, kind, new
    seg_lp = dens.seg_lps(new, cs.params)
    lp_params = math.fsum(seg_lp)
    if lp_params == -math.inf:
        return False, -math.inf, kind, new
    seg_ll = dens.seg_lls(new, cs.params, cs.phi)
    log_h = (
        math.fsum(seg_ll) - cs.log_lik()
        + lp_new - dens.indicator_lp(cs.starts)
        + lp_params - math.fsum(cs.seg_lp)
    )
    accepted = _accept(log_h, rng)
    if accepted:
        cs.starts, cs.seg_ll, cs.seg_lp = new, seg_ll, seg_lp
    return accepted, log_h, kind, new


_PARAM_KINDS = {
    MoveKind.PARAM_K: 0,
    MoveKind.PARAM_LAMBDA: 1,
    MoveKind.PARAM_P: 2,
}


def param_step(
    dens: LogDensity,
    cs: ChainState,
    j: int,
    kind: MoveKind,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> tuple[bool, float, SegmentParams]:
    """Log-scale MH update of one parameter of 0-based segment ``j``."""
    old = cs.params[j]
    stop = cs.stop(j, dens.T)
    if kind is MoveKind.PARAM_LAMBDA:
        lam, log_q = log_scale_step(old.growth_rate, config.step_lambda, -math.inf, math.inf, rng)
        new = old._replace(growth_rate=lam)
    elif kind is MoveKind.PARAM_K:
        lo = _log(dens.max_cum(stop))
        K, log_q = log_scale_step(old.final_size, config.step_K, lo, math.log(dens.k_upper), rng)
        new = old._replace(final_size=K)
    elif kind is MoveKind.PARAM_P:
        p, log_q = log_scale_step(old.scaling, config.step_p, -math.inf, 0.0, rng)
        new = old._replace(scaling=p)
    else:
        raise ValueError(f"{kind} is not a segment-parameter move")
    lp = dens.seg_lp(stop, new)
    if lp == -math.inf:
        return False, -math.inf, new
    ll = dens.seg_ll(cs.starts[j], stop, new, cs.phi)
    log_h = ll - cs.seg_ll[j] + lp - cs.seg_lp[j] + log_q
    accepted = _accept(log_h, rng)
    if accepted:
        cs.params[j] = new
        cs.seg_ll[j] = ll
        cs.seg_lp[j] = lp
    return accepted, log_h, new


def dispersion_step(
    dens: LogDensity, cs: ChainState, config: SamplerConfig, rng: np.random.Generator
) -> tuple[bool, float, float]:
    """``ln phi* ~ TN(ln phi, step_phi**2, 0, ln 100)`` against the full likelihood."""
    phi_new, log_q = log_scale_step(cs.phi, config.step_phi, 0.0, LOG_PHI_MAX, rng)
    lp_new = dens.phi_lp(phi_new)
    if lp_new == -math.inf:
        return False, -math.inf, phi_new
    seg_ll = dens.seg_lls(cs.starts, cs.params, phi_new)
    log_h = math.fsum(seg_ll) - cs.log_lik() + lp_new - dens.phi_lp(cs.phi) + log_q
    accepted = _accept(log_h, rng)
    if accepted:
        cs.phi = phi_new
        cs.seg_ll = seg_ll
    return accepted, log_h, phi_new


# ---------------------------------------------------------------------------
# Public single-move API
# ---------------------------------------------------------------------------


def mh_update_indicator(
    series: EpidemicSeries, state: ModelState, prior: PriorSpec, rng: np.random.Generator
) -> MoveOutcome:
    dens = LogDensity(series, prior)
    cs = ChainState.from_model_state(dens, state)
    accepted, log_h, kind, new = indicator_step(dens, cs, rng)
    if new is None:
        proposed = state
    else:
        seg = Segmentation.from_changepoints(series.T, new[1:])
        proposed = ModelState(seg, state.params, state.dispersion)
    return MoveOutcome(proposed, log_h, accepted, kind)


def mh_update_segment_param(
    series: EpidemicSeries,
    state: ModelState,
    segment_index: int,
    param_kind: MoveKind | str,
    prior: PriorSpec,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> MoveOutcome:
    """Update lambda, K or p (``param_kind``) of 1-based ``segment_index``."""
    kind = _param_kind(param_kind)
    if not 1 <= segment_index <= state.segment_count:
        raise IndexError(f"segment_index {segment_index} outside 1..{state.segment_count}")
    dens = LogDensity(series, prior)
    cs = ChainState.from_model_state(dens, state)
    accepted, log_h, new = param_step(dens, cs, segment_index - 1, kind, config, rng)
    params = list(state.params)
    params[segment_index - 1] = new
    proposed = ModelState(state.segmentation, tuple(params), state.dispersion)
    return MoveOutcome(proposed, log_h, accepted, kind)


def _param_kind(kind: MoveKind | str) -> MoveKind:
    aliases = {"lambda": MoveKind.PARAM_LAMBDA, "k": MoveKind.PARAM_K, "p": MoveKind.PARAM_P}
    if isinstance(kind, MoveKind):
        out = kind
    else:
        out = aliases.get(str(kind).lower()) or MoveKind(kind)
    if out not in _PARAM_KINDS:
        raise ValueError(f"{kind!r} is not a segment parameter")
    return out


def mh_update_dispersion(
    series: EpidemicSeries,
    state: ModelState,
    prior: PriorSpec,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> MoveOutcome:
    dens = LogDensity(series, prior)
    cs = ChainState.from_model_state(dens, state)
    accepted, log_h, phi_new = dispersion_step(dens, cs, config, rng)
    proposed = ModelState(state.segmentation, state.params, phi_new)
    return MoveOutcome(proposed, log_h, accepted, MoveKind.DISPERSION)


# ---------------------------------------------------------------------------
# Traces and the fixed-M chain
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChainTrace:
    """Post-burn-in samples.  Segment parameters are stored flat: sample ``b``
    owns rows ``offsets[b]:offsets[b+1]`` of ``params`` (columns K, lambda, p).
    """

    indicator: np.ndarray
    segment_count: np.ndarray
    params: np.ndarray
    offsets: np.ndarray
    dispersion: np.ndarray
    log_lik: np.ndarray
    log_prior_indicator: np.ndarray
    log_posterior: np.ndarray
    acceptance: dict = field(default_factory=dict)
    auto: bool = False

    def __len__(self) -> int:
        return int(self.segment_count.size)

    @property
    def T(self) -> int:
        return int(self.indicator.shape[1])

    def segment_params(self, b: int) -> np.ndarray:
        return self.params[self.offsets[b] : self.offsets[b + 1]]

    def state(self, b: int) -> ModelState:
        seg = Segmentation(self.indicator[b])
        params = tuple(SegmentParams(*row) for row in self.segment_params(b))
        return ModelState(seg, params, float(self.dispersion[b]))

    def params_given_m(self, m: int) -> np.ndarray:
        """``(n, m, 3)`` array of parameters from samples with exactly m segments."""
        idx = np.flatnonzero(self.segment_count == m)
        if idx.size == 0:
            return np.empty((0, m, 3))
        if np.all(self.segment_count == m):
            return self.params.reshape(-1, m, 3)
        rows = (self.offsets[idx][:, None] + np.arange(m)[None, :]).ravel()
        return self.params[rows].reshape(idx.size, m, 3)

    def last_segment_params(self) -> np.ndarray:
        """``(B, 3)`` parameters of the final segment of every sample."""
        return self.params[self.offsets[1:] - 1]

    @classmethod
    def concatenate(cls, traces: list["ChainTrace"]) -> "ChainTrace":
        """Pool several chains' samples in the given order."""
        if len(traces) == 1:
            return traces[0]
        offsets = [np.zeros(1, dtype=np.int64)]
        base = 0
        for tr in traces:
            offsets.append(tr.offsets[1:] + base)
            base += tr.offsets[-1]
        acceptance: dict = {}
        for tr in traces:
            for k, (n, a) in tr.acceptance.items():
                n0, a0 = acceptance.get(k, (0, 0))
                acceptance[k] = (n0 + n, a0 + a)
        cat = np.concatenate
        return cls(
            indicator=cat([t.indicator for t in traces]),
            segment_count=cat([t.segment_count for t in traces]),
            params=cat([t.params for t in traces]),
            offsets=cat(offsets),
            dispersion=cat([t.dispersion for t in traces]),
            log_lik=cat([t.log_lik for t in traces]),
            log_prior_indicator=cat([t.log_prior_indicator for t in traces]),
            log_posterior=cat([t.log_posterior for t in traces]),
            acceptance=acceptance,
            auto=any(t.auto for t in traces),
        )


class TraceRecorder:
    def __init__(self, n: int, T: int):
        self.n = n
        self.indicator = np.zeros((n, T), dtype=np.uint8)
        self.segment_count = np.zeros(n, dtype=np.int64)
        self.params: list = []
        self.dispersion = np.zeros(n)
        self.log_lik = np.zeros(n)
        self.log_prior_indicator = np.zeros(n)
        self.log_posterior = np.zeros(n)
        self._b = 0

    def record(self, dens: LogDensity, cs: ChainState, include_m_prior: bool) -> None:
        b = self._b
        row = self.indicator[b]
        row[list(cs.starts)] = 1
        m = len(cs.starts)
        self.segment_count[b] = m
        self.params.extend(cs.params)
        self.dispersion[b] = cs.phi
        ll = cs.log_lik()
        lpd = dens.indicator_lp_given_m(cs.starts)
        self.log_lik[b] = ll
        self.log_prior_indicator[b] = lpd
        lp = lpd + math.fsum(cs.seg_lp) + dens.phi_lp(cs.phi)
        if include_m_prior:
            lp += dens.m_lp(m)
        self.log_posterior[b] = ll + lp
        self._b += 1

    def finish(self, acceptance: dict, auto: bool) -> ChainTrace:
        offsets = np.concatenate(([0], np.cumsum(self.segment_count))).astype(np.int64)
        params = np.asarray(self.params, dtype=float).reshape(-1, 3)
        return ChainTrace(
            indicator=self.indicator,
            segment_count=self.segment_count,
            params=params,
            offsets=offsets,
            dispersion=self.dispersion,
            log_lik=self.log_lik,
            log_prior_indicator=self.log_prior_indicator,
            log_posterior=self.log_posterior,
            acceptance=acceptance,
            auto=auto,
        )


def equally_spaced_starts(T: int, m: int, q: int) -> tuple:
    if m * q > T:
        raise InfeasibleError(f"{m} segments of at least {q} points do not fit in T={T}")
    return tuple(k * T // m for k in range(m))


def initial_params(dens: LogDensity, starts: tuple) -> list[SegmentParams]:
    """lambda = 0.1, p = 0.9 and K at the midpoint of its support."""
    stops = list(starts[1:]) + [dens.T]
    return [
        SegmentParams(0.5 * (dens.max_cum(stop) + dens.k_upper), 0.1, 0.9) for stop in stops
    ]


def initial_state(series: EpidemicSeries, m: int, prior: PriorSpec) -> ModelState:
    dens = LogDensity(series, prior)
    starts = equally_spaced_starts(series.T, m, prior.q_gap)
    seg = Segmentation.from_changepoints(series.T, starts[1:])
    return ModelState(seg, tuple(initial_params(dens, starts)), 1.0)


class _Tally:
    def __init__(self):
        self.counts: dict[str, list[int]] = {}

    def add(self, kind: MoveKind, accepted: bool) -> None:
        c = self.counts.setdefault(kind.value, [0, 0])
        c[0] += 1
        c[1] += bool(accepted)

    def as_dict(self) -> dict:
        return {k: (v[0], v[1]) for k, v in sorted(self.counts.items())}


def sweep_params(dens, cs, config, rng, tally) -> None:
    for j in range(len(cs.params)):
        for kind in (MoveKind.PARAM_LAMBDA, MoveKind.PARAM_K, MoveKind.PARAM_P):
            accepted, _, _ = param_step(dens, cs, j, kind, config, rng)
            tally.add(kind, accepted)


def run_fixed_chain(
    series: EpidemicSeries,
    m: int,
    prior: PriorSpec,
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
    *,
    init: ModelState | None = None,
    update_params: bool = True,
    update_dispersion: bool = True,
    use_likelihood: bool = True,
) -> ChainTrace:
    """Run the fixed-M sampler and return the post-burn-in trace.

    ``rng`` defaults to ``np.random.default_rng(config.seed)``.  ``init``
    replaces the default start (equally spaced change points, lambda=0.1,
    p=0.9, K mid-support, phi=1).
    """
    if m < 1:
        raise ValueError("m must be positive")
    if m * prior.q_gap > series.T:
        raise InfeasibleError(
            f"m*Q = {m * prior.q_gap} exceeds T = {series.T}; no feasible segmentation"
        )
    if rng is None:
        rng = np.random.default_rng(config.seed)
    dens = LogDensity(series, prior, use_likelihood=use_likelihood)
    if init is None:
        init = initial_state(series, m, prior)
    elif init.segment_count != m:
        raise ValueError("init has the wrong number of segments")
    cs = ChainState.from_model_state(dens, init)
    if dens.indicator_lp(cs.starts) == -math.inf or math.fsum(cs.seg_lp) == -math.inf:
        raise InfeasibleError("initial state lies outside the prior support")
    tally = _Tally()
    rec = TraceRecorder(config.total_iterations - config.burn_in, series.T)
    for it in range(config.total_iterations):
        if m > 1:
            accepted, _, kind, _ = indicator_step(dens, cs, rng)
            tally.add(kind, accepted)
        if update_params:
            sweep_params(dens, cs, config, rng, tally)
        if update_dispersion:
            accepted, _, _ = dispersion_step(dens, cs, config, rng)
            tally.add(MoveKind.DISPERSION, accepted)
        if it >= config.burn_in:
            rec.record(dens, cs, include_m_prior=False)
    return rec.finish(tally.as_dict(), auto=False)
