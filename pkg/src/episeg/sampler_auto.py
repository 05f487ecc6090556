"""Reversible-jump sampler with the number of segments M unknown.

Each iteration picks one of birth, death, local swap, global swap or stay
(probabilities 1/4, 1/4, 1/6, 1/6, 1/6, with the edge adjustments at M = 1
and M = m_max), then updates the dispersion.  Swap moves are followed by a
parameter sweep; stay is a parameter sweep alone.

Birth splits the segment containing a uniformly chosen feasible position;
the left part keeps its parameters and the right part draws new ones on the
log scale around them.  Death is the exact inverse: it removes a uniformly
chosen change point and the merged segment keeps the left parameters.  The
acceptance ratio uses exact feasible-set counts and move-selection
probabilities unless ``config.paper_approx_ratios`` is set.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .core_model import (
    EpidemicSeries,
    InfeasibleError,
    LogDensity,
    ModelState,
    PriorSpec,
    SamplerConfig,
    Segmentation,
    SegmentParams,
)
from .sampler_fixed import (
    ChainState,
    ChainTrace,
    MoveKind,
    MoveOutcome,
    TraceRecorder,
    _Tally,
    _accept,
    _log,
    dispersion_step,
    indicator_step,
    initial_params,
    log_scale_density,
    sweep_params,
    truncnorm_draw,
)

RjMoveKind = MoveKind
_ORDER = (MoveKind.BIRTH, MoveKind.DEATH, MoveKind.LOCAL_SWAP, MoveKind.GLOBAL_SWAP, MoveKind.STAY)


def move_probabilities(m: int, m_max: int) -> dict[MoveKind, float]:
    birth, death = Fraction(1, 4), Fraction(1, 4)
    fixed = Fraction(1, 6)
    if m <= 1:
        death, birth = Fraction(0), Fraction(1, 2)
    if m >= m_max:
        birth = Fraction(0)
        death = Fraction(1, 2) if m > 1 else Fraction(0)
    if birth + death == 0:
        fixed = Fraction(1, 3)
    probs = {
        MoveKind.BIRTH: birth,
        MoveKind.DEATH: death,
        MoveKind.LOCAL_SWAP: fixed,
        MoveKind.GLOBAL_SWAP: fixed,
        MoveKind.STAY: fixed,
    }
    return {k: float(v) for k, v in probs.items()}


def select_move(m: int, m_max: int, rng: np.random.Generator) -> MoveKind:
    probs = move_probabilities(m, m_max)
    u = rng.random()
    acc = 0.0
    for kind in _ORDER:
        acc += probs[kind]
        if u < acc and probs[kind] > 0:
            return kind
    return MoveKind.STAY


# ---------------------------------------------------------------------------
# Birth / death
# ---------------------------------------------------------------------------


def feasible_births(starts: tuple, T: int, q: int) -> list[int]:
    """Positions where a new change point keeps every gap at least ``q``."""
    out = []
    bounds = list(starts) + [T + q]  # a sentinel one gap past the end
    for a, b in zip(bounds[:-1], bounds[1:]):
        hi = min(b - q, T - q)
        out.extend(range(a + q, hi + 1))
    return out


def _new_segment_bounds(dens: LogDensity, stop: int) -> tuple[float, float]:
    return _log(dens.max_cum(stop)), math.log(dens.k_upper)


def draw_new_params(
    dens: LogDensity, around: SegmentParams, stop: int, config: SamplerConfig, rng
) -> SegmentParams:
    """Draw parameters for a segment ending at ``stop`` near ``around`` on the log scale."""
    lo, hi = _new_segment_bounds(dens, stop)
    K = math.exp(truncnorm_draw(math.log(around.final_size), config.step_K, lo, hi, rng))
    lam = math.exp(math.log(around.growth_rate) + config.step_lambda * rng.standard_normal())
    p = math.exp(truncnorm_draw(math.log(around.scaling), config.step_p, -math.inf, 0.0, rng))
    return SegmentParams(K, lam, p)


def new_params_log_density(
    dens: LogDensity, new: SegmentParams, around: SegmentParams, stop: int, config: SamplerConfig
) -> float:
    """Density (original scale) of :func:`draw_new_params` producing ``new``."""
    lo, hi = _new_segment_bounds(dens, stop)
    return (
        log_scale_density(new.final_size, around.final_size, config.step_K, lo, hi)
        + log_scale_density(new.growth_rate, around.growth_rate, config.step_lambda, -math.inf, math.inf)
        + log_scale_density(new.scaling, around.scaling, config.step_p, -math.inf, 0.0)
    )


def _log_posterior_parts(dens: LogDensity, starts, params, phi, seg_ll=None, seg_lp=None):
    if seg_lp is None:
        seg_lp = dens.seg_lps(starts, params)
    lp = math.fsum(seg_lp) + dens.indicator_lp_given_m(starts) + dens.m_lp(len(starts))
    if lp == -math.inf:
        return -math.inf, None, seg_lp
    if seg_ll is None:
        seg_ll = dens.seg_lls(starts, params, phi)
    return math.fsum(seg_ll) + lp, seg_ll, seg_lp


def _move_log_ratio(kind_fwd, kind_rev, m_from, m_to, m_max, config):
    if config.paper_approx_ratios:
        return 0.0
    pf = move_probabilities(m_from, m_max)[kind_fwd]
    pr = move_probabilities(m_to, m_max)[kind_rev]
    return math.log(pr) - math.log(pf)


def birth_log_proposal_ratio(dens, starts_before, starts_after, config) -> float:
    """``log J(delta | delta*) - log J(delta* | delta)`` for a birth."""
    m = len(starts_before)
    if config.paper_approx_ratios:
        return math.log(dens.T - m) - math.log(m)
    n_feasible = len(feasible_births(starts_before, dens.T, dens.q))
    return math.log(n_feasible) - math.log(len(starts_after) - 1)


def birth_step(dens: LogDensity, cs: ChainState, config: SamplerConfig, rng, m_max: int):
    """Returns ``(accepted, log_h, proposal)``; ``proposal`` is None if no position is feasible."""
    feas = feasible_births(cs.starts, dens.T, dens.q)
    if not feas:
        return False, -math.inf, None
    t = feas[int(rng.integers(len(feas)))]
    j = max(i for i, s in enumerate(cs.starts) if s < t)
    stop = cs.stop(j, dens.T)
    around = cs.params[j]
    theta_new = draw_new_params(dens, around, stop, config, rng)
    starts = cs.starts[: j + 1] + (t,) + cs.starts[j + 1 :]
    params = cs.params[: j + 1] + [theta_new] + cs.params[j + 1 :]

    seg_lp = list(cs.seg_lp)
    seg_lp[j : j + 1] = [dens.seg_lp(t, around), dens.seg_lp(stop, theta_new)]
    seg_ll = list(cs.seg_ll)
    lp_new_parts = math.fsum(seg_lp)
    if lp_new_parts == -math.inf:
        return False, -math.inf, (starts, params)
    seg_ll[j : j + 1] = [
        dens.seg_ll(cs.starts[j], t, around, cs.phi),
        dens.seg_ll(t, stop, theta_new, cs.phi),
    ]
    new_post, _, _ = _log_posterior_parts(dens, starts, params, cs.phi, seg_ll, seg_lp)
    cur_post, _, _ = _log_posterior_parts(dens, cs.starts, cs.params, cs.phi, cs.seg_ll, cs.seg_lp)
    m = len(cs.starts)
    log_h = (
        new_post
        - cur_post
        + birth_log_proposal_ratio(dens, cs.starts, starts, config)
        + _move_log_ratio(MoveKind.BIRTH, MoveKind.DEATH, m, m + 1, m_max, config)
        - new_params_log_density(dens, theta_new, around, stop, config)
    )
    accepted = _accept(log_h, rng)
    if accepted:
        cs.starts, cs.params, cs.seg_ll, cs.seg_lp = starts, params, seg_ll, seg_lp
    return accepted, log_h, (starts, params)


def death_step(dens: LogDensity, cs: ChainState, config: SamplerConfig, rng, m_max: int):
    m = len(cs.starts)
    if m < 2:
        return False, -math.inf, None
    i = int(rng.integers(1, m))  # segment i (0-based) disappears into segment i-1
    t = cs.starts[i]
    stop = cs.stop(i, dens.T)
    kept, removed = cs.params[i - 1], cs.params[i]
    starts = cs.starts[:i] + cs.starts[i + 1 :]
    params = cs.params[:i] + cs.params[i + 1 :]
    seg_lp = list(cs.seg_lp)
    seg_lp[i - 1 : i + 1] = [dens.seg_lp(stop, kept)]
    if seg_lp[i - 1] == -math.inf:
        return False, -math.inf, (starts, params)
    seg_ll = list(cs.seg_ll)
    seg_ll[i - 1 : i + 1] = [dens.seg_ll(cs.starts[i - 1], stop, kept, cs.phi)]
    new_post, _, _ = _log_posterior_parts(dens, starts, params, cs.phi, seg_ll, seg_lp)
    cur_post, _, _ = _log_posterior_parts(dens, cs.starts, cs.params, cs.phi, cs.seg_ll, cs.seg_lp)
    log_h = (
        new_post
        - cur_post
        - birth_log_proposal_ratio(dens, starts, cs.starts, config)
        + _move_log_ratio(MoveKind.DEATH, MoveKind.BIRTH, m, m - 1, m_max, config)
        + new_params_log_density(dens, removed, kept, stop, config)
    )
    accepted = _accept(log_h, rng)
    if accepted:
        cs.starts, cs.params, cs.seg_ll, cs.seg_lp = starts, params, seg_ll, seg_lp
    return accepted, log_h, (starts, params)


def _outcome(series, state, proposal, log_h, accepted, kind) -> MoveOutcome:
    if proposal is None:
        proposed = state
    else:
        starts, params = proposal
        seg = Segmentation.from_changepoints(series.T, starts[1:])
        proposed = ModelState(seg, tuple(params), state.dispersion)
    return MoveOutcome(proposed, log_h, accepted, kind)


def birth_move(
    series: EpidemicSeries,
    state: ModelState,
    prior: PriorSpec,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> MoveOutcome:
    """Single birth proposal; with no feasible position the outcome is a stay (unchanged)."""
    dens = LogDensity(series, prior)
    cs = ChainState.from_model_state(dens, state)
    if state.segment_count >= prior.m_max:
        raise ValueError("birth is not allowed at m_max")
    accepted, log_h, proposal = birth_step(dens, cs, config, rng, prior.m_max)
    kind = MoveKind.BIRTH if proposal is not None else MoveKind.STAY
    return _outcome(series, state, proposal, log_h, accepted, kind)


def death_move(
    series: EpidemicSeries,
    state: ModelState,
    prior: PriorSpec,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> MoveOutcome:
    if state.segment_count < 2:
        raise ValueError("death needs at least two segments")
    dens = LogDensity(series, prior)
    cs = ChainState.from_model_state(dens, state)
    accepted, log_h, proposal = death_step(dens, cs, config, rng, prior.m_max)
    return _outcome(series, state, proposal, log_h, accepted, MoveKind.DEATH)


# ---------------------------------------------------------------------------
# Chain
# ---------------------------------------------------------------------------


def run_auto_chain(
    series: EpidemicSeries,
    prior: PriorSpec,
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
    *,
    init: ModelState | None = None,
    use_likelihood: bool = True,
) -> ChainTrace:
    """Run the RJMCMC sampler from M = 1 (or ``init``) and return the post-burn-in trace.

    ``use_likelihood=False`` drops every likelihood term so the chain targets
    the prior; it exists to test the trans-dimensional kernel in isolation.
    """
    if series.T < 2 * prior.q_gap:
        raise InfeasibleError(f"T = {series.T} is shorter than 2Q = {2 * prior.q_gap}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    dens = LogDensity(series, prior, use_likelihood=use_likelihood)
    if init is None:
        init = ModelState(
            Segmentation.from_changepoints(series.T, []), tuple(initial_params(dens, (0,))), 1.0
        )
    cs = ChainState.from_model_state(dens, init)
    m_max = prior.m_max
    if not 1 <= len(cs.starts) <= m_max:
        raise ValueError("initial state has M outside [1, m_max]")
    tally = _Tally()
    rec = TraceRecorder(config.total_iterations - config.burn_in, series.T)
    for it in range(config.total_iterations):
        kind = select_move(len(cs.starts), m_max, rng)
        if kind is MoveKind.BIRTH:
            accepted, _, proposal = birth_step(dens, cs, config, rng, m_max)
            if proposal is None:
                kind = MoveKind.STAY
            else:
                tally.add(kind, accepted)
        elif kind is MoveKind.DEATH:
            accepted, _, _ = death_step(dens, cs, config, rng, m_max)
            tally.add(kind, accepted)
        if kind in (MoveKind.LOCAL_SWAP, MoveKind.GLOBAL_SWAP):
            if len(cs.starts) > 1:
                accepted, _, kind_done, _ = indicator_step(dens, cs, rng, kind)
                tally.add(kind_done, accepted)
            sweep_params(dens, cs, config, rng, tally)
        elif kind is MoveKind.STAY:
            tally.add(MoveKind.STAY, True)
            sweep_params(dens, cs, config, rng, tally)
        accepted, _, _ = dispersion_step(dens, cs, config, rng)
        tally.add(MoveKind.DISPERSION, accepted)
        if len(cs.params) != len(cs.starts):
            raise RuntimeError(
                f"dimension mismatch at iteration {it}: {len(cs.params)} params, {len(cs.starts)} segments"
            )
        if it >= config.burn_in:
            rec.record(dens, cs, include_m_prior=True)
    return rec.finish(tally.as_dict(), auto=True)
