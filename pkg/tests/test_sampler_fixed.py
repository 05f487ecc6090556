import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from episeg.core_model import (
    InfeasibleError,
    LogDensity,
    ModelState,
    PriorSpec,
    SamplerConfig,
    Segmentation,
    SegmentParams,
)
from episeg.sampler_fixed import (
    ChainState,
    MoveKind,
    NoFreeChangepointError,
    indicator_step,
    log_scale_density,
    log_scale_step,
    mh_update_dispersion,
    mh_update_indicator,
    mh_update_segment_param,
    propose_global_swap,
    propose_local_swap,
    propose_shift,
    run_fixed_chain,
)
from episeg.simgen import GlcScenario, simulate_glc


@pytest.fixture(scope="module")
def sim():
    return simulate_glc(GlcScenario(seed=11))


def _state(series, cps, params, phi=20.0):
    return ModelState(Segmentation.from_changepoints(series.T, cps), tuple(params), phi)


# --- indicator proposals -------------------------------------------------------------


def test_local_swap_moves_one_step_each_way():
    seg = Segmentation.from_changepoints(156, [52, 103])
    rng = np.random.default_rng(0)
    seen = {}
    for _ in range(4000):
        cps = tuple(propose_local_swap(seg, rng).changepoints)
        seen[cps] = seen.get(cps, 0) + 1
    assert set(seen) == {(51, 103), (53, 103), (52, 102), (52, 104)}
    for n in seen.values():
        assert abs(n / 4000 - 0.25) < 0.03


def test_shift_moves_all_changepoints_together():
    seg = Segmentation.from_changepoints(156, [52, 103])
    rng = np.random.default_rng(1)
    out = {tuple(propose_shift(seg, rng).changepoints) for _ in range(200)}
    assert out == {(53, 104), (51, 102)}


def test_global_swap_is_symmetric_on_toy_grid():
    # the proposal probability of every move equals that of its reverse
    T, q = 30, 7
    seg = Segmentation.from_changepoints(T, [10, 20])
    rng = np.random.default_rng(2)
    n = 40_000
    forward = {}
    for _ in range(n):
        cps = tuple(propose_global_swap(seg, rng, q).changepoints)
        forward[cps] = forward.get(cps, 0) + 1
    # 2 change points times 15 empty free slots in [7, 23]
    assert len(forward) == 30
    for cps in forward:
        assert abs(forward[cps] / n - 1 / 30) < 0.006
        # reverse move: from cps, pick the moved point (1 of 2) and the vacated slot (1 of 15)
        free = [t for t in range(q, T - q + 1) if t not in cps]
        assert len(free) == 15


def test_proposals_need_a_free_changepoint():
    seg = Segmentation.from_changepoints(30, [])
    rng = np.random.default_rng(0)
    for fn in (propose_local_swap, propose_shift, propose_global_swap):
        with pytest.raises(NoFreeChangepointError):
            fn(seg, rng)


def test_mh_indicator_rejects_zero_prior(sim):
    series = sim.series
    cum = series.cumulative
    # K of the first segment sits just above the count at the true boundary, so
    # moving that boundary right leaves K outside its prior support
    params = list(GlcScenario().segment_params)
    params[0] = params[0]._replace(final_size=float(cum[51]) + 0.5)
    state = _state(series, [52, 103], params)
    dens = LogDensity(series, PriorSpec())
    rng = np.random.default_rng(3)
    saw_right_move = False
    for _ in range(200):
        cs = ChainState.from_model_state(dens, state)
        accepted, log_h, kind, new = indicator_step(dens, cs, rng, MoveKind.SHIFT)
        if new is not None and new[1] == 53:
            saw_right_move = True
            assert not accepted and log_h == -math.inf
            assert cs.starts == (0, 52, 103)
    assert saw_right_move


def test_mh_indicator_outcome_fields(sim):
    state = _state(sim.series, [52, 103], GlcScenario().segment_params)
    out = mh_update_indicator(sim.series, state, PriorSpec(), np.random.default_rng(0))
    assert out.move_kind in (MoveKind.LOCAL_SWAP, MoveKind.SHIFT, MoveKind.GLOBAL_SWAP)
    assert out.proposed_state.segment_count == 3


# --- parameter proposals ---------------------------------------------------------------


@given(
    st.floats(1e-3, 1e3),
    st.floats(0.01, 2.0),
    st.sampled_from([(-math.inf, math.inf), (-math.inf, 0.0), (0.0, math.log(100.0))]),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=200, deadline=None)
def test_log_scale_hastings_matches_densities(x, sd, bounds, seed):
    lo, hi = bounds
    x = min(max(x, math.exp(lo) if lo > -math.inf else x), math.exp(hi) if hi < math.inf else x)
    x_new, log_ratio = log_scale_step(x, sd, lo, hi, np.random.default_rng(seed))
    assert lo <= math.log(x_new) <= hi
    ref = log_scale_density(x, x_new, sd, lo, hi) - log_scale_density(x_new, x, sd, lo, hi)
    assert log_ratio == pytest.approx(ref, abs=1e-9)


def test_log_scale_density_integrates_to_one():
    lo, hi = 0.0, math.log(100.0)
    val, _ = integrate.quad(lambda y: math.exp(log_scale_density(y, 3.0, 0.8, lo, hi)), 1.0, 100.0)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_zero_step_gives_unit_hastings_ratio(sim):
    state = _state(sim.series, [52, 103], GlcScenario().segment_params)
    cfg = SamplerConfig(step_lambda=0.0, step_K=0.0, step_p=0.0, step_phi=0.0)
    for kind in ("lambda", "K", "p"):
        out = mh_update_segment_param(sim.series, state, 2, kind, PriorSpec(), cfg, np.random.default_rng(0))
        assert out.log_hastings == 0.0 and out.accepted
    out = mh_update_dispersion(sim.series, state, PriorSpec(), cfg, np.random.default_rng(0))
    assert out.log_hastings == 0.0


def test_proposed_k_and_phi_stay_in_support(sim):
    series = sim.series
    state = _state(series, [52, 103], GlcScenario().segment_params)
    cfg = SamplerConfig()
    prior = PriorSpec()
    upper = prior.k_upper(series.population)
    rng = np.random.default_rng(5)
    for _ in range(300):
        out = mh_update_segment_param(series, state, 1, MoveKind.PARAM_K, prior, cfg, rng)
        K = out.proposed_state.params[0].final_size
        assert series.cumulative[51] < K <= upper
        out = mh_update_dispersion(series, state, prior, cfg, rng)
        assert 1.0 <= out.proposed_state.dispersion <= 100.0


def test_segment_index_is_one_based(sim):
    state = _state(sim.series, [52, 103], GlcScenario().segment_params)
    with pytest.raises(IndexError):
        mh_update_segment_param(
            sim.series, state, 0, "lambda", PriorSpec(), SamplerConfig(), np.random.default_rng(0)
        )


# --- chain behaviour -----------------------------------------------------------------


def test_trace_length_and_shapes(sim):
    tr = run_fixed_chain(sim.series, 3, PriorSpec(), SamplerConfig(total_iterations=300, burn_in=100))
    assert len(tr) == 200
    assert tr.indicator.shape == (200, sim.series.T)
    assert np.all(tr.segment_count == 3)
    assert tr.params.shape == (600, 3)
    assert np.all(tr.indicator[:, 0] == 1)


def test_chain_is_deterministic(sim):
    cfg = SamplerConfig(total_iterations=300, burn_in=100, seed=9)
    a = run_fixed_chain(sim.series, 3, PriorSpec(), cfg)
    b = run_fixed_chain(sim.series, 3, PriorSpec(), cfg)
    np.testing.assert_array_equal(a.indicator, b.indicator)
    np.testing.assert_array_equal(a.params, b.params)
    np.testing.assert_array_equal(a.log_posterior, b.log_posterior)


def test_infeasible_segment_count(sim):
    with pytest.raises(InfeasibleError):
        run_fixed_chain(sim.series, 30, PriorSpec(), SamplerConfig(total_iterations=10, burn_in=0))


def test_stored_log_terms_match_recomputation(sim):
    prior = PriorSpec()
    tr = run_fixed_chain(sim.series, 2, prior, SamplerConfig(total_iterations=200, burn_in=150))
    dens = LogDensity(sim.series, prior)
    for b in (0, 25, 49):
        st_ = tr.state(b)
        starts = tuple(int(s) for s in st_.segmentation.starts)
        ll = math.fsum(dens.seg_lls(starts, st_.params, st_.dispersion))
        assert tr.log_lik[b] == pytest.approx(ll, rel=1e-12)
        assert tr.log_prior_indicator[b] == pytest.approx(dens.indicator_lp_given_m(starts), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_halving_steps_does_not_lower_acceptance(sim, seed):
    prior = PriorSpec()

    def rate(scale):
        cfg = SamplerConfig(
            total_iterations=1000, burn_in=300, seed=seed,
            step_K=scale, step_lambda=0.1 * scale, step_p=0.1 * scale, step_phi=scale,
        )
        tr = run_fixed_chain(sim.series, 3, prior, cfg)
        n = sum(v[0] for k, v in tr.acceptance.items() if k.startswith("Param"))
        a = sum(v[1] for k, v in tr.acceptance.items() if k.startswith("Param"))
        return a / n

    assert rate(0.5) >= rate(1.0) - 0.02


def test_indicator_chain_matches_enumeration():
    """With parameters held fixed the indicator chain targets a distribution we can list."""
    T, q = 24, 4
    scen = GlcScenario(
        horizon=T, changepoints=(12,), lambdas=(0.4, 0.25), final_sizes=(40_000.0, 40_000.0),
        scalings=(0.8, 0.8), seed=5, dispersion=30.0,
    )
    series = simulate_glc(scen).series
    prior = PriorSpec(q_gap=q, omega_default=0.2)
    dens = LogDensity(series, prior)
    params = scen.segment_params
    phi = 30.0
    support = {}
    for t in range(1, T):
        starts = (0, t)
        lp = dens.indicator_lp(starts)
        if lp == -math.inf:
            continue
        support[t] = math.fsum(dens.seg_lls(starts, params, phi)) + lp + math.fsum(dens.seg_lps(starts, params))
    logw = np.array(list(support.values()))
    target = np.exp(logw - logw.max())
    target /= target.sum()
    init = ModelState(Segmentation.from_changepoints(T, [12]), params, phi)
    cfg = SamplerConfig(total_iterations=60_000, burn_in=2_000, seed=1)
    tr = run_fixed_chain(series, 2, prior, cfg, init=init, update_params=False, update_dispersion=False)
    cps = np.argmax(tr.indicator[:, 1:], axis=1) + 1
    emp = np.array([np.mean(cps == t) for t in support])
    assert 0.5 * np.abs(emp - target).sum() < 0.03


def test_growth_rate_posterior_matches_quadrature():
    """Only lambda moves; its posterior mean is a one-dimensional integral."""
    scen = GlcScenario(
        horizon=30, changepoints=(), lambdas=(0.3,), final_sizes=(40_000.0,), scalings=(0.8,),
        seed=2, dispersion=5.0,
    )
    series = simulate_glc(scen).series
    prior = PriorSpec(a_lambda=2.0, b_lambda=2.0, q_gap=7)
    dens = LogDensity(series, prior)
    K, p, phi = 40_000.0, 0.8, 5.0

    def logpost(lam):
        prm = SegmentParams(K, lam, p)
        return dens.seg_ll(0, series.T, prm, phi) + dens.seg_lp(series.T, prm)

    grid = np.linspace(1e-4, 3.0, 30_001)
    lw = np.array([logpost(x) for x in grid])
    w = np.exp(lw - lw.max())
    mean = integrate.trapezoid(grid * w, grid) / integrate.trapezoid(w, grid)
    sd = math.sqrt(integrate.trapezoid((grid - mean) ** 2 * w, grid) / integrate.trapezoid(w, grid))

    init = ModelState(Segmentation.from_changepoints(series.T, []), (SegmentParams(K, mean, p),), phi)
    cfg = SamplerConfig(total_iterations=40_000, burn_in=2_000, step_lambda=0.2, step_K=0.0, step_p=0.0, seed=3)
    tr = run_fixed_chain(series, 1, prior, cfg, init=init, update_dispersion=False)
    lam = tr.params[:, 1]
    assert np.all(tr.params[:, 0] == K) and np.all(tr.params[:, 2] == p)
    assert abs(lam.mean() - mean) < 0.1 * sd + 1e-3
    assert lam.std() == pytest.approx(sd, rel=0.1)
