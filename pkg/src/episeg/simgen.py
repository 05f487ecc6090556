"""Ground-truth generators: segmented GLC with NB noise and a stochastic SIR.

Change points are 0-based indices of the first time point of each new
segment.  Replicate ``k`` of a batch uses ``seed + k``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core_model import DomainError, EpidemicSeries, Segmentation, SegmentParams, glc_mean

DEFAULT_REPLICATES = 50


def nb_draw(mean: float, dispersion: float, rng: np.random.Generator) -> int:
    """Gamma-Poisson draw with E = mean and Var = mean + mean**2/dispersion."""
    if mean <= 0 or dispersion <= 0:
        raise DomainError("NB mean and dispersion must be positive")
    rate = rng.gamma(shape=dispersion, scale=mean / dispersion)
    return int(rng.poisson(rate))


@dataclass(frozen=True)
class GlcScenario:
    horizon: int = 150
    population: int = 200_000
    initial_count: int = 100
    changepoints: tuple[int, ...] = (52, 103)
    lambdas: tuple[float, ...] = (0.1, 0.06, 0.08)
    final_sizes: tuple[float, ...] = (10_000.0, 9_000.0, 15_000.0)
    scalings: tuple[float, ...] = (0.9, 0.85, 0.9)
    dispersion: float = 100.0
    seed: int = 0

    def __post_init__(self):
        n = len(self.changepoints) + 1
        if not len(self.lambdas) == len(self.final_sizes) == len(self.scalings) == n:
            raise ValueError("need one lambda, K and p per segment")
        _check_changepoints(self.changepoints, self.horizon)
        if self.initial_count < 1:
            raise ValueError("initial_count must be at least 1")
        if self.dispersion <= 0:
            raise ValueError("dispersion must be positive")

    @property
    def segment_params(self) -> tuple[SegmentParams, ...]:
        return tuple(
            SegmentParams(K, lam, p)
            for K, lam, p in zip(self.final_sizes, self.lambdas, self.scalings)
        )

    def truth(self) -> Segmentation:
        return Segmentation.from_changepoints(self.horizon, self.changepoints)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


@dataclass(frozen=True)
class SirScenario:
    horizon: int = 120
    population: int = 1_000_000
    initial_infected: int = 100
    initial_removed: int = 0
    changepoints: tuple[int, ...] = (31, 61, 91)
    r0_per_segment: tuple[float, ...] = (3.0, 2.0, 1.1, 0.5)
    removal_rate: float = 0.03
    dispersion_s: float = 100.0
    dispersion_r: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if len(self.r0_per_segment) != len(self.changepoints) + 1:
            raise ValueError("need one R0 per segment")
        _check_changepoints(self.changepoints, self.horizon)
        if self.initial_infected < 1:
            raise ValueError("initial_infected must be at least 1")
        if self.removal_rate <= 0 or min(self.r0_per_segment) <= 0:
            raise ValueError("rates must be positive")
        if self.initial_infected + self.initial_removed > self.population:
            raise ValueError("initial compartments exceed the population")

    @property
    def transmission_rates(self) -> tuple[float, ...]:
        # R0 = beta / gamma
        return tuple(r * self.removal_rate for r in self.r0_per_segment)

    def truth(self) -> Segmentation:
        return Segmentation.from_changepoints(self.horizon, self.changepoints)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _check_changepoints(cps, horizon):
    prev = 0
    for c in cps:
        if not prev < c < horizon:
            raise ValueError("change points must be strictly increasing inside (0, horizon)")
        prev = c


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass(frozen=True, eq=False)
class SimulationResult:
    series: EpidemicSeries
    truth: Segmentation
    compartments: dict = field(default_factory=dict)


def simulate_glc(scenario: GlcScenario) -> SimulationResult:
    """Draw ``new_t ~ NB(glc_mean(C_{t-1}, theta_{z_t}), phi)`` and cap C at N."""
    rng = np.random.default_rng(scenario.seed)
    truth = scenario.truth()
    labels = truth.labels
    params = scenario.segment_params
    N = scenario.population
    c = scenario.initial_count
    cum = np.empty(scenario.horizon, dtype=np.int64)
    for t in range(scenario.horizon):
        mu = glc_mean(c, params[labels[t] - 1])
        c = min(c + nb_draw(mu, scenario.dispersion, rng), N)
        cum[t] = c
    series = EpidemicSeries(scenario.initial_count, cum, N)
    return SimulationResult(series, truth)


def simulate_sir(scenario: SirScenario) -> SimulationResult:
    """Discrete stochastic SIR with NB infections and removals.

    Draws that would push S or I below zero are truncated at the boundary,
    and a zero NB mean (extinct epidemic) yields a zero draw.
    """
    rng = np.random.default_rng(scenario.seed)
    truth = scenario.truth()
    labels = truth.labels
    beta = scenario.transmission_rates
    gamma = scenario.removal_rate
    N = scenario.population
    T = scenario.horizon
    S = np.empty(T, dtype=np.int64)
    I = np.empty(T, dtype=np.int64)
    R = np.empty(T, dtype=np.int64)
    s = N - scenario.initial_infected - scenario.initial_removed
    i = scenario.initial_infected
    r = scenario.initial_removed
    for t in range(T):
        mu_inf = beta[labels[t] - 1] * s * i / N
        infections = nb_draw(mu_inf, scenario.dispersion_s, rng) if mu_inf > 0 else 0
        infections = min(infections, s)
        mu_rem = gamma * i
        removals = nb_draw(mu_rem, scenario.dispersion_r, rng) if mu_rem > 0 else 0
        removals = min(removals, i + infections)
        s -= infections
        r += removals
        i = N - s - r
        S[t], I[t], R[t] = s, i, r
    cum = N - S
    c0 = scenario.initial_infected + scenario.initial_removed
    series = EpidemicSeries(c0, cum, N)
    return SimulationResult(series, truth, {"S": S, "I": I, "R": R})


def simulate_batch(scenario, replicates: int = DEFAULT_REPLICATES) -> list[SimulationResult]:
    """Independent replicates; replicate ``k`` is simulated with ``seed + k``."""
    sim = simulate_glc if isinstance(scenario, GlcScenario) else simulate_sir
    return [sim(replace(scenario, seed=scenario.seed + k)) for k in range(replicates)]
