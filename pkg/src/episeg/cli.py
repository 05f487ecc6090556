"""Command-line front end: ``fit``, ``forecast``, ``simulate`` and ``evaluate``.

Settings come from an optional JSON config file (``--config``) with
command-line flags taking precedence.  Every run writes its artifacts into
``--out``; a failed run writes ``error.json`` there instead and exits with
a nonzero status.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .core_model import EpidemicSeries, PriorSpec, SamplerConfig, Segmentation
from .inference import amape, fitted_mean, forecast, summarize
from .metrics import all_metrics
from .sampler_auto import run_auto_chain
from .sampler_fixed import ChainTrace, run_fixed_chain
from .simgen import DEFAULT_REPLICATES, GlcScenario, SirScenario, simulate_batch

MODES = ("fit-manual", "fit-auto", "forecast", "simulate-glc", "simulate-sir", "evaluate")
THREADS_ENV = "EPI_SEG_THREADS"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mode: str
    output_dir: str
    input_path: str | None = None
    prior: PriorSpec = field(default_factory=PriorSpec)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    m_fixed: int | None = None
    horizon: int | None = None
    chains: int = 1
    emit_trace: bool = False
    holdout: bool = False
    scenario: dict = field(default_factory=dict)
    replicates: int = DEFAULT_REPLICATES
    truth_path: str | None = None
    estimate_path: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if (self.m_fixed is not None) != (self.mode == "fit-manual") and self.mode != "forecast":
            raise ConfigError("m is required for fit-manual and only allowed for fit-manual or forecast")
        if (self.horizon is not None) != (self.mode == "forecast"):
            raise ConfigError("horizon is required for forecast and only allowed there")
        if self.mode in ("fit-manual", "fit-auto", "forecast") and not self.input_path:
            raise ConfigError(f"{self.mode} needs an input series")
        if self.mode == "evaluate" and not (self.truth_path and self.estimate_path):
            raise ConfigError("evaluate needs --truth and --estimate")
        if self.chains < 1:
            raise ConfigError("chains must be positive")
        if self.replicates < 1:
            raise ConfigError("replicates must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["prior"]["omega_overrides"] = {
            str(k): v for k, v in sorted(self.prior.omega_overrides.items())
        }
        return d


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def worker_count(chains: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, min(chains, cap))


def _run_chain(args) -> ChainTrace:
    series, m_fixed, prior, sampler = args
    if m_fixed is None:
        return run_auto_chain(series, prior, sampler)
    return run_fixed_chain(series, m_fixed, prior, sampler)


def fit_chains(series: EpidemicSeries, config: RunConfig) -> list[ChainTrace]:
    """One trace per chain; chain ``c`` is seeded with ``seed + c``."""
    m_fixed = config.m_fixed if config.mode != "fit-auto" else None
    jobs = [
        (series, m_fixed, config.prior, dataclasses.replace(config.sampler, seed=config.sampler.seed + c))
        for c in range(config.chains)
    ]
    workers = worker_count(config.chains)
    if workers == 1:
        return [_run_chain(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_chain, jobs))


def _segments_dict(state) -> list[dict]:
    return [
        {"final_size": prm.final_size, "growth_rate": prm.growth_rate, "scaling": prm.scaling}
        for prm in state.params
    ]


def summary_dict(trace: ChainTrace, series: EpidemicSeries, config: RunConfig, s=None) -> dict:
    if s is None:
        s = summarize(trace)
    pq = s.param_quantiles
    ppi = s.ppi
    # where the artifacts go does not affect them, so reruns into other directories match
    recorded = config.to_dict()
    del recorded["output_dir"]
    return {
        "mode": config.mode,
        "seed": config.sampler.seed,
        "config": recorded,
        "T": series.T,
        "n_samples": len(trace),
        "map": {
            "changepoints": s.map_state.segmentation.changepoints,
            "segments": _segments_dict(s.map_state),
            "dispersion": s.map_state.dispersion,
        },
        "ppi": ppi,
        "changepoints": [
            {"time": t, "lower": lo, "upper": hi, "ppi": ppi[t]} for t, (lo, hi) in s.changepoints
        ],
        "param_quantiles": {
            "probs": pq.probs,
            "segment_count": pq.segment_count,
            "n_samples": pq.n_samples,
            "segments": [
                {name: pq.segment(m)[name] for name in ("final_size", "growth_rate", "scaling")}
                for m in range(1, pq.segment_count + 1)
            ],
            "dispersion": pq.dispersion,
        },
        "m_posterior": {str(m): f for m, f in s.m_posterior.items()},
        "acceptance": {k: {"proposed": n, "accepted": a} for k, (n, a) in trace.acceptance.items()},
    }


def _write_trace(path: Path, trace: ChainTrace, burn_in: int) -> None:
    rows = (
        (
            burn_in + b,
            int(trace.segment_count[b]),
            float(trace.log_lik[b]),
            float(trace.log_posterior[b]),
            float(trace.dispersion[b]),
            ";".join(str(int(t)) for t in np.flatnonzero(trace.indicator[b])[1:]),
        )
        for b in range(len(trace))
    )
    io.write_csv(
        path, ("iteration", "M", "log_lik", "log_posterior", "dispersion", "changepoints"), rows
    )


PLOT_HEADER = ("time", "observed", "fitted_mean", "ppi", "forecast_mean", "forecast_lo", "forecast_hi")


def _plot_rows(series, map_state, ppi, fc=None, actual=None):
    fitted = fitted_mean(series, map_state)
    for t in range(series.T):
        yield (t, int(series.new_cases[t]), float(fitted[t]), float(ppi[t]), None, None, None)
    if fc is not None:
        for h in range(fc.horizon):
            obs = None if actual is None else int(actual[h])
            yield (
                series.T + h, obs, None, None,
                float(fc.mean[h]), float(fc.lower[h]), float(fc.upper[h]),
            )


def run_fit(config: RunConfig, out: Path) -> None:
    full = io.load_series(config.input_path)
    series, actual = full, None
    if config.mode == "forecast" and config.holdout:
        if config.horizon >= full.T:
            raise ConfigError("holdout horizon must be shorter than the series")
        series = full.head(full.T - config.horizon)
        actual = full.new_cases[series.T :]
    traces = fit_chains(series, config)
    if config.emit_trace:
        if len(traces) == 1:
            _write_trace(out / "trace.csv", traces[0], config.sampler.burn_in)
        else:
            for c, tr in enumerate(traces):
                _write_trace(out / f"trace_chain{c}.csv", tr, config.sampler.burn_in)
    trace = ChainTrace.concatenate(traces)
    posterior = summarize(trace)
    summary = summary_dict(trace, series, config, posterior)
    fc = None
    if config.mode == "forecast":
        rng = np.random.default_rng((config.sampler.seed, 1))
        fc = forecast(trace, series, config.horizon, rng)
        summary["forecast"] = {
            "horizon": fc.horizon,
            "mean": fc.mean,
            "lower": fc.lower,
            "upper": fc.upper,
        }
        if actual is not None:
            summary["forecast"]["actual"] = actual
            summary["forecast"]["amape"] = amape(fc.mean, actual)
    rows = _plot_rows(series, posterior.map_state, posterior.ppi, fc, actual)
    io.write_csv(out / "plotdata.csv", PLOT_HEADER, rows)
    io.write_json(out / "summary.json", summary, io.SUMMARY_SCHEMA)


# ---------------------------------------------------------------------------
# Simulation and evaluation
# ---------------------------------------------------------------------------


def run_simulate(config: RunConfig, out: Path) -> None:
    model = "glc" if config.mode == "simulate-glc" else "sir"
    cls = GlcScenario if model == "glc" else SirScenario
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in config.scenario.items()}
    params["seed"] = config.sampler.seed
    try:
        scenario = cls(**params)
    except TypeError as exc:
        raise ConfigError(f"bad scenario: {exc}") from None
    results = simulate_batch(scenario, config.replicates)
    width = max(3, len(str(config.replicates - 1)))
    entries = []
    for k, res in enumerate(results):
        name = f"replicate_{k:0{width}d}"
        io.write_series(res.series, out / f"{name}.csv")
        seed = scenario.seed + k
        sidecar = {
            "model": model,
            "seed": seed,
            "T": res.series.T,
            "changepoints": res.truth.changepoints,
            "scenario": dataclasses.replace(scenario, seed=seed).to_dict(),
        }
        if res.compartments:
            sidecar["compartments"] = res.compartments
        io.write_json(out / f"{name}.truth.json", sidecar, io.TRUTH_SIDECAR_SCHEMA)
        entries.append({"file": f"{name}.csv", "seed": seed, "changepoints": res.truth.changepoints})
    io.write_json(
        out / "ground_truth.json",
        {"model": model, "scenario": scenario.to_dict(), "replicates": entries},
        io.GROUND_TRUTH_SCHEMA,
    )


def _changepoints_and_T(doc: dict, what: str) -> tuple[list[int], int]:
    if "map" in doc:
        return [int(t) for t in doc["map"]["changepoints"]], int(doc["T"])
    if "changepoints" in doc and "T" in doc:
        return [int(t) for t in doc["changepoints"]], int(doc["T"])
    raise ConfigError(f"{what} file has neither map.changepoints nor changepoints/T")


def run_evaluate(config: RunConfig, out: Path) -> None:
    truth_cps, T = _changepoints_and_T(io.read_json(config.truth_path), "truth")
    est_cps, T_est = _changepoints_and_T(io.read_json(config.estimate_path), "estimate")
    if T != T_est:
        raise ConfigError(f"truth has T={T} but the estimate has T={T_est}")
    truth = Segmentation.from_changepoints(T, truth_cps)
    est = Segmentation.from_changepoints(T, est_cps)
    io.write_json(
        out / "evaluation.json",
        {
            "T": T,
            "truth_changepoints": truth_cps,
            "estimate_changepoints": est_cps,
            "metrics": all_metrics(truth, est),
        },
        io.EVALUATION_SCHEMA,
    )


def run(config: RunConfig) -> int:
    """Execute ``config``; return 0 iff every artifact was written."""
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").unlink(missing_ok=True)
        if config.mode in ("fit-manual", "fit-auto", "forecast"):
            run_fit(config, out)
        elif config.mode in ("simulate-glc", "simulate-sir"):
            run_simulate(config, out)
        else:
            run_evaluate(config, out)
    except Exception as exc:  # every failure becomes error.json + nonzero exit
        write_error(out, exc)
        return 1
    return 0


def write_error(out: Path, exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    row = getattr(exc, "row", None)
    if row is not None:
        payload["row"] = row
        payload["column"] = getattr(exc, "column", None)
    try:
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "error.json", payload, io.ERROR_SCHEMA)
    except OSError:
        pass
    print(f"error: {payload['message']}", file=sys.stderr)


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, sampling: bool = True) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    if sampling:
        p.add_argument("--m", type=int, help="fixed number of segments")
        p.add_argument("--auto", action="store_true", default=None, help="infer M by RJMCMC")
        p.add_argument("--iterations", type=int)
        p.add_argument("--burn-in", type=int, dest="burn_in")
        p.add_argument("--chains", type=int)
        p.add_argument("--emit-trace", action="store_true", default=None, dest="emit_trace")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="episeg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the segmented model to a series")
    fit.add_argument("input", nargs="?")
    _add_common(fit)

    fc = sub.add_parser("forecast", help="fit, then forecast new cases")
    fc.add_argument("input", nargs="?")
    _add_common(fc)
    fc.add_argument("--horizon", type=int)
    fc.add_argument(
        "--holdout", action="store_true", default=None,
        help="hold out the last HORIZON points and score the forecast against them",
    )

    sim = sub.add_parser("simulate", help="write simulated replicate series")
    _add_common(sim, sampling=False)
    sim.add_argument("--model", choices=("glc", "sir"))
    sim.add_argument("--replicates", type=int)

    ev = sub.add_parser("evaluate", help="segmentation metrics of an estimate against the truth")
    _add_common(ev, sampling=False)
    ev.add_argument("--truth")
    ev.add_argument("--estimate")
    return parser


_PRIOR_FIELDS = {f.name for f in dataclasses.fields(PriorSpec)}
_SAMPLER_FIELDS = {f.name for f in dataclasses.fields(SamplerConfig)} - {"seed"}


def _merge(file_cfg: dict, args: argparse.Namespace) -> dict:
    merged = dict(file_cfg)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        merged[key] = value
    return merged


def config_from_args(args: argparse.Namespace) -> RunConfig:
    file_cfg = io.read_json(args.config, io.CONFIG_SCHEMA) if args.config else {}
    cfg = _merge(file_cfg, args)
    prior_raw = dict(cfg.get("prior", {}))
    unknown = set(prior_raw) - _PRIOR_FIELDS
    if unknown:
        raise ConfigError(f"unknown prior settings: {sorted(unknown)}")
    if "omega_overrides" in prior_raw:
        prior_raw["omega_overrides"] = {int(k): float(v) for k, v in prior_raw["omega_overrides"].items()}
    sampler_raw = dict(cfg.get("sampler", {}))
    unknown = set(sampler_raw) - _SAMPLER_FIELDS
    if unknown:
        raise ConfigError(f"unknown sampler settings: {sorted(unknown)}")
    if "iterations" in cfg:
        sampler_raw["total_iterations"] = cfg["iterations"]
    if "burn_in" in cfg:
        sampler_raw["burn_in"] = cfg["burn_in"]
    elif "total_iterations" in sampler_raw and "burn_in" not in sampler_raw:
        sampler_raw["burn_in"] = sampler_raw["total_iterations"] // 2
    sampler_raw["seed"] = cfg.get("seed", 0)

    command = args.command
    m_fixed = cfg.get("m")
    auto = bool(cfg.get("auto", False))
    if command == "fit":
        if (m_fixed is None) == (not auto):
            raise ConfigError("fit needs exactly one of --m and --auto")
        mode = "fit-auto" if auto else "fit-manual"
    elif command == "forecast":
        if m_fixed is not None and auto:
            raise ConfigError("give at most one of --m and --auto")
        mode = "forecast"
    elif command == "simulate":
        mode = f"simulate-{cfg.get('model', 'glc')}"
    else:
        mode = "evaluate"
    return RunConfig(
        mode=mode,
        output_dir=cfg.get("out", "out"),
        input_path=cfg.get("input"),
        prior=PriorSpec(**prior_raw),
        sampler=SamplerConfig(**sampler_raw),
        m_fixed=m_fixed if mode in ("fit-manual", "forecast") else None,
        horizon=cfg.get("horizon") if mode == "forecast" else None,
        chains=cfg.get("chains", 1),
        emit_trace=bool(cfg.get("emit_trace", False)),
        holdout=bool(cfg.get("holdout", False)),
        scenario=cfg.get("scenario", {}),
        replicates=cfg.get("replicates", DEFAULT_REPLICATES),
        truth_path=cfg.get("truth"),
        estimate_path=cfg.get("estimate"),
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
    except Exception as exc:
        out = Path(getattr(args, "out", None) or "out")
        write_error(out, exc)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
