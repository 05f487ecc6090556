import json

import pytest

from episeg import cli, io
from episeg.simgen import GlcScenario, simulate_glc

FAST = ["--iterations", "300", "--burn-in", "150"]


@pytest.fixture(scope="module")
def series_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "series.csv"
    io.write_series(simulate_glc(GlcScenario(seed=1)).series, path)
    return path


def _read(path):
    return json.loads(path.read_text())


def test_simulate_writes_fifty_replicates(tmp_path):
    assert cli.main(["simulate", "--model", "glc", "--seed", "3", "--out", str(tmp_path)]) == 0
    gt = _read(tmp_path / "ground_truth.json")
    assert len(gt["replicates"]) == 50
    assert [r["seed"] for r in gt["replicates"][:3]] == [3, 4, 5]
    first = tmp_path / gt["replicates"][0]["file"]
    assert io.load_series(first).T == 150
    side = _read(tmp_path / "replicate_000.truth.json")
    assert side["changepoints"] == [52, 103]


def test_simulate_sir(tmp_path):
    assert cli.main(["simulate", "--model", "sir", "--replicates", "2", "--out", str(tmp_path)]) == 0
    side = _read(tmp_path / "replicate_001.truth.json")
    assert side["model"] == "sir" and side["changepoints"] == [31, 61, 91]
    assert "compartments" in side


def test_fit_is_byte_identical_across_runs(tmp_path, series_file):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert cli.main(["fit", str(series_file), "--m", "3", "--seed", "7", "--out", str(out), *FAST]) == 0
        outs.append((out / "summary.json").read_bytes())
    assert outs[0] == outs[1]
    summary = json.loads(outs[0])
    assert summary["mode"] == "fit-manual"
    assert len(summary["map"]["changepoints"]) == 2
    assert (tmp_path / "run0" / "plotdata.csv").exists()


def test_infeasible_fit_writes_error(tmp_path, series_file):
    code = cli.main(["fit", str(series_file), "--m", "30", "--out", str(tmp_path), *FAST])
    assert code != 0
    err = _read(tmp_path / "error.json")
    assert err["error"] == "InfeasibleError"
    assert not (tmp_path / "summary.json").exists()


def test_bad_series_error_names_row(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("# population: 1000\n# initial_count: 1\ndate,cumulative\n,5\n,4\n")
    out = tmp_path / "out"
    assert cli.main(["fit", str(bad), "--m", "1", "--out", str(out), *FAST]) == 1
    err = _read(out / "error.json")
    assert err["row"] == 2 and err["column"] == "cumulative"


def test_fit_requires_m_or_auto(tmp_path, series_file):
    assert cli.main(["fit", str(series_file), "--out", str(tmp_path)]) == 2
    assert (tmp_path / "error.json").exists()


def test_config_file_and_flag_precedence(tmp_path, series_file):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "iterations": 200, "m": 2, "sampler": {"step_phi": 0.5}}))
    parser = cli.build_parser()
    args = parser.parse_args(["fit", str(series_file), "--config", str(cfg), "--seed", "9", "--out", str(tmp_path)])
    rc = cli.config_from_args(args)
    assert rc.sampler.seed == 9
    assert rc.sampler.total_iterations == 200 and rc.sampler.burn_in == 100
    assert rc.sampler.step_phi == 0.5
    assert rc.m_fixed == 2 and rc.mode == "fit-manual"


def test_forecast_with_holdout(tmp_path, series_file):
    out = tmp_path / "fc"
    argv = ["forecast", str(series_file), "--m", "3", "--horizon", "10", "--holdout", "--out", str(out), *FAST]
    assert cli.main(argv) == 0
    s = _read(out / "summary.json")
    assert s["T"] == 140
    assert len(s["forecast"]["mean"]) == 10
    assert 0.0 <= s["forecast"]["amape"] <= 1.0


def test_evaluate(tmp_path):
    truth = tmp_path / "truth.json"
    est = tmp_path / "est.json"
    truth.write_text(json.dumps({"T": 150, "changepoints": [52, 103]}))
    est.write_text(json.dumps({"T": 150, "changepoints": [52, 103]}))
    assert cli.main(["evaluate", "--truth", str(truth), "--estimate", str(est), "--out", str(tmp_path)]) == 0
    ev = _read(tmp_path / "evaluation.json")
    assert ev["metrics"]["ari"] == 1.0
    assert ev["metrics"]["nvi"] == 0.0


def test_evaluate_length_mismatch(tmp_path):
    (tmp_path / "t.json").write_text(json.dumps({"T": 150, "changepoints": [52]}))
    (tmp_path / "e.json").write_text(json.dumps({"T": 140, "changepoints": [52]}))
    argv = ["evaluate", "--truth", str(tmp_path / "t.json"), "--estimate", str(tmp_path / "e.json"), "--out", str(tmp_path)]
    assert cli.main(argv) == 1


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    assert cli.worker_count(4) == 1
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli.worker_count(2) == 2
    monkeypatch.setenv(cli.THREADS_ENV, "x")
    with pytest.raises(cli.ConfigError):
        cli.worker_count(2)


def test_results_do_not_depend_on_worker_count(tmp_path, series_file, monkeypatch):
    outs = []
    for threads in ("1", "2"):
        monkeypatch.setenv(cli.THREADS_ENV, threads)
        out = tmp_path / threads
        argv = ["fit", str(series_file), "--m", "2", "--chains", "2", "--out", str(out), *FAST]
        assert cli.main(argv) == 0
        outs.append((out / "summary.json").read_bytes())
    assert outs[0] == outs[1]
