import csv
import json
import math

import numpy as np
import pytest

from agcabc.cli import ExperimentConfig, aggregate, derive_seed, load_config, main, run_experiment
from agcabc.evaluation import read_grid_csv
from agcabc.simulators import get_model

SMALL_REF = ["--ref-budget", "50000", "--ref-quantile", "0.005"]


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _files(root):
    # cached reference samples are inputs, not results
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


@pytest.fixture(scope="module")
def ma2_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ma2")
    code = main(
        ["experiment", "--model", "ma2", "--method", "rej,agc", "--budget", "2500", "--repeats", "2",
         "--timing", "none", "--out", str(out), *SMALL_REF]
    )
    return code, out


def test_experiment_accounting(ma2_run):
    code, out = ma2_run
    assert code == 0
    rows = _read(out / "runs.csv")
    assert len(rows) == 4
    assert {r["method"] for r in rows} == {"REJ-ABC", "AGC-ABC"}
    assert all(r["n_sims"] == "2500" and r["error"] == "" for r in rows)
    assert all(0 <= float(r["jsd"]) <= math.log(2) for r in rows)
    agg = _read(out / "aggregate.csv")
    assert len(agg) == 2 and all(a["n"] == "2" for a in agg)
    assert len(list((out / "grids").glob("*_r0?.grid.csv"))) == 4


def test_aggregate_recomputable_from_runs(ma2_run):
    _, out = ma2_run
    rows = _read(out / "runs.csv")
    for a in _read(out / "aggregate.csv"):
        vals = np.array([float(r["jsd"]) for r in rows if r["method"] == a["method"]])
        assert float(a["jsd_mean"]) == pytest.approx(vals.mean(), rel=1e-12)
        assert float(a["jsd_se"]) == pytest.approx(vals.std(ddof=1) / np.sqrt(vals.size), rel=1e-12)


def test_seed_column_follows_schedule(ma2_run):
    _, out = ma2_run
    for r in _read(out / "runs.csv"):
        method = r["method"].split("-")[0].lower()
        assert int(r["seed"]) == derive_seed(0, "ma2", method, int(r["budget"]), int(r["repeat"]))


def test_repeats_share_observed_data(ma2_run):
    _, out = ma2_run
    for rep in ("r00", "r01"):
        metas = [json.loads(p.read_text()) for p in (out / "grids").glob(f"*_{rep}.meta.json")]
        assert len({json.dumps(m["s_obs"]) for m in metas}) == 1


def test_rerun_is_byte_identical(ma2_run, tmp_path):
    _, first = ma2_run
    code = main(
        ["experiment", "--model", "ma2", "--method", "rej,agc", "--budget", "2500", "--repeats", "2",
         "--timing", "none", "--out", str(tmp_path), *SMALL_REF]
    )
    assert code == 0
    assert _files(first) == _files(tmp_path)


def test_parallel_matches_serial(ma2_run, tmp_path):
    _, first = ma2_run
    code = main(
        ["experiment", "--model", "ma2", "--method", "rej,agc", "--budget", "2500", "--repeats", "2",
         "--timing", "none", "--jobs", "2", "--out", str(tmp_path), *SMALL_REF]
    )
    assert code == 0
    assert _files(first) == _files(tmp_path)


def test_failed_runs_are_recorded_and_exit_nonzero(tmp_path):
    code = main(
        ["experiment", "--model", "linear_gaussian", "--method", "rej", "--budget", "1000,3000",
         "--repeats", "1", "--out", str(tmp_path), *SMALL_REF]
    )
    assert code == 1
    rows = _read(tmp_path / "runs.csv")
    assert rows[0]["error"].startswith("InsufficientBudgetError") and rows[0]["jsd"] == ""
    assert rows[1]["error"] == "" and float(rows[1]["jsd"]) >= 0
    assert len(_read(tmp_path / "aggregate.csv")) == 1


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(
        "model: linear_gaussian\n"
        "methods: [REJ-ABC, REG-ABC]\n"
        "budgets: [2000]\n"
        "repeats: 1\n"
        "seed: 5\n"
        "reference: {budget: 40000, quantile: 0.01}\n"
        f"output_dir: {tmp_path / 'from_file'}\n"
    )
    kw = load_config(cfg)
    assert kw["methods"] == ["REJ-ABC", "REG-ABC"] and kw["reference"]["budget"] == 40000
    assert main(["experiment", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path / "flag")]) == 0
    meta = json.loads((tmp_path / "flag" / "experiment.meta.json").read_text())
    assert meta["config"]["base_seed"] == 6
    assert meta["config"]["methods"] == ["rej", "reg"]
    assert meta["config"]["reference"] == {"budget": 40000, "quantile": 0.01}


def test_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("model: ma2\nbudgest: [10]\n")
    with pytest.raises(ValueError, match="budgest"):
        load_config(cfg)


@pytest.mark.parametrize(
    "kwargs",
    [{"budgets": [5000, 2000]}, {"n_repeats": 0}, {"methods": ["smc"]}, {"budgets": [0]}],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        ExperimentConfig(model="ma2", **kwargs)


def test_aggregate_skips_failures():
    rows = [
        {"model": "m", "method": "A", "budget": 1, "jsd": 0.1, "error": ""},
        {"model": "m", "method": "A", "budget": 1, "jsd": "", "error": "boom"},
    ]
    (agg,) = aggregate(rows)
    assert agg["n"] == 1 and math.isnan(agg["jsd_se"])


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, "ma2", "agc", 10_000, 3) == derive_seed(0, "ma2", "agc", 10_000, 3)
    assert derive_seed(0, "ma2", "agc", 10_000, 3) != derive_seed(0, "ma2", "rej", 10_000, 3)
    assert 0 <= derive_seed(2**64 - 1, "x") < 2**63


def test_simulate_command(tmp_path, capsys):
    assert main(["simulate", "--model", "ma2", "--out", str(tmp_path)]) == 0
    raw = np.loadtxt(tmp_path / "ma2.raw.csv", delimiter=",", ndmin=2)
    assert raw.size == np.prod(get_model("ma2").raw_shape)
    assert main(["simulate", "--model", "mg1", "--n", "20", "--out", str(tmp_path)]) == 0
    table = np.loadtxt(tmp_path / "mg1.summaries.csv", delimiter=",", skiprows=1)
    assert table.shape == (20, 19)


def test_infer_and_jsd_commands(tmp_path, capsys):
    assert main(["infer", "--model", "linear_gaussian", "--method", "REG-ABC", "--budget", "3000", "--out", str(tmp_path)]) == 0
    grid_path = tmp_path / "linear_gaussian_reg_3000.grid.csv"
    g = read_grid_csv(grid_path)
    assert abs(g.values.sum() - 1) < 1e-10
    archive = json.loads((tmp_path / "linear_gaussian_reg_3000.posterior.json").read_text())
    assert archive["n_sims"] == 3000
    capsys.readouterr()
    assert main(["jsd", str(grid_path), str(grid_path)]) == 0
    assert float(capsys.readouterr().out) == 0.0


def test_jsd_command_rejects_different_grids(tmp_path, capsys):
    main(["infer", "--model", "linear_gaussian", "--method", "rej", "--budget", "3000", "--out", str(tmp_path)])
    main(["infer", "--model", "linear_gaussian", "--method", "reg", "--budget", "3000", "--out", str(tmp_path)])
    code = main(["jsd", str(tmp_path / "linear_gaussian_rej_3000.grid.csv"), str(tmp_path / "linear_gaussian_reg_3000.grid.csv")])
    assert code == 2
    assert "different grids" in capsys.readouterr().err


def test_diagnose_command(tmp_path, capsys):
    code = main(["diagnose", "--model", "linear_gaussian", "--budget", "200000", "--regression", "linear", "--out", str(tmp_path)])
    assert code == 0
    rows = _read(tmp_path / "linear_gaussian.diagnostic.csv")
    assert [float(r["quantile"]) for r in rows] == [0.001, 0.01, 0.1, 0.25]
    assert max(float(r["jsd"]) for r in rows) <= 0.03
    meta = json.loads((tmp_path / "linear_gaussian.diagnostic.meta.json").read_text())
    assert meta["budget"] == 200000 and "rng" in meta


def test_missing_model_is_usage_error():
    with pytest.raises(SystemExit):
        main(["infer"])


def test_run_experiment_api(tmp_path):
    cfg = ExperimentConfig(
        model="linear_gaussian", methods=["gc"], budgets=[2000], n_repeats=1,
        reference={"budget": 40_000, "quantile": 0.01}, output_dir=str(tmp_path),
    )
    assert run_experiment(cfg, log=lambda *_: None) == 0
    assert (tmp_path / "cache").is_dir()
