"""End-to-end smoke tests for the python module and the CLI binary."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

import htelab as h

CLI = os.environ.get("HTE_CLI", "")


def small_dataset(seed=0, n=160, p=4, effect=2.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    t = (rng.random(n) < 0.5).astype(int)
    y = X[:, 0] + effect * t * (X[:, 1] > 0) + 0.5 * rng.normal(size=n)
    return h.Dataset(X, [int(v) for v in t], list(y))


def test_dataset_validation():
    with pytest.raises(h.HteError):
        h.Dataset(np.zeros((4, 2)), [1, 1, 1, 1], [0.0, 1.0, 2.0, 3.0])


def test_ate_identities():
    d = small_dataset()
    cm = h.ate_cm(d)
    ipw = h.ate_ipw(d, [0.5] * d.n)
    strat = h.ate_stratified(d, h.StrataAssignment.uniform(d.n))
    assert ipw.estimate == pytest.approx(cm.estimate, rel=1e-12)
    assert strat.estimate == pytest.approx(cm.estimate, rel=1e-12)


def test_scenario_table_and_generation():
    spec = h.scenario(3)
    assert (spec.n, spec.p, spec.mu_fn, spec.tau_fn) == (300, 300, 4, 3)
    draw = h.generate(spec, seed=1)
    assert draw["dataset"].n == 300
    assert len(draw["tau_true"]) == 300


def test_fit_predict_surface():
    d = small_dataset()
    scores = [0.5] * d.n
    pto = h.fit_pto_forest(d, scores)
    est = pto.predict(d.features)
    assert est["tau_hat"].shape == (d.n,)
    assert "mu1_hat" in est

    boost = h.fit_causal_boost(d, params=h.BoostParams(), seed=3)
    m1, m0 = boost.predict_means([0.0] * d.p)
    assert boost.predict_effect([0.0] * d.p) == pytest.approx(m1 - m0)

    mars = h.fit_causal_mars(d, seed=4)
    assert np.isfinite(mars.predict_effect([0.0] * d.p))


def test_effect_models_beat_null_on_heterogeneous_signal():
    d = small_dataset(seed=5, n=300)
    truth = np.asarray(d.features)[:, 1] > 0
    truth = 2.0 * truth.astype(float)
    null = h.fit_null(d)
    boost = h.fit_causal_boost(d, params=h.BoostParams(), seed=6)
    est_null = null.predict(d.features)["tau_hat"]
    est_boost = boost.predict(d.features)["tau_hat"]
    assert h.mse_effect(list(est_boost), list(truth)) < h.mse_effect(
        list(est_null), list(truth)
    )


def test_model_persistence(tmp_path):
    d = small_dataset()
    cfg = json.dumps({"method": "pto", "scores": "uniform", "forest": {"n_trees": 10}})
    model = h.fit_config(d, cfg)
    path = str(tmp_path / "model.json")
    h.save_model(path, model, cfg, d.p)
    loaded = h.load_model(path)
    x = [0.1] * d.p
    assert loaded["model"].predict_effect(x) == model.predict_effect(x)


def test_benchmark_runs_and_is_deterministic():
    cfg = h.BenchConfig()
    rows1 = h.run_benchmark([1], ["null"], 2, 11, cfg)
    rows2 = h.run_benchmark([1], ["null"], 2, 11, cfg)
    assert [r["mse"] for r in rows1] == [r["mse"] for r in rows2]


@pytest.mark.skipif(not CLI, reason="HTE_CLI not set")
def test_cli_simulate_fit_predict_roundtrip(tmp_path):
    data = tmp_path / "data.csv"
    truth = tmp_path / "truth.csv"
    run = lambda *args: subprocess.run(
        [CLI, *args], check=True, capture_output=True, text=True
    )
    run("simulate", "--scenario", "6", "--seed", "3",
        "--out", str(data), "--truth", str(truth))
    header = data.read_text().splitlines()[0].split(",")
    assert len(header) == 200 + 2  # scenario 6: p=200 features plus T and Y

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "method": "pto", "seed": 1, "scores": "uniform",
        "forest": {"n_trees": 20},
    }))
    model = tmp_path / "model.json"
    run("fit", "--config", str(cfg), "--data", str(data), "--out", str(model))

    effects = tmp_path / "effects.csv"
    run("predict", "--model", str(model), "--data", str(data), "--out", str(effects))
    lines = effects.read_text().splitlines()
    assert lines[0].startswith("effect")
    assert len(lines) == 401

    report = run("report", "--estimates", str(effects), "--data", str(data),
                 "--feature", "x1", "--bins", "5")
    assert report.stdout.startswith("bin,")

    tree = run("report", "--estimates", str(effects), "--data", str(data),
               "--summarize-tree", "--max-depth", "2")
    assert "leaf:" in tree.stdout


@pytest.mark.skipif(not CLI, reason="HTE_CLI not set")
def test_cli_error_line(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"method\": \"pto\", \"whoops\": 1}")
    data = tmp_path / "d.csv"
    data.write_text("x1,T,Y\n1,1,2\n2,0,1\n3,1,4\n4,0,2\n")
    proc = subprocess.run(
        [CLI, "fit", "--config", str(bad), "--data", str(data), "--out",
         str(tmp_path / "m.json")],
        capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.startswith("error: config-unknown-key")
