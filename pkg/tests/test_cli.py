import json

import numpy as np
import pytest

from oracles import auprc_thresholds, auroc_pairs
from pfgcg.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, main
from pfgcg.data import load_csv, read_kv, read_matrix_csv, write_matrix_csv

TINY_FIT = ["--iters", "200", "--burn-in", "100", "--thin", "10", "-K", "5"]


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["generate", "--N", "5", "--T", "100", "--seed", "1", "--out", str(out)]) == 0
    return out


def test_generate_lorenz_shapes_and_determinism(tmp_path):
    args = ["generate", "--model", "lorenz96", "--N", "40", "--T", "500", "--F", "40",
            "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    d = load_csv(tmp_path / "a" / "X.csv")
    assert (d.T, d.N) == (500, 40)
    assert read_matrix_csv(tmp_path / "a" / "truth.csv").shape == (40, 40)
    for name in ("X.csv", "truth.csv", "generator.kv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    settings = read_kv(tmp_path / "a" / "generator.kv")
    assert settings["model"] == "lorenz96" and settings["seed"] == "1" and settings["N"] == "40"


def test_generate_lv_columns(tmp_path):
    assert main(["generate", "--model", "lotka_volterra", "--pairs", "20", "--T", "50",
                 "--out", str(tmp_path)]) == EXIT_OK
    assert load_csv(tmp_path / "X.csv").N == 40


def test_generate_from_config_file(tmp_path):
    cfg = tmp_path / "gen.kv"
    cfg.write_text("model = lorenz96\nN = 6\nT = 30\nseed = 9\n")
    assert main(["generate", "--config", str(cfg), "--T", "40", "--out", str(tmp_path / "o")]) == 0
    d = load_csv(tmp_path / "o" / "X.csv")
    assert (d.N, d.T) == (6, 40)


def test_generate_bad_config(tmp_path):
    cfg = tmp_path / "gen.kv"
    cfg.write_text("model = lorenz96\nbogus = 1\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["generate", "--N", "3", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_fit_smoke_emits_all_files(tiny_data, tmp_path):
    out = tmp_path / "fit"
    rc = main(["fit", "--data", str(tiny_data / "X.csv"), "--out", str(out), "--tau-max", "2",
               "-V", "1"] + TINY_FIT)
    assert rc == EXIT_OK
    for name in ("scores.csv", "edge_mean_lag1.csv", "edge_mean_lag2.csv", "B_mean_lag1.csv",
                 "B_mean_lag2.csv", "mse_trace.csv", "report.json", "config.json",
                 "selection.json", "trace_chain0.jsonl"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["H"] == 10 and len(report["mse_trace"]) == 200
    assert len(report["active_factors"]) == 2
    assert set(report["versions"]) == {"pfgcg", "numpy", "scipy"}
    scores = read_matrix_csv(out / "scores.csv")
    assert scores.shape == (5, 5) and np.all((scores >= 0) & (scores <= 1))
    lines = (out / "trace_chain0.jsonl").read_text().splitlines()
    assert len(lines) == 200 and json.loads(lines[0])["iteration"] == 1
    config = json.loads((out / "config.json").read_text())
    assert config["n_train"] == 80 and config["seed"] == 0


def test_fit_dense_graph_scores_all_ones(tiny_data, tmp_path):
    out = tmp_path / "dense"
    rc = main(["fit", "--data", str(tiny_data / "X.csv"), "--out", str(out),
               "--fixed-dense-graph"] + TINY_FIT)
    assert rc == EXIT_OK
    np.testing.assert_array_equal(read_matrix_csv(out / "scores.csv"), np.ones((5, 5)))


def test_fit_v_grid_selection(tiny_data, tmp_path):
    out = tmp_path / "grid"
    rc = main(["fit", "--data", str(tiny_data / "X.csv"), "--out", str(out),
               "--v-grid", "1,2,3", "--no-trace"] + TINY_FIT)
    assert rc == EXIT_OK
    for V in (1, 2, 3):
        assert (out / f"V{V}" / "scores.csv").exists()
    sel = json.loads((out / "selection.json").read_text())
    mses = {r["V"]: r["test_mse"] for r in sel["runs"]}
    assert sel["selected_V"] == min(mses, key=lambda v: (mses[v], v))
    assert (out / "scores.csv").read_bytes() == \
        (out / f"V{sel['selected_V']}" / "scores.csv").read_bytes()


def test_fit_workers_do_not_change_results(tiny_data, tmp_path):
    base = ["fit", "--data", str(tiny_data / "X.csv"), "--v-grid", "1,2", "--chains", "2",
            "--no-trace"] + TINY_FIT
    assert main(base + ["--out", str(tmp_path / "w1"), "--workers", "1"]) == EXIT_OK
    assert main(base + ["--out", str(tmp_path / "w2"), "--workers", "2"]) == EXIT_OK
    for rel in ("V2/scores.csv", "V1/B_mean_lag1.csv", "selection.json"):
        assert (tmp_path / "w1" / rel).read_bytes() == (tmp_path / "w2" / rel).read_bytes()
    reports = [json.loads((tmp_path / w / "V1" / "report.json").read_text()) for w in ("w1", "w2")]
    for r in reports:
        assert r["config"].pop("workers") in (1, 2)
    assert reports[0] == reports[1]


def test_fit_config_file_and_override(tiny_data, tmp_path):
    cfg = tmp_path / "fit.kv"
    cfg.write_text(f"data = {tiny_data / 'X.csv'}\niters = 60\nburn_in = 20\nthin = 10\n"
                   "K = 3\nV = 2\n")
    out = tmp_path / "o"
    assert main(["fit", "--config", str(cfg), "--iters", "80", "--out", str(out)]) == EXIT_OK
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["iters"] == 80 and resolved["K"] == 3 and resolved["v_grid"] == [2]


@pytest.mark.parametrize("extra", [
    ["--iters", "100", "--burn-in", "100"],
    ["--train-frac", "1.5"],
    ["--thin", "0"],
])
def test_fit_config_errors(tiny_data, tmp_path, extra):
    rc = main(["fit", "--data", str(tiny_data / "X.csv"), "--out", str(tmp_path)] + extra)
    assert rc == EXIT_CONFIG


def test_fit_unknown_config_key(tiny_data, tmp_path):
    cfg = tmp_path / "fit.kv"
    cfg.write_text("colour = blue\n")
    assert main(["fit", "--config", str(cfg), "--data", str(tiny_data / "X.csv"),
                 "--out", str(tmp_path)]) == EXIT_CONFIG


def test_fit_data_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert main(["fit", "--data", str(bad), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["fit", "--data", str(tmp_path / "missing.csv"),
                 "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_fit_numerical_failure_dumps_state(tmp_path):
    X = np.random.default_rng(0).standard_normal((30, 3))
    X[10, 1] = 1e200
    p = tmp_path / "X.csv"
    np.savetxt(p, X, delimiter=",")
    out = tmp_path / "o"
    rc = main(["fit", "--data", str(p), "--out", str(out), "--no-standardize"] + TINY_FIT)
    assert rc == EXIT_NUMERICAL
    info = json.loads((out / "failure.json").read_text())
    assert info["iteration"] >= 1 and (out / info["state_dump"]).exists()


def test_eval_exact_truth(tmp_path, capsys):
    truth = (np.random.default_rng(1).random((6, 6)) < 0.3).astype(int)
    truth[0, 0], truth[0, 1] = 1, 0
    write_matrix_csv(truth, tmp_path / "t.csv", fmt="%d")
    write_matrix_csv(truth, tmp_path / "s.csv")
    rc = main(["eval", "--scores", str(tmp_path / "s.csv"), "--truth", str(tmp_path / "t.csv"),
               "--out", str(tmp_path / "r.json")])
    assert rc == EXIT_OK
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["auroc"] == 1.0 and rep["auprc"] == 1.0 and rep["shd"] == 0
    assert json.loads(capsys.readouterr().out) == rep


def test_eval_random_matches_oracles(tmp_path):
    g = np.random.default_rng(2)
    scores = g.random((15, 15))
    truth = (g.random((15, 15)) < 0.3).astype(int)
    write_matrix_csv(truth, tmp_path / "t.csv", fmt="%d")
    write_matrix_csv(scores, tmp_path / "s.csv", fmt="%.17g")
    assert main(["eval", "--scores", str(tmp_path / "s.csv"), "--truth",
                 str(tmp_path / "t.csv"), "--seed", "4", "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["auroc"] == pytest.approx(auroc_pairs(scores, truth), abs=1e-12)
    assert rep["auprc"] == pytest.approx(auprc_thresholds(scores, truth), abs=1e-12)
    assert 0 <= rep["shd"] <= 225


def test_eval_missing_file(tmp_path, capsys):
    write_matrix_csv(np.eye(3), tmp_path / "s.csv")
    rc = main(["eval", "--scores", str(tmp_path / "s.csv"), "--truth", str(tmp_path / "no.csv")])
    assert rc == EXIT_DATA
    assert "file not found" in capsys.readouterr().err


def test_eval_shape_mismatch(tmp_path):
    write_matrix_csv(np.eye(3), tmp_path / "s.csv")
    write_matrix_csv(np.eye(4), tmp_path / "t.csv", fmt="%d")
    assert main(["eval", "--scores", str(tmp_path / "s.csv"),
                 "--truth", str(tmp_path / "t.csv")]) == EXIT_DATA


def test_help_and_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
