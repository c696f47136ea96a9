import csv
import json

import numpy as np
import pytest

from pseudofactor import IndicatorPanel, WeightMatrix, gen_equicorrelated_panel, save_long_csv
from pseudofactor.cli import main
from pseudofactor.sim import stream

MANIFEST_KEYS = {"command", "flags", "seed", "m", "H", "converged", "iterations", "final_objective", "weight_means", "boundary_flags"}


def _panel_csv(path, weights=None, H=1000, seed=1):
    p = gen_equicorrelated_panel(3, H, 0.5, stream(seed, 0, 0))
    p = IndicatorPanel(p.scores, None, ["mort30", "readm", "safety"], [f"h{i}" for i in range(H)])
    w = np.ones((3, H)) if weights is None else weights
    save_long_csv(path, p, WeightMatrix(w))
    return path


@pytest.fixture
def uniform_csv(tmp_path):
    return _panel_csv(tmp_path / "uniform.csv")


@pytest.fixture
def weighted_csv(tmp_path):
    w = np.random.default_rng(0).gamma(0.8, 1.0, (3, 1000)) + 1.0
    return _panel_csv(tmp_path / "weighted.csv", w)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_limits_prints_value(capsys):
    assert main(["limits", "--mu", "0,0,0", "--gamma", "0.7071,0.7071,0.7071", "--sigma2", "0.5,0.5,0.5"]) == 0
    name, value = capsys.readouterr().out.strip().split(",")
    assert name == "enmll_limit" and float(value) == pytest.approx(3.9103, abs=1e-4)


def test_limits_json_with_weights(capsys):
    argv = ["limits", "--gamma", "0.5,0.5", "--sigma2", "1,1", "--weights", "1,1", "--format", "json"]
    assert main(argv) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["enwmll_limit"] == out["enmll_limit"]


def test_fit_em_uniform_loadings(uniform_csv, tmp_path):
    out = tmp_path / "run1"
    assert main(["fit-em", "--input", str(uniform_csv), "--out", str(out), "--weight-mode", "raw"]) == 0
    rows = _read(out / "params.csv")
    assert list(rows[0]) == ["indicator", "mu", "gamma", "sigma2", "boundary"]
    gammas = np.array([float(r["gamma"]) for r in rows])
    np.testing.assert_allclose(gammas, 0.708, atol=0.1)
    scores = _read(out / "scores.csv")
    assert list(scores[0]) == ["subject", "alpha", "alpha_var"] and len(scores) == 1000
    manifest = json.loads((out / "manifest.json").read_text())
    assert MANIFEST_KEYS <= set(manifest)
    assert manifest["converged"] is True and manifest["m"] == 3 and manifest["H"] == 1000


def test_em_and_marginal_scores_agree(weighted_csv, tmp_path):
    for cmd in ("fit-em", "fit-marginal"):
        assert main([cmd, "--input", str(weighted_csv), "--out", str(tmp_path / cmd), "--seed", "3"]) == 0
    a = [float(r["alpha"]) for r in _read(tmp_path / "fit-em" / "scores.csv")]
    b = [float(r["alpha"]) for r in _read(tmp_path / "fit-marginal" / "scores.csv")]
    assert np.max(np.abs(np.subtract(a, b))) < 1e-3


def test_outputs_are_deterministic(weighted_csv, tmp_path):
    outs = []
    for _ in range(2):
        out = tmp_path / "same"
        assert main(["fit-marginal", "--input", str(weighted_csv), "--out", str(out), "--restarts", "2"]) == 0
        outs.append({f.name: f.read_bytes() for f in out.iterdir()})
    assert outs[0] == outs[1]


def test_default_weight_mode_means(weighted_csv, tmp_path):
    assert main(["fit-em", "--input", str(weighted_csv), "--out", str(tmp_path / "o")]) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["flags"]["weight_mode"] == "mean1x099"
    np.testing.assert_allclose(manifest["weight_means"], 0.99, rtol=1e-14)


@pytest.mark.parametrize("mode,mean", [("raw", None), ("mean1", 1.0), ("logvolume", 0.99)])
def test_weight_modes(weighted_csv, tmp_path, mode, mean):
    out = tmp_path / mode
    assert main(["fit-marginal", "--input", str(weighted_csv), "--out", str(out), "--weight-mode", mode]) == 0
    means = json.loads((out / "manifest.json").read_text())["weight_means"]
    if mean is not None:
        np.testing.assert_allclose(means, mean, rtol=1e-14)


def test_restarts_never_worse(weighted_csv, tmp_path):
    objs = []
    for r in ("0", "3"):
        out = tmp_path / f"r{r}"
        assert main(["fit-marginal", "--input", str(weighted_csv), "--out", str(out), "--restarts", r]) == 0
        objs.append(json.loads((out / "manifest.json").read_text())["final_objective"])
    assert objs[1] <= objs[0]


def test_json_format(uniform_csv, tmp_path):
    out = tmp_path / "j"
    assert main(["fit-marginal", "--input", str(uniform_csv), "--out", str(out), "--format", "json"]) == 0
    rows = json.loads((out / "params.json").read_text())
    assert len(rows) == 3 and isinstance(rows[0]["boundary"], bool)


def test_nonconvergence_exit_code(uniform_csv, tmp_path):
    out = tmp_path / "nc"
    assert main(["fit-em", "--input", str(uniform_csv), "--out", str(out), "--max-iter", "1"]) == 3
    assert (out / "params.csv").exists() and (out / "scores.csv").exists()
    assert json.loads((out / "manifest.json").read_text())["converged"] is False


@pytest.mark.parametrize(
    "argv",
    [[], ["fit-em"], ["fit-em", "--input", "x.csv"], ["bogus"], ["limits", "--gamma", "a,b", "--sigma2", "1"]],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == 1


def test_data_errors(tmp_path):
    bad = tmp_path / "dup.csv"
    bad.write_text("subject_id,indicator_id,score,weight\nh1,a,1,1\nh1,a,2,1\n")
    assert main(["fit-em", "--input", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["fit-em", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 2
    const = tmp_path / "const.csv"
    const.write_text("subject_id,indicator_id,score,weight\nh1,a,1,1\nh2,a,1,1\nh1,b,0,1\nh2,b,1,1\n")
    assert main(["fit-em", "--input", str(const), "--out", str(tmp_path / "o")]) == 2


def test_check_command(capsys):
    assert main(["check", "--cases", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and all(line.startswith("PASS") for line in lines)


def test_simulate_regular(tmp_path, capsys):
    scenario = tmp_path / "s.txt"
    scenario.write_text("reps = 3\nH = 200\nseed = 4\nfitter = em\n")
    out = tmp_path / "sim"
    assert main(["simulate-regular", "--scenario", str(scenario), "--out", str(out)]) == 0
    assert main(["simulate-regular", "--scenario", str(scenario), "--out", str(out), "--fitter", "marginal"]) == 0
    assert len(_read(out / "replications.csv")) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["scenario"]["reps"] == 3 and summary["scenario"]["seed"] == 4


def test_simulate_extreme(tmp_path):
    out = tmp_path / "ext"
    argv = ["simulate-extreme", "--reps", "2", "--H-list", "300", "--coeffs", "1,0.9", "--out", str(out)]
    assert main(argv) == 0
    rows = _read(out / "extreme.csv")
    assert [(float(r["coeff"]), int(r["H"])) for r in rows] == [(1.0, 300), (0.9, 300)]


def test_bad_scenario_is_data_error(tmp_path):
    scenario = tmp_path / "s.txt"
    scenario.write_text("bogus = 1\n")
    assert main(["simulate-regular", "--scenario", str(scenario), "--out", str(tmp_path / "o")]) == 2
