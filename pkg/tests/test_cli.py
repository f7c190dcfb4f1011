import json
import os

import numpy as np
import pandas as pd
import pytest

import main
from core import __version__
from core.inference import OUT_OF_SCOPE, se_lemma1
from tests.conftest import ANOREXIA_CONFIG, REPO_ROOT


def _write_json(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def test_version(capsys):
    assert main.main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__


def test_usage_error_is_input_error():
    assert main.main(["fit"]) == 2
    assert main.main(["unknown"]) == 2


def test_theory_rows(tmp_path):
    grid = _write_json(tmp_path / "grid.json", {"tau": [0.5], "lambda": [-0.5, 0.25], "gamma": [0.0, 1.0],
                                                "n_per_arm": 41})
    assert main.main(["theory", "--config", grid, "--out", str(tmp_path / "out")]) == 0
    table = pd.read_csv(tmp_path / "out" / "theory.csv")
    assert len(table) == 4
    assert table.columns.tolist() == ["tau", "lambda", "gamma", "rho0", "rho1", "n_per_arm",
                                      "se_unadjusted", "se_adjusted", "ratio"]
    balanced = table[(table["lambda"] == -0.5) & (table["gamma"] == 1.0)].iloc[0]
    assert balanced["ratio"] == pytest.approx(1.0)
    assert balanced["se_adjusted"] == pytest.approx(se_lemma1(0.5, 41))
    prognostic = table[(table["lambda"] == 0.25) & (table["gamma"] == 0.0)].iloc[0]
    assert prognostic["rho0"] == pytest.approx(-0.24254, abs=1e-5)
    assert prognostic["rho1"] == pytest.approx(prognostic["rho0"])


def test_theory_correlation_axis(tmp_path):
    grid = _write_json(tmp_path / "grid.json", {"axis": "correlation", "tau": [0.0],
                                                "rho0": [-0.2], "rho1": [-0.2, 0.5]})
    assert main.main(["theory", "--config", grid, "--out", str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "theory.csv")
    assert np.allclose(table["rho0"], -0.2)
    assert np.allclose(table["rho1"], [-0.2, 0.5])
    assert table["gamma"].iloc[0] == pytest.approx(0.0, abs=1e-12)


def test_invalid_config_returns_input_error(tmp_path):
    bad = _write_json(tmp_path / "grid.json", {"axis": "correlation", "tau": [0.5]})
    assert main.main(["theory", "--config", bad, "--out", str(tmp_path)]) == 2
    assert not (tmp_path / "theory.csv").exists()
    typo = _write_json(tmp_path / "sim.json", {"replicates": 10})
    assert main.main(["simulate", "--config", typo, "--out", str(tmp_path)]) == 2
    assert main.main(["theory", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_fit_rejects_outcome_not_last(tmp_path):
    with open(ANOREXIA_CONFIG, encoding="utf-8") as f:
        config = json.load(f)
    config["variables"] = config["variables"][::-1]
    config["data_path"] = os.path.join(REPO_ROOT, "data", "anorexia.csv")
    path = _write_json(tmp_path / "fit.json", config)
    assert main.main(["fit", "--config", path, "--out", str(tmp_path / "out")]) == 2


def test_anorexia_fit(tmp_path):
    out = tmp_path / "out"
    assert main.main(["fit", "--config", ANOREXIA_CONFIG, "--out", str(out)]) == 0
    with open(out / "fit.json", encoding="utf-8") as f:
        report = json.load(f)
    assert report["arms"] == ["Cont", "CBT", "FT"]
    assert report["n_rows"] == 72
    taus = [entry["tau"] for entry in report["outcome_by_arm"][1:]]
    assert taus == pytest.approx([0.64, 1.24], abs=0.02)

    prognostic = report["tests"]["prognostic"]["lambda[Postwt,Prewt]"]
    assert prognostic["p_adjusted"] > 0.05
    predictive = report["tests"]["predictive"]
    assert predictive["gamma[CBT,Prewt]"]["p_adjusted"] < 0.05
    assert predictive["gamma[FT,Prewt]"]["p_adjusted"] < 0.05
    # 三组设计不适用闭式标准误
    assert report["theory"]["scope"] == OUT_OF_SCOPE
    assert "se_tau" not in report["theory"]

    summary = pd.read_csv(out / "fit_summary.csv")
    assert set(summary["family"]) == {"treatment_effect", "prognostic", "predictive"}
    assert (summary["p_adjusted"] >= summary["p_raw"]).all()


def test_fit_warm_start_reproduces_estimates(tmp_path):
    first = tmp_path / "first"
    assert main.main(["fit", "--config", ANOREXIA_CONFIG, "--out", str(first)]) == 0
    second = tmp_path / "second"
    assert main.main(["fit", "--config", ANOREXIA_CONFIG, "--out", str(second),
                      "--init", str(first / "fit.json"), "--multiplicity", "bonferroni"]) == 0
    with open(first / "fit.json", encoding="utf-8") as f:
        a = json.load(f)
    with open(second / "fit.json", encoding="utf-8") as f:
        b = json.load(f)
    assert np.allclose(a["estimates_raw"], b["estimates_raw"], atol=1e-4)
    assert b["multiplicity"] == "bonferroni"


def test_simulate_consistency(tmp_path):
    config = os.path.join(REPO_ROOT, "configs", "consistency.json")
    out = tmp_path / "sim"
    assert main.main(["simulate", "--config", config, "--out", str(out), "--reps", "2", "--threads", "1"]) == 0
    for name in ("sim_summary.csv", "sim_replications.csv.gz", "sim_config.json", "sim_report.md"):
        assert (out / name).exists()
    summary = pd.read_csv(out / "sim_summary.csv")
    assert summary["replications"].tolist() == [2]
    replications = pd.read_csv(out / "sim_replications.csv.gz")
    assert len(replications) == 2
    with open(out / "sim_config.json", encoding="utf-8") as f:
        assert json.load(f)["replications"] == 2


@pytest.mark.slow
def test_simulate_power_single_replication(tmp_path):
    config = os.path.join(REPO_ROOT, "configs", "sim_continuous.json")
    out = tmp_path / "sim"
    assert main.main(["simulate", "--config", config, "--out", str(out), "--reps", "1", "--threads", "1"]) == 0
    summary = pd.read_csv(out / "sim_summary.csv")
    assert set(summary["model"]) == {"MI", "NAMI-HTE"}
    assert len(summary) == 6
