import numpy as np
import pandas as pd
import pytest

from cli.data_loader import frame_to_joint_data, load_analysis_data, resolve_data_path
from config.settings import AnalysisConfig, SimConfig, TheoryGridConfig, load_config, parse_config
from core.marginal import CATEGORY, EXACT, MISSING, RIGHT
from utils.exception_handler import ConfigError
from tests.conftest import ANOREXIA_CONFIG, REPO_ROOT


def _analysis(variables, **options):
    return {
        "treatment": {"column": "arm", "levels": [1, 0], "control": "0"},
        "variables": variables,
        "options": options,
    }


def test_control_level_moved_first():
    config = parse_config(_analysis([{"name": "y", "role": "outcome", "basis": "linear"}]), AnalysisConfig)
    assert config.treatment.levels == ["0", "1"]
    assert config.outcome.name == "y"
    assert config.variables[0].column == "y"


def test_outcome_must_be_last():
    data = _analysis([{"name": "y", "role": "outcome"}, {"name": "x"}])
    with pytest.raises(ConfigError) as info:
        parse_config(data, AnalysisConfig)
    assert info.value.diagnostics


def test_discrete_covariate_requires_approximation():
    variables = [{"name": "sex", "type": "binary", "levels": ["f", "m"]}, {"name": "y", "role": "outcome"}]
    with pytest.raises(ConfigError):
        parse_config(_analysis(variables), AnalysisConfig)
    config = parse_config(_analysis(variables, discrete_approx=True), AnalysisConfig)
    assert config.covariates[0].basis == "step"
    assert config.outcome.basis == "bernstein"


def test_variable_declaration_checks():
    bad = [
        [{"name": "y", "role": "outcome", "type": "binary", "levels": ["a", "b", "c"]}],
        [{"name": "y", "role": "outcome", "type": "survival", "time_column": "t"}],
        [{"name": "y", "role": "outcome", "basis": "step"}],
        [{"name": "y", "role": "outcome", "link": "cauchit"}],
    ]
    for variables in bad:
        with pytest.raises(ConfigError):
            parse_config(_analysis(variables), AnalysisConfig)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config({"replicates": 5}, SimConfig)
    assert "replicates" in info.value.diagnostics


def test_sim_config_defaults():
    config = SimConfig()
    assert config.effective_replications == 1000
    assert SimConfig(full_scale=True).effective_replications == 10_000
    assert config.expand_cells()[0].effective_n == 41
    assert SimConfig(outcome_kind="survival").expand_cells()[0].effective_n == 131
    with pytest.raises(ConfigError):
        parse_config({"mc_draws": 1000}, SimConfig)


def test_theory_grid_ranges():
    grid = load_config(f"{REPO_ROOT}/configs/theory_grid.json", TheoryGridConfig)
    assert len(grid.lambda_grid()) == 61
    assert grid.gamma_grid()[30] == pytest.approx(0.0)
    with pytest.raises(ConfigError):
        parse_config({"axis": "correlation", "rho0": [0.2], "rho1": [1.0]}, TheoryGridConfig)


def test_shipped_configs_parse():
    for name in ("sim_continuous", "sim_binary", "sim_survival", "consistency"):
        load_config(f"{REPO_ROOT}/configs/{name}.json", SimConfig)
    for k in range(1, 7):
        config = load_config(f"{REPO_ROOT}/configs/acupuncture_m{k}.json", AnalysisConfig)
        assert config.outcome.role == "outcome"


def test_anorexia_data_loads():
    config = load_config(ANOREXIA_CONFIG, AnalysisConfig)
    loaded = load_analysis_data(config, config_path=ANOREXIA_CONFIG)
    assert loaded.arm_counts == {"Cont": 26, "CBT": 29, "FT": 17}
    assert loaded.spec.names == ["Prewt", "Postwt"]
    assert loaded.spec.n_arms == 3


def test_data_path_resolution(tmp_path):
    config = load_config(ANOREXIA_CONFIG, AnalysisConfig)
    with pytest.raises(ConfigError):
        resolve_data_path(config.model_copy(update={"data_path": None}))
    assert resolve_data_path(config, data_path=str(tmp_path / "x.csv")) == str(tmp_path / "x.csv")


def _survival_config(**options):
    variables = [
        {"name": "x", "basis": "linear"},
        {"name": "grade", "type": "ordinal", "levels": [1, 2, 3]},
        {"name": "y", "role": "outcome", "type": "survival", "time_column": "time", "event_column": "event",
         "basis": "log_linear", "link": "cloglog"},
    ]
    return parse_config(_analysis(variables, discrete_approx=True, **options), AnalysisConfig)


def _survival_frame():
    return pd.DataFrame({
        "arm": [0, 1, 1, 0],
        "x": [0.1, 0.5, -0.2, 1.0],
        "grade": [1, 3, 2.0, 2],
        "time": [1.2, 0.4, np.nan, 2.0],
        "event": [1, 0, np.nan, 1],
    })


def test_frame_conversion_kinds():
    loaded = frame_to_joint_data(_survival_frame(), _survival_config())
    assert loaded.data.arms.tolist() == [0, 1, 1, 0]
    assert loaded.data.columns[0].kinds.tolist() == [EXACT] * 4
    assert loaded.data.columns[1].kinds.tolist() == [CATEGORY] * 4
    assert loaded.data.columns[2].kinds.tolist() == [EXACT, RIGHT, MISSING, EXACT]
    assert loaded.arm_counts == {"0": 2, "1": 2}


def test_complete_case_drops_missing_outcome():
    loaded = frame_to_joint_data(_survival_frame(), _survival_config(complete_case=True))
    assert loaded.n_dropped == 1
    assert loaded.data.n_rows == 3


def test_frame_conversion_diagnostics():
    frame = _survival_frame()
    frame.loc[0, "grade"] = 7
    frame.loc[1, "event"] = 2
    frame.loc[2, "arm"] = 5
    with pytest.raises(ConfigError) as info:
        frame_to_joint_data(frame, _survival_config())
    assert set(info.value.diagnostics) == {"grade", "event", "arm"}

    with pytest.raises(ConfigError) as info:
        frame_to_joint_data(frame.drop(columns=["x"]), _survival_config())
    assert list(info.value.diagnostics) == ["x"]
