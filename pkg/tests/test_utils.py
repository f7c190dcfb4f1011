import os

import numpy as np
import pandas as pd
import pytest

from utils.exception_handler import (
    EXIT_INPUT,
    EXIT_NUMERICAL,
    EXIT_OK,
    BasisDomainError,
    ConfigError,
    ConvergenceError,
    IdentifiabilityError,
    InputError,
    exit_code_for,
    global_exception_handler,
)
from utils.file_handler import FileHandler


def test_save_and_read_json(tmp_path):
    path = str(tmp_path / "nested" / "report.json")
    FileHandler.save_json(path, {"tau": np.float64(0.5), "values": np.arange(3), "名称": "对照"})
    assert FileHandler.read_json(path) == {"tau": 0.5, "values": [0, 1, 2], "名称": "对照"}
    assert [name for name in os.listdir(tmp_path / "nested") if name.startswith(".")] == []


def test_read_json_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        FileHandler.read_json(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{\"a\": ", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        FileHandler.read_json(str(broken))
    assert "原因" in info.value.diagnostics


def test_dataframe_round_trip_keeps_precision(tmp_path, rng):
    frame = pd.DataFrame({"x": rng.normal(size=20) * 1e-3, "y": rng.normal(size=20) * 1e6})
    for name in ("table.csv", "table.csv.gz"):
        path = str(tmp_path / name)
        FileHandler.save_dataframe(path, frame)
        back = pd.read_csv(path)
        assert np.allclose(back.to_numpy(), frame.to_numpy(), rtol=1e-12, atol=0)


def test_save_records_column_order(tmp_path):
    path = str(tmp_path / "rows.csv")
    FileHandler.save_records(path, [{"b": 1, "a": 2}], columns=["a", "b"])
    assert pd.read_csv(path).columns.tolist() == ["a", "b"]


def test_read_csv_missing_token(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("arm,y\n0,1.5\n1,NA\n1,.\n", encoding="utf-8")
    default = FileHandler.read_csv(str(path))
    assert default["y"].isna().tolist() == [False, True, False]
    dotted = FileHandler.read_csv(str(path), missing_token=".")
    assert dotted["y"].isna().tolist() == [False, False, True]


def test_exit_codes():
    assert exit_code_for(BasisDomainError("y 超出支撑")) == EXIT_INPUT
    assert exit_code_for(FileNotFoundError("x")) == EXIT_INPUT
    assert exit_code_for(IdentifiabilityError("奇异")) == EXIT_NUMERICAL
    assert exit_code_for(RuntimeError("未知")) == EXIT_NUMERICAL


def test_run_maps_exceptions():
    def fail(exc):
        def command():
            raise exc
        return command

    assert global_exception_handler.run(lambda: EXIT_OK) == EXIT_OK
    assert global_exception_handler.run(fail(ConfigError("坏配置", {"seed": "必须为整数"}))) == EXIT_INPUT
    assert global_exception_handler.run(fail(InputError("坏输入"))) == EXIT_INPUT
    best = ConvergenceError("未收敛", best_iterate=np.zeros(2), best_loglik=-1.0)
    assert global_exception_handler.run(fail(best)) == EXIT_NUMERICAL
