"""
数据读取模块
按分析配置把 CSV 数据表转换为联合数据，并对列做模式校验
"""

import os
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from config.settings import AnalysisConfig, VariableConfig
from core.joint import JointData, JointSpec
from core.marginal import ObservationSet, MarginalSpec
from utils.exception_handler import ConfigError
from utils.file_handler import FileHandler
from utils.logger import app_logger


@dataclass
class LoadedData:
    """读取结果：联合数据、模型设定以及各处理组的行数"""

    data: JointData
    spec: JointSpec
    arm_counts: Dict[str, int]
    n_dropped: int = 0


def resolve_data_path(config: AnalysisConfig, data_path: Optional[str] = None,
                      config_path: Optional[str] = None) -> str:
    """
    确定数据文件路径：命令行参数优先，其次为配置中的 data_path；
    相对路径在当前目录找不到时按配置文件所在目录解析
    """
    path = data_path or config.data_path
    if not path:
        raise ConfigError("没有指定数据文件", {"data_path": "请在配置中设置 data_path 或使用 --data"})
    if not os.path.isabs(path) and not os.path.exists(path) and config_path:
        candidate = os.path.join(os.path.dirname(os.path.abspath(config_path)), path)
        if os.path.exists(candidate):
            return candidate
    return path


def _required_columns(var: VariableConfig) -> List[str]:
    if var.type == "survival":
        return [var.time_column, var.event_column]
    if var.type == "interval":
        return [var.lower_column, var.upper_column]
    return [var.column]


def _numeric(df: pd.DataFrame, column: str, diagnostics: Dict[str, str]) -> np.ndarray:
    values = pd.to_numeric(df[column], errors="coerce")
    bad = values.isna() & df[column].notna()
    if bad.any():
        examples = df.loc[bad, column].astype(str).unique()[:3].tolist()
        diagnostics[column] = f"包含非数值内容 {examples}"
    return values.to_numpy(dtype=float)


def _categories(df: pd.DataFrame, var: VariableConfig, diagnostics: Dict[str, str]) -> np.ndarray:
    raw = df[var.column]
    mapping = {level: k + 1 for k, level in enumerate(var.levels)}
    present = raw.notna()
    as_text = raw[present].map(_as_level)
    unknown = sorted(set(as_text) - set(mapping))
    if unknown:
        diagnostics[var.column] = f"取值 {unknown[:3]} 不在声明的水平 {var.levels} 中"
    codes = np.full(len(df), np.nan)
    codes[present.to_numpy()] = as_text.map(mapping).to_numpy(dtype=float)
    return codes


def _as_level(value) -> str:
    # 整数值的浮点读入（如 1.0）与声明的 "1" 视为相同
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def column_to_observations(df: pd.DataFrame, var: VariableConfig,
                           diagnostics: Dict[str, str]) -> ObservationSet:
    """把一个变量的列转换为观测集合，问题写入 diagnostics"""
    if var.type in ("ordinal", "binary"):
        return ObservationSet.from_categories(_categories(df, var, diagnostics))
    if var.type == "survival":
        time = _numeric(df, var.time_column, diagnostics)
        event = _numeric(df, var.event_column, diagnostics)
        bad = ~np.isnan(event) & ~np.isin(event, (0.0, 1.0))
        if np.any(bad):
            diagnostics[var.event_column] = "事件指示必须为 0 或 1"
            event = np.where(bad, np.nan, event)
        return ObservationSet.from_survival(time, event)
    if var.type == "interval":
        lower = _numeric(df, var.lower_column, diagnostics)
        upper = _numeric(df, var.upper_column, diagnostics)
        both = ~np.isnan(lower) & ~np.isnan(upper)
        if np.any(both & (lower > upper)):
            diagnostics[var.lower_column] = "区间下界大于上界"
            lower = np.where(both & (lower > upper), np.nan, lower)
        return ObservationSet.from_interval(lower, upper)
    return ObservationSet.from_exact(_numeric(df, var.column, diagnostics))


def build_joint_spec(config: AnalysisConfig) -> JointSpec:
    """由分析配置构造联合模型设定，变量顺序与配置一致"""
    options = config.options
    marginals = tuple(
        MarginalSpec(name=v.name, role=v.role, basis=v.basis, order=v.order, n_levels=v.n_levels,
                     link=v.link, positivity=options.positivity)
        for v in config.variables
    )
    return JointSpec(marginals, n_arms=len(config.treatment.levels), predictive=options.predictive,
                     discrete_approx=options.discrete_approx, jitter_seed=options.seed % (2 ** 32),
                     arm_labels=tuple(config.treatment.levels))


def frame_to_joint_data(df: pd.DataFrame, config: AnalysisConfig) -> LoadedData:
    """
    按配置把数据表转换为联合数据

    Raises:
        ConfigError: 列缺失、取值与声明不符或处理组取值未知，diagnostics 给出逐列说明
    """
    diagnostics: Dict[str, str] = {}
    treatment = config.treatment
    needed = [treatment.column] + [c for v in config.variables for c in _required_columns(v)]
    for column in needed:
        if column not in df.columns:
            diagnostics[column] = "数据中不存在该列"
    if diagnostics:
        raise ConfigError(f"数据列与配置不符: {', '.join(diagnostics)}", diagnostics)

    arm_raw = df[treatment.column]
    if arm_raw.isna().any():
        diagnostics[treatment.column] = f"处理组存在缺失值（{int(arm_raw.isna().sum())} 行）"
    arm_text = arm_raw.map(lambda v: _as_level(v) if pd.notna(v) else None)
    unknown = sorted(set(arm_text.dropna()) - set(treatment.levels))
    if unknown:
        diagnostics[treatment.column] = f"处理组取值 {unknown[:3]} 不在声明的水平 {treatment.levels} 中"

    columns = [column_to_observations(df, v, diagnostics) for v in config.variables]
    if diagnostics:
        raise ConfigError(f"数据列与配置不符: {', '.join(diagnostics)}", diagnostics)

    arms = arm_text.map({level: a for a, level in enumerate(treatment.levels)}).to_numpy(dtype=int)
    data = JointData(tuple(columns), arms)

    n_dropped = 0
    if config.options.complete_case:
        keep = ~data.columns[-1].missing
        n_dropped = int((~keep).sum())
        if n_dropped:
            app_logger.info(f"完整病例分析: 删除 {n_dropped} 行结局缺失的记录")
            data = data.subset(keep)

    arm_counts = {level: int(np.sum(data.arms == a)) for a, level in enumerate(treatment.levels)}
    return LoadedData(data=data, spec=build_joint_spec(config), arm_counts=arm_counts, n_dropped=n_dropped)


def load_analysis_data(config: AnalysisConfig, data_path: Optional[str] = None,
                       config_path: Optional[str] = None) -> LoadedData:
    """读取 CSV 并转换为联合数据"""
    path = resolve_data_path(config, data_path, config_path)
    df = FileHandler.read_csv(path, missing_token=config.missing_token)
    loaded = frame_to_joint_data(df, config)
    app_logger.info(f"数据读取完成: {loaded.data.n_rows} 行, 各组 {loaded.arm_counts}")
    return loaded
