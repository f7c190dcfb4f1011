"""
配置模块
分析、模拟与理论网格三类 JSON 配置的 pydantic 模式，以及带诊断信息的加载函数
"""

from typing import Any, Dict, List, Literal, Optional, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.exception_handler import ConfigError
from utils.file_handler import FileHandler


SCHEMA_VERSION = 1
DEFAULT_SEED = 20240517
FULL_SCALE_REPLICATIONS = 10000
# 各结局类型的每组样本量
DEFAULT_N_PER_ARM = {"continuous": 41, "binary": 161, "survival": 131}

BasisKind = Literal["linear", "log_linear", "bernstein", "step"]
LinkKind = Literal["probit", "logit", "cloglog"]
VariableType = Literal["continuous", "ordinal", "binary", "survival", "interval"]
OutcomeKind = Literal["continuous", "binary", "survival"]


class _Schema(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class TreatmentConfig(_Schema):
    """处理组列：levels 给出组的顺序，control 为对照组"""

    column: str
    levels: List[str] = Field(min_length=2)
    control: Optional[str] = None

    @field_validator("levels", mode="before")
    @classmethod
    def _levels_as_str(cls, value):
        return [str(v) for v in value] if isinstance(value, list) else value

    @model_validator(mode="after")
    def _control_first(self):
        if len(set(self.levels)) != len(self.levels):
            raise ValueError("处理组水平重复")
        control = self.control if self.control is not None else self.levels[0]
        if control not in self.levels:
            raise ValueError(f"对照组 {control} 不在处理组水平中")
        self.levels = [control] + [lv for lv in self.levels if lv != control]
        self.control = control
        return self


class VariableConfig(_Schema):
    """单个变量的声明；basis 缺省时离散变量用 step，其余用 bernstein"""

    name: str
    column: Optional[str] = None
    role: Literal["covariate", "outcome"] = "covariate"
    type: VariableType = "continuous"
    levels: Optional[List[str]] = None
    time_column: Optional[str] = None
    event_column: Optional[str] = None
    lower_column: Optional[str] = None
    upper_column: Optional[str] = None
    basis: Optional[BasisKind] = None
    order: int = Field(default=6, ge=1, le=30)
    link: LinkKind = "probit"

    @field_validator("levels", mode="before")
    @classmethod
    def _levels_as_str(cls, value):
        return [str(v) for v in value] if isinstance(value, list) else value

    @model_validator(mode="after")
    def _check_columns(self):
        if self.column is None:
            self.column = self.name
        discrete = self.type in ("ordinal", "binary")
        if self.basis is None:
            self.basis = "step" if discrete else "bernstein"
        if discrete and self.basis != "step":
            raise ValueError(f"{self.name}: 离散变量必须使用 step 基函数")
        if not discrete and self.basis == "step":
            raise ValueError(f"{self.name}: step 基函数只用于离散变量")
        if discrete:
            if not self.levels or len(self.levels) < 2:
                raise ValueError(f"{self.name}: 离散变量需要至少两个有序水平")
            if self.type == "binary" and len(self.levels) != 2:
                raise ValueError(f"{self.name}: 二分类变量必须恰有两个水平")
        if self.type == "survival" and not (self.time_column and self.event_column):
            raise ValueError(f"{self.name}: 生存变量需要 time_column 与 event_column")
        if self.type == "interval" and not (self.lower_column and self.upper_column):
            raise ValueError(f"{self.name}: 区间删失变量需要 lower_column 与 upper_column")
        return self

    @property
    def n_levels(self) -> Optional[int]:
        return len(self.levels) if self.levels else None


class AnalysisOptions(_Schema):
    multiplicity: Optional[Literal["maxt", "bonferroni"]] = None
    ci_level: float = Field(default=0.95, gt=0.0, lt=1.0)
    discrete_approx: bool = False
    seed: int = Field(default=DEFAULT_SEED, ge=0, le=2 ** 64 - 1)
    predictive: bool = True
    complete_case: bool = False
    positivity: Literal["softplus", "exp"] = "softplus"
    max_iter: int = Field(default=1000, ge=1)
    gtol: float = Field(default=1e-5, gt=0.0)
    ftol: float = Field(default=1e-9, gt=0.0)
    mc_draws: int = Field(default=100_000, ge=100_000)


class AnalysisConfig(_Schema):
    """fit 子命令的配置；variables 的顺序即模型中的变量顺序，结局必须在最后"""

    schema_version: Literal[1] = SCHEMA_VERSION
    data_path: Optional[str] = None
    treatment: TreatmentConfig
    variables: List[VariableConfig] = Field(min_length=1)
    missing_token: str = ""
    options: AnalysisOptions = Field(default_factory=AnalysisOptions)

    @model_validator(mode="after")
    def _check_variables(self):
        roles = [v.role for v in self.variables]
        if roles.count("outcome") != 1:
            raise ValueError("必须恰有一个结局变量")
        if roles[-1] != "outcome":
            raise ValueError("结局变量必须在 variables 的最后")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError(f"变量名称重复: {names}")
        non_exact = [v.name for v in self.variables[:-1] if v.type != "continuous"]
        if non_exact and not self.options.discrete_approx:
            raise ValueError(f"协变量 {non_exact} 不是连续变量，需要开启 discrete_approx")
        return self

    @property
    def outcome(self) -> VariableConfig:
        return self.variables[-1]

    @property
    def covariates(self) -> List[VariableConfig]:
        return self.variables[:-1]


class SimCell(_Schema):
    """模拟网格中的一个单元"""

    outcome_kind: OutcomeKind = "continuous"
    tau_true: float = 0.5
    gamma_true: float = 0.0
    n_per_arm: Optional[int] = Field(default=None, ge=2)

    @property
    def effective_n(self) -> int:
        return self.n_per_arm or DEFAULT_N_PER_ARM[self.outcome_kind]


class SimConfig(_Schema):
    """simulate 子命令的配置"""

    schema_version: Literal[1] = SCHEMA_VERSION
    study: Literal["power", "consistency"] = "power"
    outcome_kind: OutcomeKind = "continuous"
    tau_true: float = 0.5
    gamma_true: float = 0.0
    lambda_covariates: float = 0.25
    lambda_prognostic: float = 0.25
    n_per_arm: Optional[int] = Field(default=None, ge=2)
    replications: int = Field(default=1000, ge=1)
    seed: int = Field(default=DEFAULT_SEED, ge=0, le=2 ** 64 - 1)
    censor_target: float = Field(default=0.7, ge=0.0, lt=1.0)
    cells: Optional[List[SimCell]] = None
    threads: int = Field(default=1, ge=1)
    survival_basis: Literal["bernstein", "log_linear"] = "bernstein"
    full_scale: bool = False
    multiplicity: Literal["maxt", "bonferroni"] = "maxt"
    mc_draws: int = Field(default=100_000, ge=100_000)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    max_failure_rate: float = Field(default=0.05, ge=0.0, le=1.0)
    tau_grid: List[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0])
    lambda_grid: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5])
    gamma_grid: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5])
    consistency_n: int = Field(default=500, ge=2)

    @property
    def effective_replications(self) -> int:
        return FULL_SCALE_REPLICATIONS if self.full_scale else self.replications

    def expand_cells(self) -> List[SimCell]:
        if self.cells:
            return list(self.cells)
        return [SimCell(outcome_kind=self.outcome_kind, tau_true=self.tau_true,
                        gamma_true=self.gamma_true, n_per_arm=self.n_per_arm)]


class GridRange(_Schema):
    start: float
    stop: float
    num: int = Field(ge=1)

    def values(self) -> List[float]:
        return np.linspace(self.start, self.stop, self.num).tolist()


class TheoryGridConfig(_Schema):
    """
    theory 子命令的网格

    axis 为 copula 时使用 lambda/gamma，为 correlation 时使用 rho0/rho1（对照组与处理组潜变量相关）
    """

    schema_version: Literal[1] = SCHEMA_VERSION
    tau: List[float] = Field(default_factory=lambda: [0.5], min_length=1)
    lambda_values: Optional[List[float]] = Field(default=None, alias="lambda")
    gamma_values: Optional[List[float]] = Field(default=None, alias="gamma")
    lambda_range: Optional[GridRange] = None
    gamma_range: Optional[GridRange] = None
    rho0: Optional[List[float]] = None
    rho1: Optional[List[float]] = None
    axis: Literal["copula", "correlation"] = "copula"
    n_per_arm: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_axis(self):
        if self.axis == "correlation":
            for name, values in (("rho0", self.rho0), ("rho1", self.rho1)):
                if not values:
                    raise ValueError(f"correlation 轴需要 {name}")
                if any(not -1.0 < r < 1.0 for r in values):
                    raise ValueError(f"{name} 必须在 (-1, 1) 内")
        values = [*self.tau, *(self.lambda_grid()), *(self.gamma_grid())]
        if not np.all(np.isfinite(values)):
            raise ValueError("网格取值必须是有限值")
        return self

    def lambda_grid(self) -> List[float]:
        if self.lambda_values is not None:
            return list(self.lambda_values)
        return self.lambda_range.values() if self.lambda_range else [0.0]

    def gamma_grid(self) -> List[float]:
        if self.gamma_values is not None:
            return list(self.gamma_values)
        return self.gamma_range.values() if self.gamma_range else [0.0]


ConfigT = TypeVar("ConfigT", bound=BaseModel)


def _diagnostics(error: ValidationError) -> Dict[str, str]:
    return {".".join(str(p) for p in item["loc"]) or "<root>": item["msg"] for item in error.errors()}


def parse_config(data: Dict[str, Any], model: Type[ConfigT]) -> ConfigT:
    """
    校验配置字典

    Raises:
        ConfigError: 校验失败，diagnostics 为字段位置到错误信息的映射
    """
    try:
        return model.model_validate(data)
    except ValidationError as e:
        diagnostics = _diagnostics(e)
        summary = "; ".join(f"{k}: {v}" for k, v in diagnostics.items())
        raise ConfigError(f"配置校验失败: {summary}", diagnostics=diagnostics)


def load_config(file_path: str, model: Type[ConfigT]) -> ConfigT:
    """从 JSON 文件读取并校验配置"""
    return parse_config(FileHandler.read_json(file_path), model)
