"""
模拟研究模块
数据生成过程、删失时间生成、单次重复的 MI / NAMI-HTE 拟合、重复汇总以及单协变量一致性研究
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import special, stats

from config.settings import SimCell, SimConfig
from core.basis import BasisLayout
from core.batch_processor import BatchProcessor
from core.copula import CopulaParams, n_lambda
from core.inference import TheoryPoint, family_tests, var_matrix_theory, wald_test
from core.joint import JointData, JointModel, JointSpec, fit_joint, sample_joint
from core.links import LinkFunction
from core.marginal import MarginalModel, MarginalSpec, ObservationSet, fit_marginal
from utils.exception_handler import NamiHteError
from utils.logger import app_logger


MODEL_MI = "MI"
MODEL_NAMI = "NAMI-HTE"
COVARIATE_NAMES = ("X1", "X2", "X3", "X4")


def covariate_distributions() -> Dict[int, Any]:
    """协变量的真实边际：χ²₅、t₂、t₃、t₄"""
    return {0: stats.chi2(5), 1: stats.t(2), 2: stats.t(3), 3: stats.t(4)}


def censoring_offset(censor_target: float) -> float:
    """删失时间的平移量，使未删失概率 P(Y < C) = 1 − censor_target"""
    return float(special.logit(1.0 - censor_target))


@dataclass(frozen=True, eq=False)
class DataGeneratingProcess:
    """数据生成过程：真实联合模型、拟合用的模型设定与协变量分布"""

    outcome_kind: str
    model: JointModel
    spec: JointSpec
    n_per_arm: int
    tau_true: float
    gamma_true: float
    covariate_distributions: Dict[int, Any] = field(default_factory=dict)
    censor_offset: Optional[float] = None


def _identity_model(name: str, role: str, kind: str = "linear", link: str = "probit",
                    tau: float = 0.0) -> MarginalModel:
    if kind == "step":
        basis = BasisLayout("step", n_levels=2).build([0.0])
    else:
        basis = BasisLayout(kind).build([0.0, 1.0])
    tau_values = np.array([tau]) if role == "outcome" else np.zeros(0)
    return MarginalModel(basis=basis, link=LinkFunction(link), tau=tau_values, role=role, name=name)


_OUTCOME_TRUTH = {
    "continuous": ("linear", "probit"),
    "binary": ("step", "logit"),
    "survival": ("log_linear", "cloglog"),
}


def _outcome_fit_spec(kind: str, survival_basis: str) -> MarginalSpec:
    if kind == "continuous":
        return MarginalSpec("Y", "outcome", basis="linear", link="probit")
    if kind == "binary":
        return MarginalSpec("Y", "outcome", basis="step", n_levels=2, link="logit")
    return MarginalSpec("Y", "outcome", basis=survival_basis, order=6, link="cloglog")


def build_dgp(config: SimConfig, cell: Optional[SimCell] = None) -> DataGeneratingProcess:
    """
    构造四个协变量 + 一个结局的数据生成过程

    协变量之间以及协变量与结局之间的 λ 分别取 lambda_covariates 与 lambda_prognostic，
    γ = (γ₁, 0, 0, 0)；结局边际的 h 取 ϑ₁ = 0、ϑ₂ = 1

    Args:
        config: 模拟配置
        cell: 网格单元，为 None 时使用配置本身

    Returns:
        DataGeneratingProcess: 数据生成过程
    """
    cell = cell or config.expand_cells()[0]
    kind = cell.outcome_kind
    n_vars = len(COVARIATE_NAMES) + 1
    lambdas = np.full(n_lambda(n_vars), config.lambda_covariates)
    lambdas[n_lambda(n_vars - 1):] = config.lambda_prognostic
    gammas = np.zeros((1, n_vars - 1))
    gammas[0, 0] = cell.gamma_true
    basis_kind, link = _OUTCOME_TRUTH[kind]
    marginals = tuple(_identity_model(name, "covariate") for name in COVARIATE_NAMES) \
        + (_identity_model("Y", "outcome", basis_kind, link, cell.tau_true),)
    model = JointModel(marginals, CopulaParams(lambdas, gammas))

    fit_marginals = tuple(MarginalSpec(name, "covariate", basis="bernstein", order=6, link="probit")
                          for name in COVARIATE_NAMES) + (_outcome_fit_spec(kind, config.survival_basis),)
    spec = JointSpec(fit_marginals, n_arms=2, predictive=True)
    offset = censoring_offset(config.censor_target) if kind == "survival" else None
    return DataGeneratingProcess(
        outcome_kind=kind, model=model, spec=spec, n_per_arm=cell.effective_n,
        tau_true=cell.tau_true, gamma_true=cell.gamma_true,
        covariate_distributions=covariate_distributions(), censor_offset=offset,
    )


def gen_censoring(dgp: DataGeneratingProcess, latent_covariates: np.ndarray, arm: int,
                  rng: np.random.Generator) -> np.ndarray:
    """
    生成删失时间

    C 给定 (W, X) 的条件分布与结局同形，只在 h 上多一个平移 γ_c：
    Φ⁻¹ 尺度上先按条件分布抽 z_C，再令 h(C) = G⁻¹(Φ(z_C)) + γ_c + τ_w

    Args:
        dgp: 数据生成过程（需要 censor_offset）
        latent_covariates: 协变量的潜变量，形状 (n, J−1)
        arm: 处理组编号
        rng: 随机数生成器

    Returns:
        np.ndarray: 删失时间
    """
    if dgp.censor_offset is None:
        raise NamiHteError("只有生存结局需要生成删失时间")
    outcome = dgp.model.outcome
    omega = dgp.model.omega(arm).omega
    mean_part = latent_covariates @ omega[-1, :-1]
    z_c = (rng.standard_normal(mean_part.size) - mean_part) / omega[-1, -1]
    target = outcome.link.from_latent(z_c) + dgp.censor_offset + outcome.shift(np.full(z_c.size, arm))
    return outcome.basis.invert(target)


def simulate_dataset(dgp: DataGeneratingProcess, rng: np.random.Generator) -> Tuple[JointData, float]:
    """两组各抽 n_per_arm 行；生存结局加上删失。返回数据与删失比例"""
    parts = []
    for arm in range(dgp.spec.n_arms):
        part = sample_joint(dgp.model, arm, dgp.n_per_arm, rng,
                            covariate_quantiles=dgp.covariate_distributions)
        if dgp.outcome_kind == "survival":
            times = part.columns[-1].lo
            censor = gen_censoring(dgp, part.latent[:, :-1], arm, rng)
            event = times <= censor
            outcome = ObservationSet.from_survival(np.where(event, times, censor), event.astype(float))
            part = JointData(part.columns[:-1] + (outcome,), part.arms, part.latent)
        parts.append(part)
    data = JointData.concat(parts)
    return data, data.columns[-1].censoring_fraction()


def run_replication(dgp: DataGeneratingProcess, index: int, seed: int, cell_index: int = 0,
                    alpha: float = 0.05, multiplicity: str = "maxt",
                    mc_draws: int = 100_000) -> Dict[str, Any]:
    """
    一次模拟重复：生成数据，拟合 MI 与 NAMI-HTE，记录估计、标准误和检验结论

    第 index 次重复的随机流只由 (seed, cell_index, index) 决定，与执行顺序无关

    Returns:
        Dict[str, Any]: 一条记录；拟合失败时对应的 *_ok 为 False 并记录错误信息
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cell_index, index)))
    data, censored = simulate_dataset(dgp, rng)
    record: Dict[str, Any] = {
        "index": index,
        "outcome": dgp.outcome_kind,
        "tau_true": dgp.tau_true,
        "gamma_true": dgp.gamma_true,
        "n_per_arm": dgp.n_per_arm,
        "censoring_fraction": censored,
    }

    try:
        mi = fit_marginal(dgp.spec.outcome, data.columns[-1], data.arms, 2)
        test = wald_test(float(mi.tau[0]), float(mi.tau_se[0]))
        record.update(mi_ok=True, mi_tau=test.estimate, mi_se=test.se, mi_reject=test.p_raw < alpha, mi_error="")
    except NamiHteError as e:
        record.update(mi_ok=False, mi_tau=np.nan, mi_se=np.nan, mi_reject=False, mi_error=str(e))

    try:
        fit = fit_joint(dgp.spec, data)
        if not fit.convergence.converged:
            raise NamiHteError(f"联合模型未收敛: {fit.convergence.message}")
        test = wald_test(float(fit.tau[0]), float(fit.tau_se[0]))
        idx = fit.layout.gamma_indices(1)
        gammas = fit.estimates[idx]
        family = family_tests(gammas, fit.sub_covariance(idx), list(COVARIATE_NAMES), method=multiplicity,
                              draws=mc_draws, seed=seed)
        gamma_reject = any(r.p_adjusted < alpha for r in family.values())
        record.update(nami_ok=True, nami_tau=test.estimate, nami_se=test.se, nami_reject=test.p_raw < alpha,
                      nami_gamma1=float(gammas[0]), nami_gamma_reject=gamma_reject, nami_error="")
    except NamiHteError as e:
        record.update(nami_ok=False, nami_tau=np.nan, nami_se=np.nan, nami_reject=False,
                      nami_gamma1=np.nan, nami_gamma_reject=False, nami_error=str(e))
    app_logger.debug(f"重复 {index} 完成: MI={record['mi_ok']}, NAMI-HTE={record['nami_ok']}")
    return record


@dataclass
class SimSummary:
    """模拟汇总：每个 (结局, 模型, τ, γ) 一行"""

    rows: List[Dict[str, Any]]
    valid: bool

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def _summary_row(records: pd.DataFrame, prefix: str, model: str, alpha: float,
                 max_failure_rate: float) -> Dict[str, Any]:
    ok = records[f"{prefix}_ok"].astype(bool)
    good = records[ok]
    n = len(records)
    failures = int((~ok).sum())
    row = {
        "outcome": records["outcome"].iloc[0],
        "model": model,
        "tau_true": float(records["tau_true"].iloc[0]),
        "gamma_true": float(records["gamma_true"].iloc[0]),
        "n_per_arm": int(records["n_per_arm"].iloc[0]),
        "replications": n,
        "failures": failures,
        "failure_rate": failures / n if n else 0.0,
        "mean_tau": float(good[f"{prefix}_tau"].mean()) if len(good) else np.nan,
        "sd_tau": float(good[f"{prefix}_tau"].std(ddof=1)) if len(good) > 1 else np.nan,
        "mean_se": float(good[f"{prefix}_se"].mean()) if len(good) else np.nan,
        "median_se": float(good[f"{prefix}_se"].median()) if len(good) else np.nan,
        "rejection_rate": float(good[f"{prefix}_reject"].astype(bool).mean()) if len(good) else np.nan,
        "mean_gamma1": np.nan,
        "gamma_rejection_rate": np.nan,
        "censoring_fraction": float(records["censoring_fraction"].mean()),
        "alpha": alpha,
    }
    if prefix == "nami" and len(good):
        row["mean_gamma1"] = float(good["nami_gamma1"].mean())
        row["gamma_rejection_rate"] = float(good["nami_gamma_reject"].astype(bool).mean())
    row["valid"] = row["failure_rate"] <= max_failure_rate
    return row


def summarize(records: List[Dict[str, Any]], alpha: float = 0.05,
              max_failure_rate: float = 0.05) -> SimSummary:
    """把逐次重复的记录归并为汇总表；记录先按 (结局, τ, γ, index) 排序"""
    if not records:
        return SimSummary(rows=[], valid=False)
    frame = pd.DataFrame(records).sort_values(["outcome", "tau_true", "gamma_true", "index"], kind="mergesort")
    rows = []
    for _, group in frame.groupby(["outcome", "tau_true", "gamma_true"], sort=True):
        rows.append(_summary_row(group, "mi", MODEL_MI, alpha, max_failure_rate))
        rows.append(_summary_row(group, "nami", MODEL_NAMI, alpha, max_failure_rate))
    valid = all(r["valid"] for r in rows)
    if not valid:
        app_logger.warning(f"拟合失败率超过 {max_failure_rate:.0%}，模拟结果标记为无效")
    return SimSummary(rows=rows, valid=valid)


def _power_task(payload: Tuple[Dict[str, Any], int, int]) -> Dict[str, Any]:
    config_data, cell_index, index = payload
    config = SimConfig.model_validate(config_data)
    cell = config.expand_cells()[cell_index]
    dgp = build_dgp(config, cell)
    return run_replication(dgp, index, config.seed, cell_index, config.alpha,
                           config.multiplicity, config.mc_draws)


def run_study(config: SimConfig) -> Tuple[SimSummary, List[Dict[str, Any]]]:
    """
    对每个网格单元执行 effective_replications 次重复并汇总

    Returns:
        Tuple[SimSummary, List[Dict]]: 汇总与逐次重复记录
    """
    config_data = config.model_dump(by_alias=True)
    reps = config.effective_replications
    tasks = []
    for cell_index, _ in enumerate(config.expand_cells()):
        tasks.extend((len(tasks), (config_data, cell_index, r)) for r in range(reps))
    batch = BatchProcessor(workers=config.threads).run(_power_task, tasks, label="模拟重复")
    records = batch["results"]
    summary = summarize(records, config.alpha, config.max_failure_rate)
    if batch["failed"]:
        summary.valid = False
    return summary, records


@dataclass(frozen=True)
class ConsistencyPoint:
    tau: float
    lam: float
    gamma: float


def build_consistency_dgp(point: ConsistencyPoint, n_per_arm: int) -> DataGeneratingProcess:
    """单个正态协变量、正态结局的两变量模型"""
    marginals = (_identity_model("X1", "covariate"), _identity_model("Y", "outcome", tau=point.tau))
    model = JointModel(marginals, CopulaParams([point.lam], [[point.gamma]]))
    spec = JointSpec((MarginalSpec("X1", "covariate", basis="linear"),
                      MarginalSpec("Y", "outcome", basis="linear")), n_arms=2)
    return DataGeneratingProcess(outcome_kind="continuous", model=model, spec=spec, n_per_arm=n_per_arm,
                                 tau_true=point.tau, gamma_true=point.gamma)


def _consistency_task(payload: Tuple[ConsistencyPoint, int, int, int, int]) -> Dict[str, Any]:
    point, n_per_arm, seed, point_index, index = payload
    dgp = build_consistency_dgp(point, n_per_arm)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(point_index, index)))
    data, _ = simulate_dataset(dgp, rng)
    record = {"point": point_index, "index": index, "tau": point.tau, "lambda": point.lam, "gamma": point.gamma}
    try:
        fit = fit_joint(dgp.spec, data)
        if not fit.convergence.converged:
            raise NamiHteError("联合模型未收敛")
        lam_idx = int(fit.layout.prognostic_indices()[0])
        gamma_idx = int(fit.layout.gamma_indices(1)[0])
        tau_idx = int(fit.layout.tau_indices()[0])
        se = np.sqrt(np.diag(fit.covariance))
        record.update(ok=True,
                      est_lambda=float(fit.estimates[lam_idx]), se_lambda=float(se[lam_idx]),
                      est_gamma=float(fit.estimates[gamma_idx]), se_gamma=float(se[gamma_idx]),
                      est_tau=float(fit.estimates[tau_idx]), se_tau=float(se[tau_idx]), error="")
    except NamiHteError as e:
        record.update(ok=False, est_lambda=np.nan, se_lambda=np.nan, est_gamma=np.nan,
                      se_gamma=np.nan, est_tau=np.nan, se_tau=np.nan, error=str(e))
    return record


def consistency_study(config: SimConfig, points: Optional[List[ConsistencyPoint]] = None
                      ) -> Tuple[pd.DataFrame, List[Dict[str, Any]]]:
    """
    比较单协变量正态-正态设计下估计的标准误与闭式渐近标准误

    Args:
        config: 模拟配置（使用 tau_grid、lambda_grid、gamma_grid、consistency_n）
        points: 网格点，为 None 时取三个网格的笛卡尔积

    Returns:
        Tuple[pd.DataFrame, List[Dict]]: 每个网格点一行的对比表与逐次重复记录
    """
    if points is None:
        points = [ConsistencyPoint(t, lam, g) for t in config.tau_grid
                  for lam in config.lambda_grid for g in config.gamma_grid]
    reps = config.effective_replications
    n = config.consistency_n
    tasks = []
    for p_index, point in enumerate(points):
        tasks.extend((len(tasks), (point, n, config.seed, p_index, r)) for r in range(reps))
    batch = BatchProcessor(workers=config.threads).run(_consistency_task, tasks, label="一致性研究")
    records = batch["results"]
    frame = pd.DataFrame(records)

    rows = []
    for p_index, point in enumerate(points):
        group = frame[(frame["point"] == p_index) & frame["ok"].astype(bool)] if len(frame) else frame
        theory = np.sqrt(np.diag(var_matrix_theory(TheoryPoint(point.tau, point.lam, point.gamma, n))))
        row = {"tau": point.tau, "lambda": point.lam, "gamma": point.gamma, "n_per_arm": n,
               "replications": reps, "failures": reps - len(group)}
        truth = {"lambda": point.lam, "gamma": point.gamma, "tau": point.tau}
        for name, theory_se in zip(("lambda", "gamma", "tau"), theory):
            mean_se = float(group[f"se_{name}"].mean()) if len(group) else np.nan
            row[f"theory_se_{name}"] = float(theory_se)
            row[f"mean_se_{name}"] = mean_se
            row[f"rel_dev_se_{name}"] = mean_se / theory_se - 1.0
            row[f"mean_est_{name}"] = float(group[f"est_{name}"].mean()) if len(group) else np.nan
            row[f"sd_est_{name}"] = float(group[f"est_{name}"].std(ddof=1)) if len(group) > 1 else np.nan
            row[f"bias_{name}"] = row[f"mean_est_{name}"] - truth[name]
        row["valid"] = row["failures"] <= config.max_failure_rate * reps
        rows.append(row)
    return pd.DataFrame(rows), records
