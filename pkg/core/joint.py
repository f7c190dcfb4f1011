"""
联合模型模块
(X, Y | W) 的精确联合似然、两阶段极大似然拟合、条件/边际派生模型，以及模拟共用的潜高斯采样器
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, special

from core.basis import BasisLayout
from core.copula import (
    CopulaParams,
    OmegaFactor,
    StrengthTable,
    build_lambda,
    conditional_summary,
    correlation,
    n_lambda,
    standardize,
    strengths,
)
from core.links import LinkFunction
from core.marginal import (
    CATEGORY,
    EXACT,
    LATENT_CLAMP,
    MISSING,
    MarginalFit,
    MarginalModel,
    MarginalSpec,
    ObservationSet,
    PreparedColumn,
    fit_marginal,
    to_latent,
)
from core.optimizer import (
    ConvergenceInfo,
    covariance_from_information,
    delta_method_se,
    maximize,
    observed_information,
)
from utils.exception_handler import (
    IdentifiabilityError,
    InputError,
    MarginalFitError,
    NamiHteError,
    UnsupportedConfigurationError,
)
from utils.logger import app_logger


_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_PROBIT = LinkFunction("probit")
RECOVERY_DRAWS = 100_000
RECOVERY_SEED = 20240517


def _log_phi(x: np.ndarray) -> np.ndarray:
    return -0.5 * x * x - _LOG_SQRT_2PI


@dataclass(frozen=True)
class JointSpec:
    """
    联合模型设定

    marginals 按声明顺序排列，协变量在前、结局在最后；变量顺序是模型的一部分
    """

    marginals: Tuple[MarginalSpec, ...]
    n_arms: int = 2
    predictive: bool = True
    discrete_approx: bool = False
    jitter_seed: int = 0
    arm_labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        marginals = tuple(self.marginals)
        object.__setattr__(self, "marginals", marginals)
        if not marginals:
            raise InputError("联合模型至少需要一个结局变量")
        roles = [m.role for m in marginals]
        if roles.count("outcome") != 1 or roles[-1] != "outcome":
            raise InputError("联合模型必须恰有一个结局变量，且位于最后")
        names = [m.name for m in marginals]
        if len(set(names)) != len(names):
            raise InputError(f"变量名称重复: {names}")
        if self.n_arms < 2:
            raise InputError("至少需要两个处理组")
        if self.arm_labels is not None:
            labels = tuple(str(label) for label in self.arm_labels)
            if len(labels) != self.n_arms:
                raise InputError("处理组标签数与处理组数不一致")
            object.__setattr__(self, "arm_labels", labels)

    @property
    def n_vars(self) -> int:
        return len(self.marginals)

    @property
    def names(self) -> List[str]:
        return [m.name for m in self.marginals]

    @property
    def covariate_names(self) -> List[str]:
        return self.names[:-1]

    @property
    def outcome(self) -> MarginalSpec:
        return self.marginals[-1]

    @property
    def labels(self) -> List[str]:
        if self.arm_labels is not None:
            return list(self.arm_labels)
        return [str(a) for a in range(self.n_arms)]


@dataclass(frozen=True, eq=False)
class JointData:
    """联合数据：每个变量一列观测，加上处理组编号；采样数据附带潜变量矩阵"""

    columns: Tuple[ObservationSet, ...]
    arms: np.ndarray
    latent: Optional[np.ndarray] = None

    def __post_init__(self):
        columns = tuple(self.columns)
        arms = np.array(self.arms, dtype=int).reshape(-1)
        if any(len(c) != arms.size for c in columns):
            raise InputError("各变量的观测数与处理组编号长度不一致")
        arms.setflags(write=False)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "arms", arms)

    @property
    def n_rows(self) -> int:
        return self.arms.size

    def subset(self, index) -> "JointData":
        latent = None if self.latent is None else self.latent[index]
        return JointData(tuple(c[index] for c in self.columns), self.arms[index], latent)

    @classmethod
    def concat(cls, parts: Sequence["JointData"]) -> "JointData":
        n_cols = len(parts[0].columns)
        columns = []
        for j in range(n_cols):
            cols = [p.columns[j] for p in parts]
            columns.append(ObservationSet(np.concatenate([c.kinds for c in cols]),
                                          np.concatenate([c.lo for c in cols]),
                                          np.concatenate([c.hi for c in cols])))
        latent = None
        if all(p.latent is not None for p in parts):
            latent = np.vstack([p.latent for p in parts])
        return cls(tuple(columns), np.concatenate([p.arms for p in parts]), latent)


class ParameterLayout:
    """
    无约束参数向量的布局

    [各变量变换参数（结局之后紧跟 τ）, λ（行优先下三角）, γ（每个非对照组 J−1 个）]
    """

    def __init__(self, spec: JointSpec, basis_layouts: Sequence[BasisLayout]):
        self.spec = spec
        self.basis_layouts = list(basis_layouts)
        j = spec.n_vars
        a = spec.n_arms
        pos = 0
        self.basis_slices = []
        for index, layout in enumerate(self.basis_layouts):
            self.basis_slices.append(slice(pos, pos + layout.n_params))
            pos += layout.n_params
            if index == j - 1:
                self.tau_slice = slice(pos, pos + a - 1)
                pos += a - 1
        self.lambda_slice = slice(pos, pos + n_lambda(j))
        pos += n_lambda(j)
        n_gamma = (a - 1) * (j - 1) if spec.predictive else 0
        self.gamma_slice = slice(pos, pos + n_gamma)
        pos += n_gamma
        self.size = pos

    @property
    def copula_slice(self) -> slice:
        return slice(self.lambda_slice.start, self.gamma_slice.stop)

    def lambda_index(self, row: int, col: int) -> int:
        """λ_{row,col}（0 起始，col < row）在参数向量中的位置"""
        if not 0 <= col < row < self.spec.n_vars:
            raise InputError(f"λ 下标无效: ({row}, {col})")
        return self.lambda_slice.start + row * (row - 1) // 2 + col

    def prognostic_indices(self) -> np.ndarray:
        j = self.spec.n_vars
        return np.array([self.lambda_index(j - 1, c) for c in range(j - 1)], dtype=int)

    def gamma_indices(self, arm: int) -> np.ndarray:
        if not self.spec.predictive:
            return np.zeros(0, dtype=int)
        j = self.spec.n_vars
        start = self.gamma_slice.start + (arm - 1) * (j - 1)
        return np.arange(start, start + j - 1)

    def tau_indices(self) -> np.ndarray:
        return np.arange(self.tau_slice.start, self.tau_slice.stop)

    def split(self, raw: np.ndarray):
        """拆分为 (各变量系数, τ, λ, γ)"""
        raw = np.asarray(raw, dtype=float)
        coefs = [layout.constrain(raw[s], spec.positivity)
                 for layout, s, spec in zip(self.basis_layouts, self.basis_slices, self.spec.marginals)]
        tau = raw[self.tau_slice]
        lambdas = raw[self.lambda_slice]
        j = self.spec.n_vars
        if self.spec.predictive:
            gammas = raw[self.gamma_slice].reshape(self.spec.n_arms - 1, j - 1)
        else:
            gammas = np.zeros((self.spec.n_arms - 1, j - 1))
        return coefs, tau, lambdas, gammas

    def copula(self, raw: np.ndarray) -> CopulaParams:
        _, _, lambdas, gammas = self.split(raw)
        return CopulaParams(lambdas, gammas)

    def model(self, raw: np.ndarray) -> "JointModel":
        coefs, tau, lambdas, gammas = self.split(raw)
        marginals = []
        for index, (spec, layout, coef) in enumerate(zip(self.spec.marginals, self.basis_layouts, coefs)):
            is_outcome = index == self.spec.n_vars - 1
            marginals.append(MarginalModel(
                basis=layout.build(coef), link=LinkFunction(spec.link),
                tau=tau if is_outcome else np.zeros(0), role=spec.role, name=spec.name,
            ))
        return JointModel(tuple(marginals), CopulaParams(lambdas, gammas))

    def labels(self) -> List[str]:
        """参数名称，用于报告"""
        spec = self.spec
        names = spec.names
        arm_labels = spec.labels
        out = []
        for index, (name, layout) in enumerate(zip(names, self.basis_layouts)):
            out.extend(f"{name}.theta[{k}]" for k in range(layout.n_params))
            if index == spec.n_vars - 1:
                out.extend(f"tau[{arm_labels[a]}]" for a in range(1, spec.n_arms))
        for row in range(1, spec.n_vars):
            for col in range(row):
                out.append(f"lambda[{names[row]},{names[col]}]")
        if spec.predictive:
            for a in range(1, spec.n_arms):
                out.extend(f"gamma[{arm_labels[a]},{names[c]}]" for c in range(spec.n_vars - 1))
        return out


@dataclass(frozen=True, eq=False)
class JointModel:
    """具体参数下的联合模型：各变量边际模型 + copula 参数"""

    marginals: Tuple[MarginalModel, ...]
    copula: CopulaParams

    @property
    def n_vars(self) -> int:
        return len(self.marginals)

    @property
    def n_arms(self) -> int:
        return self.copula.n_arms

    @property
    def outcome(self) -> MarginalModel:
        return self.marginals[-1]

    def omega(self, arm: int) -> OmegaFactor:
        return standardize(build_lambda(self.copula, arm))

    def correlation(self, arm: int) -> np.ndarray:
        return correlation(self.omega(arm))


class JointEvaluator:
    """在无约束参数上求值联合对数似然；设计矩阵与抖动随机数在构造时一次性准备"""

    def __init__(self, spec: JointSpec, basis_layouts: Sequence[BasisLayout], data: JointData):
        if len(data.columns) != spec.n_vars:
            raise InputError(f"数据列数 {len(data.columns)} 与模型变量数 {spec.n_vars} 不一致")
        arms = data.arms
        if np.any(arms < 0) or np.any(arms >= spec.n_arms):
            raise InputError(f"处理组编号必须在 0..{spec.n_arms - 1} 之间")
        self.spec = spec
        self.data = data
        self.layout = ParameterLayout(spec, basis_layouts)
        self.links = [LinkFunction(m.link) for m in spec.marginals]
        self.prepared = [PreparedColumn(layout, column)
                         for layout, column in zip(basis_layouts, data.columns)]
        self.arms = arms
        self.n_rows = data.n_rows

        n_cov = spec.n_vars - 1
        self.cov_exact = []
        for j in range(n_cov):
            column = data.columns[j]
            name = spec.names[j]
            if np.any(column.missing):
                raise InputError(f"协变量 {name} 存在缺失值，只支持结局缺失")
            exact = column.exact
            if not np.all(exact) and not spec.discrete_approx:
                raise UnsupportedConfigurationError(
                    f"协变量 {name} 是离散或删失变量，精确似然不支持；"
                    f"如需近似处理请使用 --discrete-approx"
                )
            self.cov_exact.append(exact)
        # 离散协变量的潜区间内抖动：固定种子，每次求值使用同一组均匀随机数
        rng = np.random.default_rng(spec.jitter_seed)
        self.jitter = rng.uniform(size=(self.n_rows, n_cov))

        outcome = data.columns[-1]
        self.outcome_exact = outcome.kinds == EXACT
        self.outcome_other = ~self.outcome_exact & (outcome.kinds != MISSING)

    def loglik(self, raw: np.ndarray) -> float:
        coefs, tau, lambdas, gammas = self.layout.split(raw)
        try:
            copula = CopulaParams(lambdas, gammas)
        except InputError:
            return -np.inf
        return self.loglik_parts(coefs, tau, copula)

    def row_loglik(self, coefs: Sequence[np.ndarray], tau: np.ndarray,
                   copula: CopulaParams) -> np.ndarray:
        """逐行对数似然贡献"""
        spec = self.spec
        n_cov = spec.n_vars - 1
        n = self.n_rows
        latent = np.empty((n, n_cov))
        marginal_terms = np.empty((n, n_cov))

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for j in range(n_cov):
                link = self.links[j]
                h_lo, h_hi, hprime = self.prepared[j].h_bounds(coefs[j])
                exact = self.cov_exact[j]
                z_lo, _ = link.to_latent(h_lo, clamp=LATENT_CLAMP)
                latent[:, j] = z_lo
                marginal_terms[:, j] = link.logpdf(h_lo) + np.log(hprime)
                if not np.all(exact):
                    other = ~exact
                    z_hi, _ = link.to_latent(h_hi[other], clamp=LATENT_CLAMP)
                    p_lo = special.ndtr(z_lo[other])
                    p_hi = special.ndtr(z_hi)
                    draw = special.ndtri(p_lo + self.jitter[other, j] * (p_hi - p_lo))
                    draw = np.clip(np.clip(draw, z_lo[other], z_hi), -LATENT_CLAMP, LATENT_CLAMP)
                    latent[other, j] = draw
                    marginal_terms[other, j] = link.log_prob_interval(h_lo[other], h_hi[other])

            omegas = [standardize(build_lambda(copula, a)).omega for a in range(spec.n_arms)]
            cov_block = omegas[0][:n_cov, :n_cov]
            eps = latent @ cov_block.T
            terms = np.sum(_log_phi(eps) - _log_phi(latent), axis=1) \
                + np.sum(np.log(np.diag(cov_block))) + np.sum(marginal_terms, axis=1)

            link = self.links[-1]
            h_lo, h_hi, hprime = self.prepared[-1].h_bounds(coefs[-1])
            shift = np.concatenate([[0.0], tau])[self.arms]
            last_rows = np.array([om[-1, :n_cov] for om in omegas])[self.arms]
            w = np.array([om[-1, -1] for om in omegas])[self.arms]
            mean_part = np.sum(latent * last_rows, axis=1)

            outcome_terms = np.zeros(n)
            exact = self.outcome_exact
            if np.any(exact):
                u = h_lo[exact] - shift[exact]
                z, _ = link.to_latent(u, clamp=LATENT_CLAMP)
                e = mean_part[exact] + w[exact] * z
                outcome_terms[exact] = (_log_phi(e) - _log_phi(z)) + np.log(w[exact]) \
                    + (link.logpdf(u) + np.log(hprime[exact]))
            other = self.outcome_other
            if np.any(other):
                z_lo, _ = link.to_latent(h_lo[other] - shift[other], clamp=LATENT_CLAMP)
                z_hi, _ = link.to_latent(h_hi[other] - shift[other], clamp=LATENT_CLAMP)
                m = mean_part[other]
                outcome_terms[other] = _PROBIT.log_prob_interval(m + w[other] * z_lo, m + w[other] * z_hi)
        return terms + outcome_terms

    def loglik_parts(self, coefs: Sequence[np.ndarray], tau: np.ndarray, copula: CopulaParams) -> float:
        total = float(np.sum(self.row_loglik(coefs, tau, copula)))
        return total if np.isfinite(total) else -np.inf


def joint_loglik(spec: JointSpec, model: JointModel, data: JointData) -> float:
    """
    联合对数似然

    Args:
        spec: 模型设定（离散近似开关与抖动种子取自这里）
        model: 具体参数
        data: 联合数据

    Returns:
        float: 对数似然；非有限时返回 -inf
    """
    if model.n_vars != spec.n_vars:
        raise InputError("模型变量数与设定不一致")
    layouts = [m.basis.layout for m in model.marginals]
    evaluator = JointEvaluator(spec, layouts, data)
    coefs = [m.basis.coefficients for m in model.marginals]
    return evaluator.loglik_parts(coefs, model.outcome.tau, model.copula)


@dataclass(frozen=True, eq=False)
class JointFit:
    """联合模型拟合结果"""

    spec: JointSpec
    layout: ParameterLayout
    estimates: np.ndarray
    loglik: float
    covariance: np.ndarray
    convergence: ConvergenceInfo
    model: JointModel
    n_rows: int
    stage1: Tuple[MarginalFit, ...] = field(default_factory=tuple)

    @property
    def tau(self) -> np.ndarray:
        return self.estimates[self.layout.tau_slice]

    @property
    def tau_se(self) -> np.ndarray:
        idx = self.layout.tau_indices()
        return np.sqrt(np.diag(self.covariance)[idx])

    def sub_covariance(self, indices: np.ndarray) -> np.ndarray:
        return self.covariance[np.ix_(indices, indices)]

    def omega(self, arm: int) -> OmegaFactor:
        return self.model.omega(arm)

    def correlation(self, arm: int) -> np.ndarray:
        return self.model.correlation(arm)

    def strengths(self) -> StrengthTable:
        omegas = [self.omega(a) for a in range(self.spec.n_arms)]
        return strengths(omegas[0], omegas[1:])

    def conditional_summary(self, arm: int):
        return conditional_summary(self.omega(arm))

    def derived_quantities(self) -> Dict[str, Any]:
        """强度、β、σ_J、R² 及其 delta 方法标准误"""
        spec = self.spec
        n_cov = spec.n_vars - 1
        sl = self.layout.copula_slice
        x = self.estimates[sl]
        cov = self.covariance[sl, sl]

        def evaluate(copula_raw):
            theta = self.estimates.copy()
            theta[sl] = copula_raw
            params = self.layout.copula(theta)
            omegas = [standardize(build_lambda(params, a)) for a in range(spec.n_arms)]
            table = strengths(omegas[0], omegas[1:])
            values = [table.prognostic, table.predictive.reshape(-1)]
            for om in omegas:
                betas, sigma, r2 = conditional_summary(om)
                values.extend([betas, [sigma, r2]])
            return np.concatenate([np.asarray(v, dtype=float).reshape(-1) for v in values])

        values = evaluate(x)
        if np.all(np.isfinite(cov)) and x.size:
            se = delta_method_se(evaluate, x, cov)
        else:
            se = np.full(values.shape, np.nan)

        names = spec.covariate_names
        arm_labels = spec.labels
        pos = 0

        def take(count):
            nonlocal pos
            out = (values[pos:pos + count], se[pos:pos + count])
            pos += count
            return out

        prognostic = take(n_cov)
        predictive = take((spec.n_arms - 1) * n_cov)
        per_arm = []
        for a in range(spec.n_arms):
            betas = take(n_cov)
            sigma_r2 = take(2)
            per_arm.append({
                "arm": arm_labels[a],
                "beta": {names[c]: {"estimate": float(betas[0][c]), "se": float(betas[1][c])} for c in range(n_cov)},
                "sigma_J": {"estimate": float(sigma_r2[0][0]), "se": float(sigma_r2[1][0])},
                "r_squared": {"estimate": float(sigma_r2[0][1]), "se": float(sigma_r2[1][1])},
            })
        table = self.strengths()
        return {
            "prognostic_strength": {
                names[c]: {"estimate": float(prognostic[0][c]), "se": float(prognostic[1][c])} for c in range(n_cov)
            },
            "predictive_strength": [
                {
                    "arm": arm_labels[a + 1],
                    "values": {
                        names[c]: {"estimate": float(predictive[0][a * n_cov + c]),
                                   "se": float(predictive[1][a * n_cov + c])}
                        for c in range(n_cov)
                    },
                }
                for a in range(spec.n_arms - 1)
            ],
            "ranking": table.to_dict(names),
            "conditional": per_arm,
        }


def _check_arms(spec: JointSpec, data: JointData):
    outcome_observed = ~data.columns[-1].missing
    for a in range(spec.n_arms):
        if not np.any((data.arms == a) & outcome_observed):
            raise InputError(f"处理组 {spec.labels[a]} 没有观测到的结局")


def fit_joint(spec: JointSpec, data: JointData, init: Optional[np.ndarray] = None,
              gtol: float = 1e-5, ftol: float = 1e-9, max_iter: int = 1000) -> JointFit:
    """
    两阶段联合极大似然

    第一阶段分别拟合每个边际模型；第二阶段以边际估计和 λ = γ = 0 为初值，对全部参数联合优化

    Args:
        spec: 模型设定
        data: 联合数据
        init: 完整无约束参数的初值（热启动），为 None 时使用两阶段初始化
        gtol: 缩放梯度容差
        ftol: 相对对数似然变化容差
        max_iter: 最大迭代次数

    Returns:
        JointFit: 拟合结果；未收敛时 convergence.status 为 flagged

    Raises:
        MarginalFitError: 第一阶段某个变量拟合失败
        IdentifiabilityError: 观测信息矩阵奇异
    """
    if len(data.columns) != spec.n_vars:
        raise InputError(f"数据列数 {len(data.columns)} 与模型变量数 {spec.n_vars} 不一致")
    _check_arms(spec, data)

    stage1 = []
    for j, marginal in enumerate(spec.marginals):
        try:
            fit = fit_marginal(marginal, data.columns[j], data.arms, spec.n_arms,
                               gtol=gtol, ftol=ftol, max_iter=max_iter)
        except NamiHteError as e:
            app_logger.error(f"第一阶段: 变量 {marginal.name} 拟合失败: {e}")
            raise MarginalFitError(f"第一阶段: 变量 {marginal.name} 拟合失败: {e}", variable=marginal.name)
        stage1.append(fit)
    app_logger.debug("第一阶段边际拟合完成")

    layouts = [f.model.basis.layout for f in stage1]
    evaluator = JointEvaluator(spec, layouts, data)
    layout = evaluator.layout

    # 没有协变量时联合模型就是边际模型
    if spec.n_vars == 1:
        only = stage1[0]
        return JointFit(spec=spec, layout=layout, estimates=only.raw, loglik=only.loglik,
                        covariance=only.covariance, convergence=only.convergence,
                        model=layout.model(only.raw), n_rows=data.n_rows, stage1=tuple(stage1))

    if init is None:
        x0 = np.concatenate([f.raw for f in stage1] + [np.zeros(layout.size - sum(f.raw.size for f in stage1))])
    else:
        x0 = np.asarray(init, dtype=float)
        if x0.shape != (layout.size,):
            raise InputError(f"初值长度应为 {layout.size}，实际为 {x0.shape}")

    result = maximize(evaluator.loglik, x0, n_obs=data.n_rows, gtol=gtol, ftol=ftol,
                      max_iter=max_iter, label="联合模型")
    try:
        covariance = covariance_from_information(observed_information(evaluator.loglik, result.x))
    except IdentifiabilityError:
        if result.convergence.converged:
            raise
        covariance = np.full((layout.size, layout.size), np.nan)

    fit = JointFit(spec=spec, layout=layout, estimates=result.x, loglik=result.loglik,
                   covariance=covariance, convergence=result.convergence,
                   model=layout.model(result.x), n_rows=data.n_rows, stage1=tuple(stage1))
    app_logger.debug(f"联合模型拟合完成: 对数似然 {fit.loglik:.4f}, τ = {fit.tau.tolist()}")
    return fit


def _model_of(fit_or_model: Union[JointFit, JointModel]) -> JointModel:
    return fit_or_model.model if isinstance(fit_or_model, JointFit) else fit_or_model


def _covariate_latent(model: JointModel, covariate_values: np.ndarray, arm: int) -> np.ndarray:
    values = np.atleast_2d(np.asarray(covariate_values, dtype=float))
    n_cov = model.n_vars - 1
    if values.shape[1] != n_cov:
        raise InputError(f"协变量个数应为 {n_cov}")
    if model.n_vars > 1 and any(m.basis.kind == "step" for m in model.marginals[:-1]):
        raise UnsupportedConfigurationError("条件分布函数要求连续协变量")
    return np.column_stack([np.atleast_1d(to_latent(model.marginals[j], values[:, j], arm))
                            for j in range(n_cov)]) if n_cov else np.zeros((values.shape[0], 0))


def conditional_cdf(fit: Union[JointFit, JointModel], y, arm: int, covariate_values) -> np.ndarray:
    """
    条件分布函数 Φ(Σ_j ω_{Jj} h_j(x_j) + ω_{JJ} h_J(y|w))

    Args:
        fit: 拟合结果或联合模型
        y: 结局取值（标量或与协变量行数一致的数组）
        arm: 处理组编号
        covariate_values: 形状 (J−1,) 或 (n, J−1) 的协变量取值

    Returns:
        条件概率，标量输入返回 float
    """
    model = _model_of(fit)
    scalar = np.ndim(y) == 0 and np.ndim(covariate_values) <= 1
    latent = _covariate_latent(model, covariate_values, arm)
    omega = model.omega(arm).omega
    h_y = np.atleast_1d(to_latent(model.outcome, y, arm))
    value = special.ndtr(latent @ omega[-1, :-1] + omega[-1, -1] * h_y)
    return float(value[0]) if scalar else value


def sample_latent(copula: CopulaParams, arm: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """抽取 Z ~ N_J(0, Σ(w))：先抽独立标准正态 ε，再解 ΩZ = ε"""
    omega = standardize(build_lambda(copula, arm)).omega
    eps = rng.standard_normal((n, omega.shape[0]))
    return linalg.solve_triangular(omega, eps.T, lower=True).T


def marginal_recovery_check(fit: Union[JointFit, JointModel], arm: int, y_grid,
                            draws: int = RECOVERY_DRAWS, seed: int = RECOVERY_SEED) -> float:
    """
    用协变量 copula 的蒙特卡罗样本对条件分布函数取平均，与边际分布函数比较

    边际分布函数在潜变量尺度上计算为 Φ(h_J(y|w))，与 G(h(y) − τ) 相同

    Returns:
        float: 网格上的最大绝对偏差
    """
    model = _model_of(fit)
    omega = model.omega(arm).omega
    h_y = np.atleast_1d(to_latent(model.outcome, np.asarray(y_grid), arm))
    reference = special.ndtr(h_y)
    last = omega[-1, :-1]
    if not np.any(last):
        averaged = special.ndtr(omega[-1, -1] * h_y)
        return float(np.max(np.abs(averaged - reference)))

    rng = np.random.default_rng(seed)
    n_cov = model.n_vars - 1
    cov_block = omega[:n_cov, :n_cov]
    eps = rng.standard_normal((draws, n_cov))
    latent = linalg.solve_triangular(cov_block, eps.T, lower=True).T
    mean_part = latent @ last
    averaged = np.array([np.mean(special.ndtr(mean_part + omega[-1, -1] * h)) for h in h_y])
    return float(np.max(np.abs(averaged - reference)))


def _quantile_from_latent(dist, z: np.ndarray) -> np.ndarray:
    """dist 的分位数在 Φ(z) 处取值；上尾用生存函数避免舍入"""
    return np.where(z < 0, dist.ppf(special.ndtr(z)), dist.isf(special.ndtr(-z)))


def _invert_marginal(model: MarginalModel, z: np.ndarray, arm: int) -> np.ndarray:
    target = model.link.from_latent(z) + model.shift(np.full(z.shape, arm))
    basis = model.basis
    if basis.kind == "bernstein":
        lo, hi = basis.coefficients[0], basis.coefficients[-1]
        outside = (target < lo) | (target > hi)
        if np.any(outside):
            app_logger.warning(f"{model.name}: {int(outside.sum())} 个采样值超出 Bernstein 变换范围，已截断到支撑集边界")
            target = np.clip(target, lo, hi)
    return basis.invert(target)


def sample_joint(model: JointModel, arm: int, n: int, seed=None,
                 covariate_quantiles: Optional[Mapping[int, Any]] = None) -> JointData:
    """
    从联合模型抽样

    抽取 Z ~ N_J(0, Σ(w))，再把每个坐标经潜变量反变换映射回原尺度；
    结局坐标满足 G(h(y) − τ_arm) = Φ(z_J)

    Args:
        model: 联合模型
        arm: 处理组编号
        n: 样本量
        seed: 整数种子、SeedSequence 或 Generator
        covariate_quantiles: 协变量下标 -> 带 ppf/isf 的分布对象（如 scipy.stats 冻结分布），
            覆盖该协变量的边际模型

    Returns:
        JointData: 样本（附带潜变量矩阵）
    """
    if n < 1:
        raise InputError("样本量必须至少为 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    latent = sample_latent(model.copula, arm, n, rng)
    overrides = dict(covariate_quantiles or {})
    columns = []
    for j, marginal in enumerate(model.marginals):
        z = latent[:, j]
        if j in overrides:
            columns.append(ObservationSet.from_exact(_quantile_from_latent(overrides[j], z)))
            continue
        values = _invert_marginal(marginal, z, arm)
        if marginal.basis.kind == "step":
            columns.append(ObservationSet.from_categories(values))
        else:
            columns.append(ObservationSet.from_exact(values))
    return JointData(tuple(columns), np.full(n, arm, dtype=int), latent)
