"""
边际变换模型模块
实现 F_w(y) = G(h(y) − τ_w)：删失感知的似然、极大似然拟合与潜变量尺度映射 h_J(·|w)
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from core.basis import BasisLayout, TransformationBasis
from core.links import LinkFunction
from core.optimizer import (
    ConvergenceInfo,
    covariance_from_information,
    maximize,
    observed_information,
)
from utils.exception_handler import ConvergenceError, InputError
from utils.logger import app_logger


LATENT_CLAMP = 8.0

# 观测类型编码
EXACT = 0
RIGHT = 1
LEFT = 2
INTERVAL = 3
CATEGORY = 4
MISSING = 5

KIND_NAMES = {
    EXACT: "exact",
    RIGHT: "right",
    LEFT: "left",
    INTERVAL: "interval",
    CATEGORY: "category",
    MISSING: "missing",
}


@dataclass(frozen=True)
class Datum:
    """单个观测：精确值、右删失、左删失、区间删失、有序类别或缺失"""

    kind: int
    lo: float = np.nan
    hi: float = np.nan

    def __post_init__(self):
        given = {RIGHT: (self.lo,), LEFT: (self.hi,), INTERVAL: (self.lo, self.hi)}.get(self.kind, ())
        if not all(np.isfinite(b) for b in given):
            raise InputError("删失边界必须是有限值")
        if self.kind == INTERVAL and not self.lo < self.hi:
            raise InputError(f"区间删失要求 lo < hi，当前为 ({self.lo}, {self.hi})")

    @classmethod
    def exact(cls, value: float) -> "Datum":
        return cls(EXACT, float(value), float(value))

    @classmethod
    def right(cls, lo: float) -> "Datum":
        return cls(RIGHT, float(lo), np.inf)

    @classmethod
    def left(cls, hi: float) -> "Datum":
        return cls(LEFT, -np.inf, float(hi))

    @classmethod
    def interval(cls, lo: float, hi: float) -> "Datum":
        return cls(INTERVAL, float(lo), float(hi))

    @classmethod
    def category(cls, k: int) -> "Datum":
        return cls(CATEGORY, float(k), float(k))

    @classmethod
    def missing(cls) -> "Datum":
        return cls(MISSING)

    @property
    def is_missing(self) -> bool:
        return self.kind == MISSING


class ObservationSet:
    """
    一个变量的全部观测（向量化表示）

    kinds 为观测类型编码；精确值和类别的 lo 与 hi 相同，右删失 hi 为 +inf，左删失 lo 为 -inf
    """

    def __init__(self, kinds: np.ndarray, lo: np.ndarray, hi: np.ndarray):
        kinds = np.array(kinds, dtype=int)
        lo = np.array(lo, dtype=float)
        hi = np.array(hi, dtype=float)
        if not (kinds.shape == lo.shape == hi.shape) or kinds.ndim != 1:
            raise InputError("观测数组的长度不一致")
        censored = np.isin(kinds, (RIGHT, LEFT, INTERVAL))
        if np.any(censored & ~(lo < hi)):
            raise InputError("删失观测要求下界小于上界")
        exact = kinds == EXACT
        if np.any(exact & ~np.isfinite(lo)):
            raise InputError("精确观测必须是有限值")
        self.kinds = kinds
        self.lo = lo
        self.hi = hi
        for arr in (self.kinds, self.lo, self.hi):
            arr.setflags(write=False)

    @classmethod
    def from_data(cls, data: Sequence[Datum]) -> "ObservationSet":
        kinds = np.array([d.kind for d in data], dtype=int)
        lo = np.array([d.lo for d in data], dtype=float)
        hi = np.array([d.hi for d in data], dtype=float)
        return cls(kinds, lo, hi)

    @classmethod
    def from_exact(cls, values: Sequence[float]) -> "ObservationSet":
        """连续变量；NaN 视为缺失"""
        values = np.asarray(values, dtype=float)
        kinds = np.where(np.isnan(values), MISSING, EXACT)
        return cls(kinds, values, values)

    @classmethod
    def from_survival(cls, time: Sequence[float], event: Sequence[float]) -> "ObservationSet":
        """生存数据：event=1 为精确事件时间，event=0 为右删失；任一为 NaN 视为缺失"""
        time = np.asarray(time, dtype=float)
        event = np.asarray(event, dtype=float)
        missing = np.isnan(time) | np.isnan(event)
        if np.any(~missing & ~np.isin(event, (0.0, 1.0))):
            raise InputError("事件指示必须为 0 或 1")
        kinds = np.where(missing, MISSING, np.where(event == 1.0, EXACT, RIGHT))
        hi = np.where(kinds == RIGHT, np.inf, time)
        return cls(kinds, time, hi)

    @classmethod
    def from_interval(cls, lower: Sequence[float], upper: Sequence[float]) -> "ObservationSet":
        """区间删失：下界缺失为左删失，上界缺失为右删失，两者相等为精确值，两者都缺失视为缺失"""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        lo_nan = np.isnan(lower)
        hi_nan = np.isnan(upper)
        kinds = np.select(
            [lo_nan & hi_nan, lo_nan, hi_nan, lower == upper],
            [MISSING, LEFT, RIGHT, EXACT],
            default=INTERVAL,
        )
        lo = np.where(lo_nan, -np.inf, lower)
        hi = np.where(hi_nan, np.inf, upper)
        return cls(kinds, lo, hi)

    @classmethod
    def from_categories(cls, categories: Sequence[float]) -> "ObservationSet":
        """有序类别（1..K）；NaN 视为缺失"""
        categories = np.asarray(categories, dtype=float)
        kinds = np.where(np.isnan(categories), MISSING, CATEGORY)
        return cls(kinds, categories, categories)

    def __len__(self):
        return self.kinds.size

    def __getitem__(self, index) -> "ObservationSet":
        return ObservationSet(self.kinds[index], self.lo[index], self.hi[index])

    def datum(self, i: int) -> Datum:
        return Datum(int(self.kinds[i]), float(self.lo[i]), float(self.hi[i]))

    @property
    def missing(self) -> np.ndarray:
        return self.kinds == MISSING

    @property
    def exact(self) -> np.ndarray:
        return self.kinds == EXACT

    @property
    def n_observed(self) -> int:
        return int(np.sum(~self.missing))

    @property
    def all_exact(self) -> bool:
        observed = ~self.missing
        return bool(np.all(self.kinds[observed] == EXACT))

    @property
    def is_categorical(self) -> bool:
        observed = ~self.missing
        return bool(np.any(self.kinds[observed] == CATEGORY))

    def finite_values(self) -> np.ndarray:
        """全部有限的取值与删失边界，用于确定 Bernstein 支撑集"""
        observed = ~self.missing
        values = np.concatenate([self.lo[observed], self.hi[observed]])
        return values[np.isfinite(values)]

    def censoring_fraction(self) -> float:
        observed = ~self.missing
        if not np.any(observed):
            return 0.0
        return float(np.mean(self.kinds[observed] != EXACT))


class PreparedColumn:
    """
    一个变量在给定变换结构下预先计算的设计矩阵

    系数变化时只需做矩阵乘法，拟合过程中反复求值时使用
    """

    def __init__(self, layout: BasisLayout, obs: ObservationSet, clamp: bool = False):
        self.layout = layout
        self.obs = obs
        self.n = len(obs)
        kinds = obs.kinds
        self.exact_idx = np.flatnonzero(kinds == EXACT)
        self.category_idx = np.flatnonzero(kinds == CATEGORY)
        self.missing_idx = np.flatnonzero(kinds == MISSING)
        censored = np.isin(kinds, (RIGHT, LEFT, INTERVAL))

        if layout.is_discrete:
            if self.exact_idx.size or np.any(censored):
                raise InputError("阶梯变换只能用于有序类别数据")
            k = obs.lo[self.category_idx]
            if np.any(k != np.round(k)) or np.any(k < 1) or np.any(k > layout.n_levels):
                raise InputError(f"类别编号必须是 1..{layout.n_levels} 之间的整数")
            self.category_k = k.astype(int)
        else:
            if self.category_idx.size:
                raise InputError("类别数据需要阶梯变换")
            self.X_exact = layout.design_matrix(obs.lo[self.exact_idx], clamp=clamp)
            self.D_exact = layout.deriv_design_matrix(obs.lo[self.exact_idx], clamp=clamp)
            lo_mask = censored & np.isfinite(obs.lo)
            hi_mask = censored & np.isfinite(obs.hi)
            self.lo_idx = np.flatnonzero(lo_mask)
            self.hi_idx = np.flatnonzero(hi_mask)
            self.X_lo = layout.design_matrix(obs.lo[self.lo_idx], clamp=clamp)
            self.X_hi = layout.design_matrix(obs.hi[self.hi_idx], clamp=clamp)
            self.censored_idx = np.flatnonzero(censored)

    def h_bounds(self, coefficients: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        返回每个观测在 h 尺度上的 (下界, 上界, h′)

        精确值的上下界相等；非精确观测的 h′ 为 NaN；缺失观测全部为 NaN
        """
        h_lo = np.full(self.n, np.nan)
        h_hi = np.full(self.n, np.nan)
        hprime = np.full(self.n, np.nan)
        if self.layout.is_discrete:
            padded = np.concatenate([[-np.inf], coefficients, [np.inf]])
            h_lo[self.category_idx] = padded[self.category_k - 1]
            h_hi[self.category_idx] = padded[self.category_k]
            return h_lo, h_hi, hprime
        h_exact = self.X_exact @ coefficients
        h_lo[self.exact_idx] = h_exact
        h_hi[self.exact_idx] = h_exact
        hprime[self.exact_idx] = self.D_exact @ coefficients
        h_lo[self.censored_idx] = -np.inf
        h_hi[self.censored_idx] = np.inf
        h_lo[self.lo_idx] = self.X_lo @ coefficients
        h_hi[self.hi_idx] = self.X_hi @ coefficients
        return h_lo, h_hi, hprime


@dataclass(frozen=True)
class MarginalSpec:
    """边际模型的设定（不含系数）；支撑集在拟合时由数据确定"""

    name: str
    role: str = "outcome"
    basis: str = "linear"
    order: int = 6
    n_levels: Optional[int] = None
    link: str = "probit"
    positivity: str = "softplus"
    support: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.role not in ("outcome", "covariate"):
            raise InputError(f"变量角色必须是 outcome 或 covariate，当前为 {self.role}")
        if self.basis not in BasisLayout.SUPPORTED_KINDS:
            raise InputError(f"不支持的变换类型: {self.basis}")
        if self.link not in LinkFunction.SUPPORTED_LINKS:
            raise InputError(f"不支持的连接函数: {self.link}")

    def layout_for(self, obs: ObservationSet) -> BasisLayout:
        if self.basis == "bernstein" and self.support is not None:
            return BasisLayout("bernstein", order=self.order, support=self.support)
        return BasisLayout.from_values(self.basis, obs.finite_values(), order=self.order,
                                       n_levels=self.n_levels)


@dataclass(frozen=True, eq=False)
class MarginalModel:
    """
    边际变换模型：变换 h、连接函数 G 以及每个非对照组的平移 τ

    协变量模型的 tau 为空（随机化下协变量与处理无关）
    """

    basis: TransformationBasis
    link: LinkFunction
    tau: np.ndarray = field(default_factory=lambda: np.zeros(0))
    role: str = "outcome"
    name: str = ""

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float).reshape(-1)
        if self.role == "covariate" and tau.size:
            raise InputError("协变量模型不能有处理平移 τ")
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)

    @property
    def n_arms(self) -> int:
        return self.tau.size + 1

    def shift(self, arm) -> np.ndarray:
        """τ_arm，对照组为 0；协变量恒为 0"""
        arm = np.asarray(arm, dtype=int)
        if self.role == "covariate":
            return np.zeros(arm.shape)
        if np.any(arm < 0) or np.any(arm >= self.n_arms):
            raise InputError(f"处理组编号必须在 0..{self.n_arms - 1} 之间")
        return np.concatenate([[0.0], self.tau])[arm]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "role": self.role,
            "link": self.link.kind,
            "basis": self.basis.to_dict(),
            "tau": self.tau.tolist(),
        }


class LatentInterval(NamedTuple):
    """潜变量尺度上的区间；精确观测附带对数 Jacobian"""

    lo: float
    hi: float
    log_jacobian: float
    clamped: bool


def _h_values(model: MarginalModel, y, clamp: bool = True):
    if model.basis.kind == "step":
        return model.basis.category_bounds(y)[1]
    return model.basis.eval(np.atleast_1d(np.asarray(y, dtype=float)), clamp=clamp)


def marginal_cdf(model: MarginalModel, y, arm: int):
    """
    边际分布函数 G(h(y) − τ_arm)

    Args:
        model: 边际模型
        y: 取值或类别编号
        arm: 处理组编号（0 为对照组）

    Returns:
        概率，标量输入返回 float
    """
    scalar = np.ndim(y) == 0
    u = _h_values(model, y) - model.shift(arm)
    p = model.link.cdf(u)
    return float(p[0]) if scalar else p


def to_latent(model: MarginalModel, y, arm: int):
    """
    潜变量映射 h_J(y|w) = Φ⁻¹(G(h(y) − τ_arm))

    probit 连接时直接返回 h(y) − τ_arm；分布函数为 0 或 1 时截断到 ±8 并记录警告
    """
    scalar = np.ndim(y) == 0
    u = _h_values(model, y) - model.shift(arm)
    z, clamped = model.link.to_latent(u, clamp=LATENT_CLAMP)
    if np.any(clamped):
        app_logger.warning(f"{model.name or '变量'}: {int(np.sum(clamped))} 个潜变量值截断到 ±{LATENT_CLAMP}")
    return float(z[0]) if scalar else z


def latent_interval(model: MarginalModel, datum: Datum, arm: int) -> LatentInterval:
    """
    把一个观测映射为潜变量尺度上的区间

    Raises:
        InputError: 观测缺失
    """
    if datum.is_missing:
        raise InputError("缺失观测没有潜变量区间")
    tau = float(model.shift(arm))
    link = model.link
    if datum.kind == EXACT:
        h = model.basis.eval(datum.lo, clamp=True)
        hprime = model.basis.eval_deriv(datum.lo, clamp=True)
        u = h - tau
        z, clamped = link.to_latent(np.array([u]), clamp=LATENT_CLAMP)
        z = float(z[0])
        log_jac = float(link.logpdf(u) + np.log(hprime) - (-0.5 * z * z - 0.5 * np.log(2 * np.pi)))
        return LatentInterval(z, z, log_jac, bool(clamped[0]))
    if datum.kind == CATEGORY:
        h_lo, h_hi = model.basis.category_bounds(int(datum.lo))
        h_lo, h_hi = float(h_lo[0]), float(h_hi[0])
    else:
        h_lo = model.basis.eval(datum.lo, clamp=True) if np.isfinite(datum.lo) else -np.inf
        h_hi = model.basis.eval(datum.hi, clamp=True) if np.isfinite(datum.hi) else np.inf
    z, clamped = link.to_latent(np.array([h_lo - tau, h_hi - tau]), clamp=LATENT_CLAMP)
    return LatentInterval(float(z[0]), float(z[1]), 0.0, bool(np.any(clamped)))


def column_loglik(link: LinkFunction, h_lo: np.ndarray, h_hi: np.ndarray,
                  hprime: np.ndarray, shift: np.ndarray, kinds: np.ndarray) -> np.ndarray:
    """
    逐观测的边际对数似然贡献

    精确值贡献 log g(h(y) − τ) + log h′(y)，删失与类别贡献 log[G(上界) − G(下界)]，缺失为 0
    """
    out = np.zeros(h_lo.shape)
    exact = kinds == EXACT
    other = ~exact & (kinds != MISSING)
    if np.any(exact):
        with np.errstate(divide="ignore", invalid="ignore"):
            out[exact] = link.logpdf(h_lo[exact] - shift[exact]) + np.log(hprime[exact])
    if np.any(other):
        out[other] = link.log_prob_interval(h_lo[other] - shift[other], h_hi[other] - shift[other])
    return out


def _as_observations(data) -> Tuple[ObservationSet, np.ndarray]:
    """接受 [(Datum, arm), ...] 或 (ObservationSet, arms)"""
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], ObservationSet):
        obs, arms = data
        return obs, np.asarray(arms, dtype=int)
    pairs = list(data)
    obs = ObservationSet.from_data([p[0] for p in pairs])
    arms = np.array([p[1] for p in pairs], dtype=int)
    return obs, arms


def marginal_loglik(model: MarginalModel, data) -> float:
    """
    边际对数似然

    Args:
        model: 边际模型
        data: [(Datum, arm), ...] 或 (ObservationSet, arms)

    Returns:
        float: 对数似然；累加结果非有限时返回 -inf。Bernstein 支撑外的取值截断到边界并记录警告，
            与 marginal_cdf / to_latent 一致

    Raises:
        InputError: 全部观测缺失
    """
    obs, arms = _as_observations(data)
    if obs.n_observed == 0:
        raise InputError("全部观测缺失，无法计算似然")
    prepared = PreparedColumn(model.basis.layout, obs, clamp=True)
    h_lo, h_hi, hprime = prepared.h_bounds(model.basis.coefficients)
    contributions = column_loglik(model.link, h_lo, h_hi, hprime, model.shift(arms), obs.kinds)
    total = float(np.sum(contributions))
    return total if np.isfinite(total) else -np.inf


def auc_from_tau(tau: float) -> float:
    """probit 模型下的 AUC = Φ(τ/√2)：对照组个体结果小于处理组个体的概率"""
    return float(special.ndtr(tau / np.sqrt(2.0)))


@dataclass(frozen=True, eq=False)
class MarginalFit:
    """边际模型拟合结果"""

    spec: MarginalSpec
    model: MarginalModel
    raw: np.ndarray
    covariance: np.ndarray
    loglik: float
    convergence: ConvergenceInfo
    n_obs: int

    @property
    def n_basis(self) -> int:
        return self.model.basis.layout.n_params

    @property
    def tau(self) -> np.ndarray:
        return self.model.tau

    @property
    def tau_covariance(self) -> np.ndarray:
        k = self.n_basis
        return self.covariance[k:, k:]

    @property
    def tau_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.tau_covariance))


def starting_values(layout: BasisLayout, link: LinkFunction, obs: ObservationSet) -> np.ndarray:
    """
    由经验分布函数构造初始系数（约束尺度）

    连续变量用 G⁻¹(经验分布) 对设计矩阵回归；类别变量用累积比例的 G⁻¹
    """
    observed = ~obs.missing
    kinds = obs.kinds[observed]
    n = int(observed.sum())
    if layout.is_discrete:
        k = obs.lo[observed].astype(int)
        cum = np.array([np.mean(k <= level) for level in range(1, layout.n_levels)])
        cum = np.clip(cum, 0.5 / n, 1.0 - 0.5 / n)
        coef = link.quantile(cum)
        return _strictly_increasing(coef)

    lo, hi = obs.lo[observed], obs.hi[observed]
    representative = np.where(kinds == EXACT, lo,
                              np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi),
                                       np.where(np.isfinite(lo), lo, hi)))
    ranks = np.argsort(np.argsort(representative, kind="stable"), kind="stable") + 1
    targets = link.quantile((ranks - 0.5) / n)

    if layout.kind == "bernstein":
        a, b = layout.support
        grid = a + (b - a) * np.arange(layout.order + 1) / layout.order
        ecdf = np.searchsorted(np.sort(representative), grid, side="right") / n
        ecdf = np.clip(ecdf, 1.0 / (n + 1), n / (n + 1.0))
        return _strictly_increasing(link.quantile(ecdf))

    t = np.log(representative) if layout.kind == "log_linear" else representative
    spread = np.std(t)
    if spread <= 0 or not np.isfinite(spread):
        raise InputError("观测值没有变异，无法拟合连续变换")
    slope = np.cov(t, targets)[0, 1] / np.var(t, ddof=1)
    if not slope > 0:
        slope = 1.0 / spread
    intercept = np.mean(targets) - slope * np.mean(t)
    return np.array([intercept, slope])


def _strictly_increasing(coef: np.ndarray, gap: float = 1e-2) -> np.ndarray:
    coef = np.array(coef, dtype=float)
    for i in range(1, coef.size):
        if coef[i] < coef[i - 1] + gap:
            coef[i] = coef[i - 1] + gap
    return coef


class MarginalEvaluator:
    """
    在无约束参数上求值边际对数似然，供拟合与联合模型第一阶段使用

    参数向量为 [变换的无约束参数, τ_1..τ_{A-1}]（协变量没有 τ）
    """

    def __init__(self, spec: MarginalSpec, layout: BasisLayout, obs: ObservationSet,
                 arms: np.ndarray, n_arms: int):
        self.spec = spec
        self.layout = layout
        self.link = LinkFunction(spec.link)
        self.obs = obs
        self.arms = np.asarray(arms, dtype=int)
        self.n_arms = n_arms if spec.role == "outcome" else 1
        self.prepared = PreparedColumn(layout, obs)
        self.n_tau = self.n_arms - 1
        self.n_params = layout.n_params + self.n_tau

    def split(self, raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        k = self.layout.n_params
        return self.layout.constrain(raw[:k], self.spec.positivity), np.asarray(raw[k:], dtype=float)

    def shifts(self, tau: np.ndarray) -> np.ndarray:
        if self.spec.role == "covariate":
            return np.zeros(self.arms.shape)
        return np.concatenate([[0.0], tau])[self.arms]

    def loglik(self, raw: np.ndarray) -> float:
        coef, tau = self.split(raw)
        h_lo, h_hi, hprime = self.prepared.h_bounds(coef)
        contributions = column_loglik(self.link, h_lo, h_hi, hprime, self.shifts(tau), self.obs.kinds)
        total = float(np.sum(contributions))
        return total if np.isfinite(total) else -np.inf

    @property
    def has_analytic_gradient(self) -> bool:
        return self.layout.kind in ("linear", "log_linear") and self.obs.all_exact

    def gradient(self, raw: np.ndarray) -> np.ndarray:
        """线性和对数线性变换在全部为精确观测时的解析梯度"""
        coef, tau = self.split(raw)
        idx = self.prepared.exact_idx
        t = self.prepared.X_exact[:, 1]
        u = coef[0] + coef[1] * t - self.shifts(tau)[idx]
        s = self.link.dlogpdf(u)
        grad = np.zeros(self.n_params)
        grad[0] = np.sum(s)
        d_slope = np.sum(s * t) + idx.size / coef[1]
        if self.spec.positivity == "softplus":
            grad[1] = d_slope * special.expit(raw[1])
        else:
            grad[1] = d_slope * coef[1]
        arms = self.arms[idx]
        for a in range(1, self.n_arms):
            grad[1 + a] = -np.sum(s[arms == a])
        return grad

    def initial(self) -> np.ndarray:
        coef = starting_values(self.layout, self.link, self.obs)
        return np.concatenate([self.layout.unconstrain(coef, self.spec.positivity), np.zeros(self.n_tau)])

    def model(self, raw: np.ndarray) -> MarginalModel:
        coef, tau = self.split(raw)
        return MarginalModel(basis=self.layout.build(coef), link=self.link,
                             tau=tau if self.spec.role == "outcome" else np.zeros(0),
                             role=self.spec.role, name=self.spec.name)


def check_identifiable(spec: MarginalSpec, obs: ObservationSet, arms: np.ndarray, n_arms: int):
    """拟合前的可识别性检查"""
    observed = ~obs.missing
    if not np.any(observed):
        raise InputError(f"{spec.name}: 全部观测缺失")
    if spec.role == "outcome":
        present = np.unique(np.asarray(arms)[observed])
        absent = sorted(set(range(n_arms)) - set(present.tolist()))
        if absent:
            raise InputError(f"{spec.name}: 处理组 {absent} 没有观测")
    if obs.is_categorical:
        if np.unique(obs.lo[observed]).size < 2:
            raise InputError(f"{spec.name}: 至少需要两个不同类别")
    elif np.unique(obs.finite_values()).size < 2:
        raise InputError(f"{spec.name}: 至少需要两个不同取值")


def fit_marginal(spec: MarginalSpec, obs: ObservationSet, arms: Optional[np.ndarray] = None,
                 n_arms: int = 2, init: Optional[np.ndarray] = None,
                 gtol: float = 1e-5, ftol: float = 1e-9, max_iter: int = 1000) -> MarginalFit:
    """
    边际模型的极大似然拟合

    Args:
        spec: 模型设定
        obs: 观测
        arms: 处理组编号（0 为对照组）；协变量可为 None
        n_arms: 处理组数
        init: 无约束参数初始值
        gtol: 缩放梯度容差
        ftol: 相对对数似然变化容差
        max_iter: 最大迭代次数

    Returns:
        MarginalFit: 拟合结果

    Raises:
        InputError: 数据不可识别
        ConvergenceError: 未收敛（携带最佳迭代点）
        IdentifiabilityError: 观测信息矩阵奇异
    """
    if arms is None:
        arms = np.zeros(len(obs), dtype=int)
    arms = np.asarray(arms, dtype=int)
    if arms.shape != (len(obs),):
        raise InputError("处理组编号与观测数不一致")
    check_identifiable(spec, obs, arms, n_arms)

    layout = spec.layout_for(obs)
    evaluator = MarginalEvaluator(spec, layout, obs, arms, n_arms)
    x0 = evaluator.initial() if init is None else np.asarray(init, dtype=float)
    if x0.shape != (evaluator.n_params,):
        raise InputError(f"{spec.name}: 初始值长度应为 {evaluator.n_params}")

    gradient = evaluator.gradient if evaluator.has_analytic_gradient else None
    result = maximize(evaluator.loglik, x0, n_obs=obs.n_observed, gradient=gradient,
                      gtol=gtol, ftol=ftol, max_iter=max_iter, label=f"边际模型 {spec.name}")
    if not result.convergence.converged:
        raise ConvergenceError(
            f"{spec.name}: 边际模型未收敛",
            best_iterate=result.x, best_loglik=result.loglik,
            diagnostics=result.convergence.to_dict(),
        )

    information = observed_information(evaluator.loglik, result.x)
    covariance = covariance_from_information(information)
    model = evaluator.model(result.x)
    app_logger.debug(f"边际模型 {spec.name} 拟合完成: 对数似然 {result.loglik:.4f}, τ = {model.tau.tolist()}")
    return MarginalFit(spec=spec, model=model, raw=result.x, covariance=covariance,
                       loglik=result.loglik, convergence=result.convergence,
                       n_obs=obs.n_observed)
