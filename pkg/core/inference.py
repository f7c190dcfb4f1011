"""
推断模块
Wald 检验、多重比较校正，以及单协变量正态-正态设计下的闭式渐近标准误
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg, optimize, special, stats

from core.copula import correlation_from_copula
from utils.exception_handler import InputError
from utils.logger import app_logger


Z_975 = 1.959964
DEFAULT_MC_DRAWS = 100_000
DEFAULT_MC_SEED = 20240517
MULTIPLICITY_METHODS = ("maxt", "bonferroni")
OUT_OF_SCOPE = "out of theory scope"


@dataclass(frozen=True)
class TheoryPoint:
    """闭式标准误的参数点：效应 τ、预后参数 λ、预测参数 γ 与每组样本量"""

    tau: float
    lam: float = 0.0
    gamma: float = 0.0
    n_per_arm: int = 1

    def __post_init__(self):
        if self.n_per_arm < 1:
            raise InputError(f"每组样本量必须至少为 1，当前为 {self.n_per_arm}")
        if not all(np.isfinite([self.tau, self.lam, self.gamma])):
            raise InputError("τ、λ、γ 必须是有限值")


def se_lemma1(tau: float, n: int) -> float:
    """不调整协变量时 τ̂ 的渐近标准误 √((τ²/4 + 2)/N)"""
    return se_lemma4(TheoryPoint(tau, 0.0, 0.0, n))


def se_lemma2(tau: float, lam: float, n: int) -> float:
    """两组相关相同（γ = 0）时的标准误 √((τ²/4 + 2/(λ²+1))/N)"""
    point = TheoryPoint(tau, lam, 0.0, n)
    return float(np.sqrt((tau * tau / 4.0 + 2.0 / (lam * lam + 1.0)) / point.n_per_arm))


def se_lemma3(tau: float, gamma: float, n: int) -> float:
    """无预后效应（λ = 0）时的标准误"""
    return se_lemma4(TheoryPoint(tau, 0.0, gamma, n))


def _adjusted_term(lam: float, gamma: float) -> float:
    # 分母 λ² + (λ+γ)² + 2 ≥ 2
    return (gamma * gamma + 4.0) / (2.0 * lam * lam + 2.0 * lam * gamma + gamma * gamma + 2.0)


def se_lemma4(point: TheoryPoint) -> float:
    """
    同时调整协变量及其与处理交互后 τ̂ 的渐近标准误

    √((τ²/4 + (γ²+4)/(2λ²+2λγ+γ²+2))/N)
    """
    variance = point.tau ** 2 / 4.0 + _adjusted_term(point.lam, point.gamma)
    return float(np.sqrt(variance / point.n_per_arm))


def var_matrix_theory(point: TheoryPoint) -> np.ndarray:
    """
    (λ̂, γ̂, τ̂) 的渐近协方差矩阵，只适用于单个正态协变量、正态结局的设计

    Returns:
        np.ndarray: 3×3 对称矩阵，顺序为 (λ, γ, τ)
    """
    lam, gamma, tau = point.lam, point.gamma, point.tau
    matrix = np.array([
        [(lam * lam + 2.0) / 2.0, (gamma * lam - 2.0) / 2.0, -lam * tau / 4.0],
        [(gamma * lam - 2.0) / 2.0, (gamma * gamma + 4.0) / 2.0, -gamma * tau / 4.0],
        [-lam * tau / 4.0, -gamma * tau / 4.0, tau * tau / 4.0 + _adjusted_term(lam, gamma)],
    ])
    return matrix / point.n_per_arm


def efficiency_ratio(tau: float, lam: float, gamma: float) -> float:
    """(SE_adj / SE_unadj)²，即调整后所需样本量的相对比例"""
    unadjusted = tau * tau / 4.0 + 2.0
    return float((tau * tau / 4.0 + _adjusted_term(lam, gamma)) / unadjusted)


def _ratio_at_correlation(rho: float, tau: float, kind: str) -> float:
    value = -rho / np.sqrt(1.0 - rho * rho)
    if kind == "prognostic":
        return efficiency_ratio(tau, value, 0.0)
    return efficiency_ratio(tau, 0.0, value)


def solve_correlation_for_ratio(target: float, tau: float, kind: str = "prognostic") -> float:
    """
    求使效率比达到 target 的潜变量相关系数绝对值

    Args:
        target: 目标效率比，(0, 1]
        tau: 效应量
        kind: prognostic（γ = 0，对照组相关 ρ₀）或 predictive（λ = 0，处理组相关 ρ₁）

    Returns:
        float: |ρ|

    Raises:
        InputError: 目标比值在该类型下不可达
    """
    if kind not in ("prognostic", "predictive"):
        raise InputError(f"kind 必须是 prognostic 或 predictive，当前为 {kind}")
    if not 0.0 < target <= 1.0:
        raise InputError(f"目标效率比必须在 (0, 1] 内，当前为 {target}")
    if target == 1.0:
        return 0.0
    upper = 1.0 - 1e-12
    if _ratio_at_correlation(upper, tau, kind) > target:
        raise InputError(f"{kind} 情形下效率比无法降到 {target}")
    return float(optimize.brentq(lambda r: _ratio_at_correlation(r, tau, kind) - target, 0.0, upper, xtol=1e-12))


@dataclass(frozen=True)
class TestResult:
    """双侧 Wald 检验结果"""

    __test__ = False

    estimate: float
    se: float
    z: float
    p_raw: float
    p_adjusted: float
    ci_lo: float
    ci_hi: float

    def with_adjusted(self, p_adjusted: float) -> "TestResult":
        return TestResult(self.estimate, self.se, self.z, self.p_raw,
                          float(max(p_adjusted, self.p_raw)), self.ci_lo, self.ci_hi)

    def to_dict(self) -> Dict[str, float]:
        return {
            "estimate": self.estimate,
            "se": self.se,
            "z": self.z,
            "p_raw": self.p_raw,
            "p_adjusted": self.p_adjusted,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
        }


def _critical_value(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise InputError(f"置信水平必须在 (0, 1) 内，当前为 {level}")
    if abs(level - 0.95) < 1e-12:
        return Z_975
    return float(special.ndtri(0.5 + level / 2.0))


def wald_test(estimate: float, se: float, null_value: float = 0.0, level: float = 0.95) -> TestResult:
    """
    双侧 Wald 检验

    Args:
        estimate: 估计值
        se: 标准误，必须为正
        null_value: 原假设取值
        level: 置信区间水平

    Returns:
        TestResult: 检验结果，p_adjusted 初始等于 p_raw
    """
    if not (np.isfinite(se) and se > 0):
        raise InputError(f"标准误必须为正，当前为 {se}")
    z = (estimate - null_value) / se
    p = float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
    half = _critical_value(level) * se
    return TestResult(float(estimate), float(se), float(z), p, p, float(estimate - half), float(estimate + half))


def _correlation_factor(covariance: np.ndarray, max_tries: int = 5) -> np.ndarray:
    """检验统计量相关矩阵的 Cholesky 因子；半正定时逐步加小的对角扰动"""
    covariance = np.asarray(covariance, dtype=float)
    covariance = 0.5 * (covariance + covariance.T)
    if not np.all(np.isfinite(covariance)):
        raise InputError("协方差矩阵含有非有限值")
    scale = np.sqrt(np.diag(covariance))
    if np.any(scale <= 0):
        raise InputError("协方差矩阵的对角元必须为正")
    corr = covariance / np.outer(scale, scale)
    eigenvalues = np.linalg.eigvalsh(corr)
    if eigenvalues[0] < -1e-8:
        raise InputError(f"协方差矩阵不是半正定的（最小特征值 {eigenvalues[0]:.3e}）")
    try:
        return linalg.cholesky(corr, lower=True)
    except linalg.LinAlgError:
        jitter = 1e-10
        for _ in range(max_tries):
            try:
                factor = linalg.cholesky(corr + np.eye(corr.shape[0]) * jitter, lower=True)
                app_logger.warning(f"相关矩阵接近奇异，加入对角扰动 {jitter:.1e}")
                return factor
            except linalg.LinAlgError:
                jitter *= 10
    raise InputError("协方差矩阵即使加入扰动也无法分解")


def adjust_multiplicity(z_values: Sequence[float], method: str = "maxt",
                        covariance: Optional[np.ndarray] = None,
                        draws: int = DEFAULT_MC_DRAWS, seed: int = DEFAULT_MC_SEED) -> np.ndarray:
    """
    多重比较校正后的 p 值

    Args:
        z_values: 各检验的 z 统计量
        method: bonferroni，或 maxt（在检验统计量的联合正态分布下模拟 max|T|）
        covariance: 被检验估计量的协方差（maxt 必需）
        draws: 蒙特卡罗抽样次数，至少 10⁵
        seed: 随机种子

    Returns:
        np.ndarray: 校正后 p 值，逐元素不小于原始 p 值
    """
    z = np.abs(np.asarray(z_values, dtype=float).reshape(-1))
    raw = np.minimum(1.0, 2.0 * stats.norm.sf(z))
    m = z.size
    if m == 0:
        return raw
    if method == "bonferroni":
        return np.minimum(1.0, m * raw)
    if method != "maxt":
        raise InputError(f"不支持的多重比较方法: {method}，可选: {', '.join(MULTIPLICITY_METHODS)}")
    if covariance is None:
        raise InputError("maxt 校正需要被检验估计量的协方差矩阵")
    if np.shape(covariance) != (m, m):
        raise InputError(f"协方差矩阵形状应为 ({m}, {m})")
    if m == 1:
        return raw
    if draws < DEFAULT_MC_DRAWS:
        raise InputError(f"maxt 校正至少需要 {DEFAULT_MC_DRAWS} 次抽样")
    factor = _correlation_factor(covariance)
    rng = np.random.default_rng(seed)
    max_abs = np.max(np.abs(rng.standard_normal((draws, m)) @ factor.T), axis=1)
    max_abs.sort()
    exceed = draws - np.searchsorted(max_abs, z, side="left")
    adjusted = exceed / draws
    return np.maximum(adjusted, raw)


def family_tests(estimates: Sequence[float], covariance: np.ndarray, names: Sequence[str],
                method: Optional[str] = None, null_value: float = 0.0, level: float = 0.95,
                draws: int = DEFAULT_MC_DRAWS, seed: int = DEFAULT_MC_SEED) -> Dict[str, TestResult]:
    """
    一族参数的 Wald 检验，并在族内做多重比较校正

    method 为 None 时，协方差可用则用 maxt，否则用 bonferroni
    """
    estimates = np.asarray(estimates, dtype=float).reshape(-1)
    covariance = np.asarray(covariance, dtype=float)
    if estimates.size == 0:
        return {}
    se = np.sqrt(np.diag(covariance))
    results = [wald_test(e, s, null_value, level) for e, s in zip(estimates, se)]
    if method is None:
        method = "maxt" if np.all(np.isfinite(covariance)) else "bonferroni"
    adjusted = adjust_multiplicity([r.z for r in results], method, covariance, draws, seed)
    return {name: r.with_adjusted(p) for name, r, p in zip(names, results, adjusted)}


def theory_scope(n_covariates: int, links: Sequence[str], bases: Sequence[str],
                 n_arms: int = 2) -> Optional[str]:
    """闭式结果只适用于两组、单个正态协变量、正态结局；其他设定返回标注并记录警告"""
    in_scope = n_arms == 2 and n_covariates == 1 and all(link == "probit" for link in links) \
        and all(kind == "linear" for kind in bases)
    if in_scope:
        return None
    app_logger.warning("当前模型设定超出闭式标准误的适用范围，理论值仅供参考")
    return OUT_OF_SCOPE


def latent_correlations(lam: float, gamma: float) -> List[float]:
    """两变量模型中对照组与处理组的潜变量相关 ρ_w = −(λ+wγ)/√(1+(λ+wγ)²)"""
    return [correlation_from_copula(lam), correlation_from_copula(lam + gamma)]
