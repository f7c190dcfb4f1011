"""
高斯 copula 依赖结构模块
Λ(w) = Λ(λ) + wΓ(γ) 的构造、单位对角标准化 Ω(w)、相关矩阵 Σ(w) 以及预后/预测强度等解释量
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from utils.exception_handler import InputError


def n_lambda(n_vars: int) -> int:
    """严格下三角元素个数 J(J−1)/2"""
    return n_vars * (n_vars - 1) // 2


def n_vars_from_lambda(count: int) -> int:
    n_vars = int(round((1 + np.sqrt(1 + 8 * count)) / 2))
    if n_lambda(n_vars) != count:
        raise InputError(f"λ 的长度 {count} 不是 J(J−1)/2 的形式")
    return n_vars


@dataclass(frozen=True, eq=False)
class CopulaParams:
    """
    copula 参数

    lambdas 按行优先存储严格下三角（λ₂₁, λ₃₁, λ₃₂, …）；gammas 的第 a 行是第 a+1 个处理组的最后一行增量
    """

    lambdas: np.ndarray
    gammas: np.ndarray

    def __post_init__(self):
        lambdas = np.array(self.lambdas, dtype=float).reshape(-1)
        n_vars = n_vars_from_lambda(lambdas.size)
        gammas = np.array(self.gammas, dtype=float)
        if gammas.ndim < 2:
            gammas = gammas.reshape(-1, n_vars - 1) if n_vars > 1 else gammas.reshape(0, 0)
        if gammas.shape[1] != n_vars - 1:
            raise InputError(f"γ 的列数应为 {n_vars - 1}，实际为 {gammas.shape[1]}")
        if not (np.all(np.isfinite(lambdas)) and np.all(np.isfinite(gammas))):
            raise InputError("copula 参数必须是有限值")
        lambdas.setflags(write=False)
        gammas.setflags(write=False)
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "gammas", gammas)

    @classmethod
    def independence(cls, n_vars: int, n_arms: int = 2) -> "CopulaParams":
        return cls(np.zeros(n_lambda(n_vars)), np.zeros((n_arms - 1, n_vars - 1)))

    @property
    def n_vars(self) -> int:
        return n_vars_from_lambda(self.lambdas.size)

    @property
    def n_arms(self) -> int:
        return self.gammas.shape[0] + 1

    def prognostic(self) -> np.ndarray:
        """最后一行的 λ_{Jj}（对照组）"""
        j = self.n_vars
        start = n_lambda(j - 1)
        return self.lambdas[start:start + j - 1]


@dataclass(frozen=True, eq=False)
class OmegaFactor:
    """逆 Cholesky 因子 Ω（下三角，对角为 σ⁻¹）"""

    omega: np.ndarray

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.omega)

    @property
    def n_vars(self) -> int:
        return self.omega.shape[0]


def build_lambda(params: CopulaParams, arm: int) -> np.ndarray:
    """
    构造单位下三角矩阵 Λ(w)

    Args:
        params: copula 参数
        arm: 处理组编号，0 为对照组

    Returns:
        np.ndarray: J×J 单位下三角矩阵
    """
    j = params.n_vars
    if arm < 0 or arm >= params.n_arms:
        raise InputError(f"处理组编号必须在 0..{params.n_arms - 1} 之间")
    lam = np.eye(j)
    # np.tril_indices 按行优先排列，与 lambdas 的存储顺序一致
    lam[np.tril_indices(j, -1)] = params.lambdas
    if arm > 0:
        lam[j - 1, :j - 1] += params.gammas[arm - 1]
    return lam


def standardize(lambda_matrix: np.ndarray) -> OmegaFactor:
    """
    Ω = Λ · diag(Λ⁻¹Λ⁻ᵀ)^{1/2}，使 Σ = Ω⁻¹Ω⁻ᵀ 的对角线为 1

    只使用三角求解（对单位向量前代），不做一般矩阵求逆
    """
    lam = np.asarray(lambda_matrix, dtype=float)
    j = lam.shape[0]
    inverse = linalg.solve_triangular(lam, np.eye(j), lower=True, unit_diagonal=True)
    scale = np.sqrt(np.sum(inverse * inverse, axis=1))
    return OmegaFactor(omega=lam * scale[None, :])


def correlation(factor: OmegaFactor) -> np.ndarray:
    """Σ = Ω⁻¹Ω⁻ᵀ"""
    j = factor.n_vars
    inverse = linalg.solve_triangular(factor.omega, np.eye(j), lower=True)
    sigma = inverse @ inverse.T
    return 0.5 * (sigma + sigma.T)


def omega_for_arm(params: CopulaParams, arm: int) -> OmegaFactor:
    return standardize(build_lambda(params, arm))


@dataclass(frozen=True, eq=False)
class StrengthTable:
    """预后强度、各处理组的预测强度及其排序（从 0 开始的协变量下标）"""

    prognostic: np.ndarray
    predictive: np.ndarray  # 形状 (处理组数 − 1, J − 1)
    prognostic_rank: np.ndarray
    predictive_rank: np.ndarray  # 每个处理组一行

    def to_dict(self, names: Optional[Sequence[str]] = None) -> Dict[str, object]:
        names = list(names) if names is not None else [f"X{i + 1}" for i in range(self.prognostic.size)]
        return {
            "prognostic": {names[i]: float(v) for i, v in enumerate(self.prognostic)},
            "prognostic_ranking": [names[i] for i in self.prognostic_rank],
            "predictive": [
                {names[i]: float(v) for i, v in enumerate(row)} for row in self.predictive
            ],
            "predictive_ranking": [[names[i] for i in row] for row in self.predictive_rank],
        }


def rank_descending(values: np.ndarray) -> np.ndarray:
    """按取值降序排序，相同取值按下标升序"""
    values = np.asarray(values, dtype=float)
    return np.lexsort((np.arange(values.size), -values))


def strengths(omega_control: OmegaFactor, omega_treated: Sequence[OmegaFactor]) -> StrengthTable:
    """
    预后强度 |ω_{Jj}^{(0)}| 与预测强度 |ω_{Jj}^{(w)} − ω_{Jj}^{(0)}|

    Args:
        omega_control: 对照组的 Ω
        omega_treated: 各非对照组的 Ω

    Returns:
        StrengthTable: 强度及排序
    """
    j = omega_control.n_vars
    base = omega_control.omega[j - 1, :j - 1]
    prognostic = np.abs(base)
    predictive = np.array([np.abs(f.omega[j - 1, :j - 1] - base) for f in omega_treated]).reshape(-1, j - 1)
    return StrengthTable(
        prognostic=prognostic,
        predictive=predictive,
        prognostic_rank=rank_descending(prognostic),
        predictive_rank=np.array([rank_descending(row) for row in predictive], dtype=int).reshape(-1, j - 1),
    )


def conditional_summary(factor: OmegaFactor) -> Tuple[np.ndarray, float, float]:
    """
    条件模型的解释量

    Returns:
        Tuple: β_j = −ω_{Jj}/ω_{JJ}，σ_J = 1/ω_{JJ}，R² = 1 − ω_{JJ}⁻²
    """
    omega = factor.omega
    j = factor.n_vars
    last = omega[j - 1, j - 1]
    betas = -omega[j - 1, :j - 1] / last
    sigma = 1.0 / last
    r_squared = 1.0 - sigma * sigma
    return betas, float(sigma), float(r_squared)


def correlation_from_copula(value: float) -> float:
    """两变量情形下 λ 对应的潜变量相关系数 −λ/√(1+λ²)"""
    return float(-value / np.sqrt(1.0 + value * value))


def copula_from_correlation(rho: float) -> float:
    """correlation_from_copula 的反函数，要求 |ρ| < 1"""
    if not -1.0 < rho < 1.0:
        raise InputError(f"相关系数必须在 (-1, 1) 内，当前为 {rho}")
    return float(-rho / np.sqrt(1.0 - rho * rho))
