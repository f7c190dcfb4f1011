"""
变换函数模块
提供单调变换 h（线性、对数线性、Bernstein 多项式、有序阶梯）的求值、导数、反函数与约束参数化
"""

from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import binom

from utils.exception_handler import (
    BasisDomainError,
    BasisRangeError,
    InputError,
    UnsupportedOperationError,
)
from utils.logger import app_logger


ArrayLike = Union[float, int, Sequence[float], np.ndarray]


def softplus(x: np.ndarray) -> np.ndarray:
    """softplus(x) = log(1 + e^x)，数值稳定版本"""
    return np.logaddexp(0.0, x)


def softplus_inverse(v: np.ndarray) -> np.ndarray:
    """softplus 的反函数，要求 v > 0"""
    v = np.asarray(v, dtype=float)
    return v + np.log(-np.expm1(-v))


# 正值变换：名称 -> (正向, 反向)
POSITIVITY_TRANSFORMS = {
    "softplus": (softplus, softplus_inverse),
    "exp": (np.exp, np.log),
}


class BasisLayout:
    """变换函数的结构（类型、阶数、支撑集、类别数），不含系数"""

    # 支持的变换类型
    SUPPORTED_KINDS = {
        "linear": "线性 h(y) = ϑ₁ + ϑ₂y",
        "log_linear": "对数线性 h(y) = ϑ₁ + ϑ₂log(y)",
        "bernstein": "Bernstein 多项式",
        "step": "有序分类阶梯函数",
    }

    # Bernstein 支撑集在观测范围两侧各扩展的比例
    SUPPORT_EXPANSION = 0.05

    def __init__(self, kind: str, order: int = 6,
                 support: Optional[Tuple[float, float]] = None,
                 n_levels: Optional[int] = None):
        """
        初始化变换结构

        Args:
            kind (str): 变换类型，见 SUPPORTED_KINDS
            order (int): Bernstein 多项式阶数 M
            support (Optional[Tuple[float, float]]): Bernstein 支撑区间 [a, b]
            n_levels (Optional[int]): 阶梯函数的类别数 K

        Raises:
            InputError: 参数无效
        """
        if kind not in self.SUPPORTED_KINDS:
            raise InputError(f"不支持的变换类型: {kind}，可选: {', '.join(self.SUPPORTED_KINDS)}")
        self.kind = kind
        self.order = int(order)
        self.support = None
        self.n_levels = None

        if kind == "bernstein":
            if self.order < 1:
                raise InputError(f"Bernstein 阶数必须至少为 1，当前为 {order}")
            if support is None:
                raise InputError("Bernstein 变换需要指定支撑区间")
            lo, hi = float(support[0]), float(support[1])
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise InputError(f"Bernstein 支撑区间无效: [{lo}, {hi}]")
            self.support = (lo, hi)
        elif kind == "step":
            if n_levels is None or int(n_levels) < 2:
                raise InputError(f"阶梯变换的类别数必须至少为 2，当前为 {n_levels}")
            self.n_levels = int(n_levels)

    @classmethod
    def from_values(cls, kind: str, values: np.ndarray, order: int = 6,
                    n_levels: Optional[int] = None) -> "BasisLayout":
        """
        根据观测值构造变换结构；Bernstein 的支撑集取观测范围两侧各扩展 5%

        Args:
            kind (str): 变换类型
            values (np.ndarray): 该变量全部有限的观测值（含删失边界）
            order (int): Bernstein 阶数
            n_levels (Optional[int]): 类别数

        Returns:
            BasisLayout: 变换结构
        """
        support = None
        if kind == "bernstein":
            values = np.asarray(values, dtype=float)
            values = values[np.isfinite(values)]
            if values.size == 0:
                raise InputError("没有有限观测值，无法确定 Bernstein 支撑区间")
            lo, hi = float(values.min()), float(values.max())
            width = hi - lo
            if width <= 0:
                raise InputError("观测值全部相同，无法确定 Bernstein 支撑区间")
            support = (lo - cls.SUPPORT_EXPANSION * width, hi + cls.SUPPORT_EXPANSION * width)
        return cls(kind, order=order, support=support, n_levels=n_levels)

    @property
    def n_params(self) -> int:
        """系数个数"""
        if self.kind in ("linear", "log_linear"):
            return 2
        if self.kind == "bernstein":
            return self.order + 1
        return self.n_levels - 1

    @property
    def is_discrete(self) -> bool:
        return self.kind == "step"

    def _check_finite(self, y: np.ndarray):
        if not np.all(np.isfinite(y)):
            raise BasisDomainError("变换函数的输入必须是有限值")

    def _scaled(self, y: np.ndarray, clamp: bool) -> np.ndarray:
        """把 y 映射到 [0, 1]；超出支撑集时报错或截断"""
        lo, hi = self.support
        outside = (y < lo) | (y > hi)
        if np.any(outside):
            if not clamp:
                raise BasisDomainError(
                    f"取值超出 Bernstein 支撑区间 [{lo:.6g}, {hi:.6g}]: "
                    f"{np.asarray(y)[outside][:5].tolist()}"
                )
            app_logger.warning(f"{int(outside.sum())} 个取值超出 Bernstein 支撑区间，已截断到边界")
            y = np.clip(y, lo, hi)
        return (y - lo) / (hi - lo)

    def design_matrix(self, y: ArrayLike, clamp: bool = False) -> np.ndarray:
        """
        计算 h(y) = B(y)ϑ 中的设计矩阵 B(y)

        Args:
            y: 取值（一维）
            clamp (bool): Bernstein 超出支撑集时是否截断

        Returns:
            np.ndarray: 形状 (n, n_params)
        """
        if self.kind == "step":
            raise UnsupportedOperationError("阶梯变换没有设计矩阵，请使用类别边界")
        y = np.atleast_1d(np.asarray(y, dtype=float))
        self._check_finite(y)
        if self.kind == "linear":
            return np.column_stack([np.ones_like(y), y])
        if self.kind == "log_linear":
            if np.any(y <= 0):
                raise BasisDomainError("对数线性变换要求取值为正")
            return np.column_stack([np.ones_like(y), np.log(y)])
        x = self._scaled(y, clamp)
        return _bernstein_matrix(x, self.order)

    def deriv_design_matrix(self, y: ArrayLike, clamp: bool = False) -> np.ndarray:
        """
        计算 h′(y) = B′(y)ϑ 中的导数设计矩阵

        Raises:
            UnsupportedOperationError: 阶梯变换没有密度
        """
        if self.kind == "step":
            raise UnsupportedOperationError("阶梯变换不可导，离散变量没有密度")
        y = np.atleast_1d(np.asarray(y, dtype=float))
        self._check_finite(y)
        if self.kind == "linear":
            return np.column_stack([np.zeros_like(y), np.ones_like(y)])
        if self.kind == "log_linear":
            if np.any(y <= 0):
                raise BasisDomainError("对数线性变换要求取值为正")
            return np.column_stack([np.zeros_like(y), 1.0 / y])
        lo, hi = self.support
        x = self._scaled(y, clamp)
        m = self.order
        lower = _bernstein_matrix(x, m - 1)
        deriv = np.zeros((x.size, m + 1))
        deriv[:, 1:] += lower
        deriv[:, :-1] -= lower
        return deriv * (m / (hi - lo))

    def constrain(self, raw: ArrayLike, positivity: str = "softplus") -> np.ndarray:
        """
        把无约束参数映射为满足单调约束的系数

        Args:
            raw: 无约束参数
            positivity (str): 正值变换 softplus 或 exp

        Returns:
            np.ndarray: 系数
        """
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (self.n_params,):
            raise InputError(f"参数长度不匹配: 期望 {self.n_params}，实际 {raw.shape}")
        positive, _ = _positivity(positivity)
        if self.kind in ("linear", "log_linear"):
            return np.array([raw[0], positive(raw[1])])
        coef = np.empty_like(raw)
        coef[0] = raw[0]
        coef[1:] = raw[0] + np.cumsum(positive(raw[1:]))
        return coef

    def unconstrain(self, coefficients: ArrayLike, positivity: str = "softplus") -> np.ndarray:
        """constrain 的反函数"""
        coef = np.asarray(coefficients, dtype=float)
        if coef.shape != (self.n_params,):
            raise InputError(f"系数长度不匹配: 期望 {self.n_params}，实际 {coef.shape}")
        _, inverse = _positivity(positivity)
        if self.kind in ("linear", "log_linear"):
            if coef[1] <= 0:
                raise InputError("线性变换的斜率必须为正")
            return np.array([coef[0], inverse(coef[1])])
        increments = np.diff(coef)
        if np.any(increments <= 0):
            raise InputError("系数必须严格递增才能反解无约束参数")
        raw = np.empty_like(coef)
        raw[0] = coef[0]
        raw[1:] = inverse(increments)
        return raw

    def build(self, coefficients: ArrayLike) -> "TransformationBasis":
        """用给定系数构造变换函数"""
        return TransformationBasis(self, coefficients)

    def to_dict(self) -> Dict[str, Any]:
        data = {"kind": self.kind}
        if self.kind == "bernstein":
            data["order"] = self.order
            data["support"] = list(self.support)
        if self.kind == "step":
            data["n_levels"] = self.n_levels
        return data

    def __repr__(self):
        return f"BasisLayout({self.to_dict()})"


class TransformationBasis:
    """
    单调变换函数 h：结构 + 系数

    系数在构造时校验并设为只读，对象构造后不可变，可在线程间共享
    """

    def __init__(self, layout: BasisLayout, coefficients: ArrayLike):
        """
        Args:
            layout (BasisLayout): 变换结构
            coefficients: 系数向量

        Raises:
            InputError: 系数长度或单调性不满足要求
        """
        coef = np.array(coefficients, dtype=float)
        if coef.shape != (layout.n_params,):
            raise InputError(f"系数长度不匹配: 期望 {layout.n_params}，实际 {coef.shape}")
        if not np.all(np.isfinite(coef)):
            raise InputError("变换系数必须是有限值")
        if layout.kind in ("linear", "log_linear") and coef[1] <= 0:
            raise InputError(f"线性变换的斜率必须为正，当前为 {coef[1]}")
        if layout.kind == "bernstein" and np.any(np.diff(coef) < 0):
            raise InputError("Bernstein 系数必须单调不减")
        if layout.kind == "step" and np.any(np.diff(coef) <= 0):
            raise InputError("阶梯变换的分割点必须严格递增")
        coef.setflags(write=False)
        self.layout = layout
        self.coefficients = coef

    @property
    def kind(self) -> str:
        return self.layout.kind

    def eval(self, y: ArrayLike, clamp: bool = False):
        """
        计算 h(y)

        Args:
            y: 连续变量取值，或阶梯变换的类别编号（1..K）
            clamp (bool): Bernstein 超出支撑集时截断（预测时使用）

        Returns:
            h(y)，标量输入返回 float；最高类别返回 +inf
        """
        scalar = np.ndim(y) == 0
        if self.kind == "step":
            values = self.category_bounds(y)[1]
        else:
            values = self.layout.design_matrix(y, clamp=clamp) @ self.coefficients
        return float(values[0]) if scalar else values

    def eval_deriv(self, y: ArrayLike, clamp: bool = False):
        """计算 h′(y)；线性变换直接返回斜率"""
        scalar = np.ndim(y) == 0
        if self.kind == "linear":
            self.layout._check_finite(np.atleast_1d(np.asarray(y, dtype=float)))
            values = np.full(np.atleast_1d(y).shape, self.coefficients[1])
        else:
            values = self.layout.deriv_design_matrix(y, clamp=clamp) @ self.coefficients
        return float(values[0]) if scalar else values

    def category_bounds(self, k: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
        """
        有序类别 k 对应的 h 区间 (ϑ_{k-1}, ϑ_k]，两端以 ∓inf 补齐

        Args:
            k: 类别编号（1..K）

        Returns:
            Tuple[np.ndarray, np.ndarray]: 下界与上界
        """
        if self.kind != "step":
            raise UnsupportedOperationError("只有阶梯变换有类别边界")
        k_arr = np.atleast_1d(np.asarray(k))
        if not np.all(np.isfinite(k_arr.astype(float))):
            raise BasisDomainError("类别编号必须是有限值")
        k_int = k_arr.astype(int)
        if np.any(k_int != k_arr) or np.any(k_int < 1) or np.any(k_int > self.layout.n_levels):
            raise BasisDomainError(f"类别编号必须是 1..{self.layout.n_levels} 之间的整数")
        padded = np.concatenate([[-np.inf], self.coefficients, [np.inf]])
        return padded[k_int - 1], padded[k_int]

    def invert(self, z: ArrayLike):
        """
        求 h 的反函数

        线性和对数线性为代数反解；Bernstein 在支撑集上二分求根，|h(ŷ) − z| ≤ 1e-10；
        阶梯变换返回满足 ϑ_k ≥ z 的最小类别，没有时返回最高类别

        Raises:
            BasisRangeError: z 超出 Bernstein 在支撑集上的取值范围
        """
        scalar = np.ndim(z) == 0
        z_arr = np.atleast_1d(np.asarray(z, dtype=float))
        theta = self.coefficients
        if self.kind == "step":
            result = np.searchsorted(theta, z_arr, side="left") + 1
            return int(result[0]) if scalar else result
        if not np.all(np.isfinite(z_arr)):
            raise BasisRangeError("反函数的输入必须是有限值")
        if self.kind == "linear":
            result = (z_arr - theta[0]) / theta[1]
        elif self.kind == "log_linear":
            result = np.exp((z_arr - theta[0]) / theta[1])
        else:
            result = self._invert_bernstein(z_arr)
        return float(result[0]) if scalar else result

    def _invert_bernstein(self, z: np.ndarray) -> np.ndarray:
        lo, hi = self.layout.support
        # h(a) = ϑ_0, h(b) = ϑ_M
        h_lo, h_hi = self.coefficients[0], self.coefficients[-1]
        tol = 1e-12 * max(1.0, abs(h_lo), abs(h_hi))
        if np.any(z < h_lo - tol) or np.any(z > h_hi + tol):
            raise BasisRangeError(f"取值超出 Bernstein 变换的范围 [{h_lo:.6g}, {h_hi:.6g}]")
        left = np.full(z.shape, lo)
        right = np.full(z.shape, hi)
        # 向量化二分，100 次迭代后区间宽度低于机器精度
        for _ in range(100):
            mid = 0.5 * (left + right)
            below = self.eval(mid) < z
            left = np.where(below, mid, left)
            right = np.where(below, right, mid)
            if np.all(right - left <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(mid))):
                break
        return 0.5 * (left + right)

    def to_dict(self) -> Dict[str, Any]:
        data = self.layout.to_dict()
        data["coefficients"] = self.coefficients.tolist()
        return data

    def __repr__(self):
        return f"TransformationBasis(kind={self.kind!r}, coefficients={self.coefficients.tolist()})"


def _bernstein_matrix(x: np.ndarray, order: int) -> np.ndarray:
    """Bernstein 基函数矩阵，列 m 为 C(M,m) x^m (1−x)^(M−m)"""
    m = np.arange(order + 1)
    x = x[:, None]
    return binom(order, m) * (1.0 - x) ** (order - m) * x ** m


def _positivity(name: str):
    if name not in POSITIVITY_TRANSFORMS:
        raise InputError(f"不支持的正值变换: {name}，可选: {', '.join(POSITIVITY_TRANSFORMS)}")
    return POSITIVITY_TRANSFORMS[name]
