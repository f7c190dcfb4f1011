"""
数值优化模块
提供基于 BFGS 的极大似然求解、中心差分梯度/Hessian/Jacobian 以及观测信息协方差
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy import linalg, optimize

from utils.exception_handler import IdentifiabilityError
from utils.logger import app_logger


# 目标函数非有限时返回的惩罚值，BFGS 的线搜索会据此回退
FAILURE_VALUE = 1e10

DEFAULT_GTOL = 1e-5
DEFAULT_FTOL = 1e-9
DEFAULT_MAX_ITER = 1000
GRADIENT_STEP = 1e-6
HESSIAN_STEP = 1e-4


@dataclass(frozen=True)
class ConvergenceInfo:
    """收敛诊断信息"""

    status: str  # converged / flagged
    iterations: int
    grad_norm: float
    rel_loglik_change: float
    message: str
    gtol: float = DEFAULT_GTOL
    ftol: float = DEFAULT_FTOL

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self):
        return {
            "status": self.status,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "rel_loglik_change": self.rel_loglik_change,
            "message": self.message,
            "gtol": self.gtol,
            "ftol": self.ftol,
        }


@dataclass(frozen=True)
class OptimizationResult:
    """优化结果：最优点、对数似然和收敛信息"""

    x: np.ndarray
    loglik: float
    convergence: ConvergenceInfo
    history: List[float] = field(default_factory=list, repr=False)


def _steps(x: np.ndarray, step: float) -> np.ndarray:
    return step * np.maximum(1.0, np.abs(x))


def numeric_gradient(func: Callable[[np.ndarray], float], x: np.ndarray,
                     step: float = GRADIENT_STEP) -> np.ndarray:
    """
    中心差分梯度

    Args:
        func: 标量函数
        x: 求值点
        step: 相对步长，实际步长为 step * max(1, |x_i|)

    Returns:
        np.ndarray: 梯度
    """
    x = np.asarray(x, dtype=float)
    h = _steps(x, step)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        grad[i] = (func(xp) - func(xm)) / (2.0 * h[i])
    return grad


def numeric_hessian(func: Callable[[np.ndarray], float], x: np.ndarray,
                    step: float = HESSIAN_STEP) -> np.ndarray:
    """
    中心差分 Hessian，结果精确对称

    Args:
        func: 标量函数
        x: 求值点
        step: 相对步长

    Returns:
        np.ndarray: Hessian 矩阵
    """
    x = np.asarray(x, dtype=float)
    p = x.size
    h = _steps(x, step)
    f0 = func(x)
    hess = np.empty((p, p))
    f_plus = np.empty(p)
    f_minus = np.empty(p)
    for i in range(p):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        f_plus[i] = func(xp)
        f_minus[i] = func(xm)
        hess[i, i] = (f_plus[i] - 2.0 * f0 + f_minus[i]) / (h[i] * h[i])
    for i in range(p):
        for j in range(i + 1, p):
            xpp = x.copy()
            xpm = x.copy()
            xmp = x.copy()
            xmm = x.copy()
            xpp[i] += h[i]
            xpp[j] += h[j]
            xpm[i] += h[i]
            xpm[j] -= h[j]
            xmp[i] -= h[i]
            xmp[j] += h[j]
            xmm[i] -= h[i]
            xmm[j] -= h[j]
            value = (func(xpp) - func(xpm) - func(xmp) + func(xmm)) / (4.0 * h[i] * h[j])
            hess[i, j] = value
            hess[j, i] = value
    return hess


def numeric_jacobian(func: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                     step: float = GRADIENT_STEP) -> np.ndarray:
    """向量函数的中心差分 Jacobian，形状 (输出维数, 参数维数)"""
    x = np.asarray(x, dtype=float)
    h = _steps(x, step)
    columns = []
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        columns.append((np.asarray(func(xp), dtype=float) - np.asarray(func(xm), dtype=float)) / (2.0 * h[i]))
    return np.column_stack(columns) if columns else np.zeros((0, 0))


def covariance_from_information(information: np.ndarray) -> np.ndarray:
    """
    由观测信息矩阵（负对数似然的 Hessian）求协方差

    Raises:
        IdentifiabilityError: 信息矩阵奇异或非正定
    """
    information = 0.5 * (information + information.T)
    if not np.all(np.isfinite(information)):
        raise IdentifiabilityError("观测信息矩阵含有非有限值")
    eigenvalues = np.linalg.eigvalsh(information)
    scale = max(1.0, float(np.max(np.abs(eigenvalues))))
    if eigenvalues[0] <= 1e-10 * scale:
        raise IdentifiabilityError(
            f"观测信息矩阵奇异或非正定（最小特征值 {eigenvalues[0]:.3e}），模型参数不可识别"
        )
    factor = linalg.cho_factor(information, lower=True)
    covariance = linalg.cho_solve(factor, np.eye(information.shape[0]))
    return 0.5 * (covariance + covariance.T)


def delta_method_se(func: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                    covariance: np.ndarray) -> np.ndarray:
    """派生量的 delta 方法标准误"""
    jac = numeric_jacobian(func, x)
    variance = np.einsum("ij,jk,ik->i", jac, covariance, jac)
    return np.sqrt(np.maximum(variance, 0.0))


def maximize(loglik: Callable[[np.ndarray], float], x0: np.ndarray, n_obs: int,
             gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
             gtol: float = DEFAULT_GTOL, ftol: float = DEFAULT_FTOL,
             max_iter: int = DEFAULT_MAX_ITER, max_polish: int = 20,
             label: str = "模型") -> OptimizationResult:
    """
    用 BFGS 最大化对数似然

    目标函数取平均负对数似然，因此梯度容差是按观测数缩放后的容差。
    BFGS 结束后若梯度或相对变化未达到容差，使用带回溯的牛顿步继续精化。

    Args:
        loglik: 对数似然函数（无约束参数）
        x0: 初始值
        n_obs: 观测数，用于缩放
        gradient: 对数似然的解析梯度，为 None 时使用中心差分
        gtol: 缩放梯度上确界容差
        ftol: 相对对数似然变化容差
        max_iter: BFGS 最大迭代次数
        max_polish: 牛顿精化最大步数
        label: 日志中的模型名称

    Returns:
        OptimizationResult: 优化结果（未收敛时 status 为 flagged）
    """
    scale = float(max(n_obs, 1))

    def objective(x):
        value = loglik(x)
        if not np.isfinite(value):
            return FAILURE_VALUE
        return -value / scale

    if gradient is not None:
        def objective_grad(x):
            return -np.asarray(gradient(x), dtype=float) / scale
    else:
        def objective_grad(x):
            return numeric_gradient(objective, x)

    x0 = np.asarray(x0, dtype=float)
    history = [objective(x0)]
    if history[0] >= FAILURE_VALUE:
        app_logger.warning(f"{label}: 初始值处对数似然非有限")

    def _callback(xk):
        history.append(objective(xk))

    result = optimize.minimize(
        objective, x0, jac=objective_grad, method="BFGS", callback=_callback,
        options={"gtol": 0.1 * gtol, "maxiter": max_iter},
    )
    x = np.asarray(result.x, dtype=float)
    f = objective(x)
    f_prev = history[-2] if len(history) > 1 else np.inf
    iterations = int(result.nit)
    message = str(result.message)

    converged = False
    grad = objective_grad(x)
    change = abs(f - f_prev) / max(1.0, abs(f))
    for _ in range(max_polish + 1):
        grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
        change = abs(f - f_prev) / max(1.0, abs(f)) if np.isfinite(f_prev) else np.inf
        if grad_norm <= gtol and change <= ftol:
            converged = True
            break
        if iterations >= max_iter + max_polish:
            break
        # 牛顿精化
        hess = numeric_hessian(objective, x)
        try:
            direction = linalg.cho_solve(linalg.cho_factor(0.5 * (hess + hess.T), lower=True), grad)
        except linalg.LinAlgError:
            direction = grad
        t = 1.0
        improved = False
        while t > 1e-10:
            candidate = x - t * direction
            f_new = objective(candidate)
            if f_new <= f:
                improved = True
                break
            t *= 0.5
        iterations += 1
        if improved:
            x, f_prev, f = candidate, f, f_new
            history.append(f)
        else:
            # 浮点精度下无法继续下降，视为相对变化为零
            f_prev = f
        grad = objective_grad(x)
        if not improved and float(np.max(np.abs(grad))) > gtol:
            break

    grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
    change = abs(f - f_prev) / max(1.0, abs(f)) if np.isfinite(f_prev) else np.inf
    status = "converged" if converged else "flagged"
    if not converged:
        app_logger.warning(f"{label}: 优化未达到收敛容差（梯度 {grad_norm:.3e}，相对变化 {change:.3e}）")
    else:
        app_logger.debug(f"{label}: 优化收敛，迭代 {iterations} 次，梯度 {grad_norm:.3e}")

    info = ConvergenceInfo(status=status, iterations=iterations, grad_norm=grad_norm,
                           rel_loglik_change=float(change), message=message,
                           gtol=gtol, ftol=ftol)
    return OptimizationResult(x=x, loglik=-f * scale, convergence=info, history=history)


def observed_information(loglik: Callable[[np.ndarray], float], x: np.ndarray,
                         step: float = HESSIAN_STEP) -> np.ndarray:
    """负对数似然在 x 处的数值 Hessian（观测信息）"""
    def negative(theta):
        value = loglik(theta)
        return -value if np.isfinite(value) else FAILURE_VALUE
    return numeric_hessian(negative, x, step=step)
