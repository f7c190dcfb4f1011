"""
全局异常处理模块
定义异常层次结构，并把未捕获的异常映射为命令行退出码
"""

import sys
import traceback
from typing import Any, Callable, Dict, Optional

import numpy as np

from utils.logger import app_logger


EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class NamiHteError(Exception):
    """所有自定义异常的基类"""


class InputError(NamiHteError, ValueError):
    """输入数据或参数无效（退出码 2）"""


class BasisDomainError(InputError):
    """取值超出变换函数的定义域，或输入不是有限值"""


class BasisRangeError(InputError):
    """目标值超出变换函数在支撑集上的可达范围"""


class ConfigError(InputError):
    """配置文件或数据列与模式不符"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnsupportedConfigurationError(InputError):
    """模型配置超出精确似然的支持范围"""


class UnsupportedOperationError(InputError):
    """当前变换类型不支持该操作"""


class NumericalError(NamiHteError, RuntimeError):
    """数值计算失败（退出码 3）"""


class ConvergenceError(NumericalError):
    """优化未收敛，携带最佳迭代点"""

    def __init__(self, message: str, best_iterate: Optional[np.ndarray] = None,
                 best_loglik: float = float("nan"), diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.best_iterate = best_iterate
        self.best_loglik = best_loglik
        self.diagnostics = diagnostics or {}


class IdentifiabilityError(NumericalError):
    """观测信息矩阵奇异或非正定，参数不可识别"""


class MarginalFitError(NumericalError):
    """联合拟合第一阶段某个边际模型拟合失败"""

    def __init__(self, message: str, variable: str = ""):
        super().__init__(message)
        self.variable = variable


def exit_code_for(exc: BaseException) -> int:
    """
    根据异常类型确定退出码

    Args:
        exc: 异常实例

    Returns:
        int: 退出码
    """
    if isinstance(exc, (InputError, FileNotFoundError, PermissionError)):
        return EXIT_INPUT
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    # 未分类的异常按数值失败处理，诊断信息已写入日志
    return EXIT_NUMERICAL


class GlobalExceptionHandler:
    """全局异常处理器"""

    def __init__(self):
        """初始化全局异常处理器"""
        self.installed = False

    def install(self):
        """安装异常钩子"""
        sys.excepthook = self.handle_exception
        self.installed = True
        app_logger.debug("全局异常处理器已安装")

    def handle_exception(self, exc_type, exc_value, exc_traceback):
        """
        处理未捕获的异常

        Args:
            exc_type: 异常类型
            exc_value: 异常值
            exc_traceback: 异常回溯信息
        """
        if issubclass(exc_type, KeyboardInterrupt):
            sys.__excepthook__(exc_type, exc_value, exc_traceback)
            return
        error_msg = "".join(traceback.format_exception(exc_type, exc_value, exc_traceback))
        app_logger.error(f"未捕获的异常:\n{error_msg}")

    def run(self, func: Callable[[], int]) -> int:
        """
        执行一个命令并把异常转换为退出码

        Args:
            func: 无参数命令函数，返回退出码

        Returns:
            int: 退出码
        """
        try:
            return func()
        except ConfigError as ce:
            app_logger.error(f"配置错误: {ce}")
            for key, value in ce.diagnostics.items():
                app_logger.error(f"  {key}: {value}")
            return EXIT_INPUT
        except ConvergenceError as cve:
            app_logger.error(f"优化未收敛: {cve}")
            if cve.best_iterate is not None:
                app_logger.error(f"  最佳对数似然: {cve.best_loglik:.6f}")
                app_logger.error(f"  最佳迭代点: {np.array2string(np.asarray(cve.best_iterate), precision=6)}")
            for key, value in cve.diagnostics.items():
                app_logger.error(f"  {key}: {value}")
            return EXIT_NUMERICAL
        except Exception as e:
            code = exit_code_for(e)
            if code == EXIT_INPUT:
                app_logger.error(f"输入错误: {e}")
            else:
                app_logger.error(f"数值计算失败: {type(e).__name__}: {e}")
                app_logger.debug(traceback.format_exc())
            return code


# 创建全局异常处理器实例
global_exception_handler = GlobalExceptionHandler()
