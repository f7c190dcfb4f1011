"""
日志记录工具模块
提供统一的日志记录功能，拟合、模拟与命令行共用同一个记录器
"""

import logging
import os
from datetime import datetime
from typing import Optional


class Logger:
    """日志记录器类，提供统一的日志记录接口"""

    def __init__(self, name: str = "NamiHte", log_level: int = logging.INFO,
                 log_dir: Optional[str] = None):
        """
        初始化日志记录器

        Args:
            name (str): 日志记录器名称
            log_level (int): 日志级别
            log_dir (Optional[str]): 日志目录；为空字符串时不写文件，
                为 None 时读取环境变量 NAMI_HTE_LOG_DIR，再退回到仓库下的 logs/
        """
        self.logger = logging.getLogger(name)
        self.logger.setLevel(log_level)
        self.logger.propagate = False

        # 避免重复添加处理器（多进程模拟时每个进程各自导入）
        if not self.logger.handlers:
            formatter = logging.Formatter(
                '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
                datefmt='%Y-%m-%d %H:%M:%S'
            )

            if log_dir is None:
                log_dir = os.environ.get(
                    "NAMI_HTE_LOG_DIR",
                    os.path.join(os.path.dirname(os.path.dirname(__file__)), "logs"),
                )

            if log_dir:
                try:
                    os.makedirs(log_dir, exist_ok=True)
                    log_file = os.path.join(log_dir, f"{name}_{datetime.now().strftime('%Y%m%d')}.log")
                    file_handler = logging.FileHandler(log_file, encoding='utf-8')
                    file_handler.setLevel(log_level)
                    file_handler.setFormatter(formatter)
                    self.logger.addHandler(file_handler)
                except OSError:
                    # 只读环境下仅输出到标准错误
                    pass

            # 所有诊断信息输出到标准错误
            console_handler = logging.StreamHandler()
            console_handler.setLevel(log_level)
            console_handler.setFormatter(formatter)
            self.logger.addHandler(console_handler)

    def set_level(self, log_level: int):
        """调整记录器及其全部处理器的级别"""
        self.logger.setLevel(log_level)
        for handler in self.logger.handlers:
            handler.setLevel(log_level)

    def debug(self, message):
        """记录调试信息"""
        self.logger.debug(message)

    def info(self, message):
        """记录一般信息"""
        self.logger.info(message)

    def warning(self, message):
        """记录警告信息"""
        self.logger.warning(message)

    def error(self, message):
        """记录错误信息"""
        self.logger.error(message)

    def critical(self, message):
        """记录严重错误信息"""
        self.logger.critical(message)

    def exception(self, message):
        """记录异常信息，包含堆栈跟踪"""
        self.logger.exception(message)


# 创建全局日志记录器实例
app_logger = Logger("NamiHte")
