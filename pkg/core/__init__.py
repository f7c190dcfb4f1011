# 核心算法模块

__version__ = "1.0.0"
