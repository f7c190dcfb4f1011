"""
仓库根目录的 pytest 配置：把仓库根目录加入 sys.path，并关闭日志文件输出
"""

import os
import sys

# 必须在导入 utils.logger 之前设置
os.environ.setdefault("NAMI_HTE_LOG_DIR", "")

ROOT = os.path.dirname(os.path.abspath(__file__))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)
