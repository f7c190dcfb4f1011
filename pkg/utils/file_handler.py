"""
文件处理工具模块
提供原子写入（临时文件 + 重命名）、CSV 读取与 JSON 读写功能
"""

import json
import os
import tempfile
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from utils.exception_handler import ConfigError
from utils.logger import app_logger


def _json_default(obj: Any):
    """把 numpy 类型转换为 JSON 可序列化对象"""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"无法序列化的对象类型: {type(obj).__name__}")


class FileHandler:
    """文件处理工具类"""

    @staticmethod
    def ensure_dir_exists(dir_path: str) -> bool:
        """
        确保目录存在，如果不存在则创建

        Args:
            dir_path (str): 目录路径

        Returns:
            bool: 操作是否成功
        """
        try:
            if dir_path and not os.path.exists(dir_path):
                os.makedirs(dir_path, exist_ok=True)
                app_logger.info(f"创建目录: {dir_path}")
            return True
        except Exception as e:
            app_logger.error(f"创建目录失败: {dir_path}, 错误: {str(e)}")
            return False

    @staticmethod
    def _atomic_write(file_path: str, writer, binary: bool = False):
        """
        先写入同目录下的临时文件，再原子地重命名为目标文件

        Args:
            file_path (str): 目标文件路径
            writer: 接收临时文件路径的写入函数
            binary (bool): 是否以二进制方式处理（仅影响临时文件后缀）

        Raises:
            OSError: 写入失败
        """
        dir_path = os.path.dirname(os.path.abspath(file_path))
        if not FileHandler.ensure_dir_exists(dir_path):
            raise OSError(f"无法创建输出目录: {dir_path}")
        suffix = ".tmp.bin" if binary else ".tmp"
        fd, tmp_path = tempfile.mkstemp(prefix=".", suffix=suffix, dir=dir_path)
        os.close(fd)
        try:
            writer(tmp_path)
            os.replace(tmp_path, file_path)
        except Exception:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise

    @staticmethod
    def save_json(file_path: str, data: Dict[str, Any]) -> None:
        """
        原子地保存 JSON 文件

        Args:
            file_path (str): 文件路径
            data (Dict[str, Any]): 要保存的数据
        """
        def _write(path):
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(data, f, ensure_ascii=False, indent=2, default=_json_default)
                f.write("\n")

        FileHandler._atomic_write(file_path, _write)
        app_logger.info(f"JSON文件保存成功: {file_path}")

    @staticmethod
    def save_text(file_path: str, content: str) -> None:
        """原子地保存文本文件（UTF-8）"""
        def _write(path):
            with open(path, 'w', encoding='utf-8') as f:
                f.write(content)

        FileHandler._atomic_write(file_path, _write)
        app_logger.info(f"文件保存成功: {file_path}")

    @staticmethod
    def read_json(file_path: str) -> Dict[str, Any]:
        """
        读取 JSON 文件

        Args:
            file_path (str): 文件路径

        Returns:
            Dict[str, Any]: 解析结果

        Raises:
            FileNotFoundError: 文件不存在
            ConfigError: JSON 格式错误
        """
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"文件不存在: {file_path}")
        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON格式错误: {file_path}", {"位置": f"第{e.lineno}行 第{e.colno}列", "原因": e.msg})

    @staticmethod
    def save_dataframe(file_path: str, df: pd.DataFrame) -> None:
        """
        原子地保存 DataFrame 为 CSV；后缀为 .gz 时使用 gzip 压缩

        Args:
            file_path (str): 文件路径
            df (pd.DataFrame): 要保存的数据
        """
        compression = "gzip" if file_path.endswith(".gz") else None

        def _write(path):
            # 17 位有效数字保证读回后数值一致
            df.to_csv(path, index=False, float_format="%.17g", compression=compression)

        FileHandler._atomic_write(file_path, _write, binary=compression is not None)
        app_logger.info(f"CSV文件保存成功: {file_path}, 记录数: {len(df)}")

    @staticmethod
    def save_records(file_path: str, records: List[Dict[str, Any]],
                     columns: Optional[List[str]] = None) -> None:
        """
        保存字典列表为 CSV

        Args:
            file_path (str): 文件路径
            records (List[Dict[str, Any]]): 记录列表
            columns (Optional[List[str]]): 列顺序，为 None 时使用第一条记录的键
        """
        df = pd.DataFrame.from_records(records, columns=columns)
        FileHandler.save_dataframe(file_path, df)

    @staticmethod
    def read_csv(file_path: str, missing_token: str = "") -> pd.DataFrame:
        """
        读取带表头的 UTF-8 CSV 文件

        Args:
            file_path (str): 文件路径
            missing_token (str): 缺失值标记，默认空单元格

        Returns:
            pd.DataFrame: 数据表

        Raises:
            FileNotFoundError: 文件不存在
            ConfigError: 文件为空或无法解析
        """
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"数据文件不存在: {file_path}")
        na_values = [missing_token] if missing_token else None
        try:
            df = pd.read_csv(file_path, encoding='utf-8', na_values=na_values,
                             keep_default_na=(missing_token == ""))
        except UnicodeDecodeError:
            raise ConfigError(f"CSV文件不是UTF-8编码: {file_path}")
        except pd.errors.EmptyDataError:
            raise ConfigError(f"CSV文件为空: {file_path}")
        except pd.errors.ParserError as e:
            raise ConfigError(f"CSV文件解析失败: {file_path}", {"原因": str(e)})
        if df.empty:
            raise ConfigError(f"CSV文件没有数据行: {file_path}")
        app_logger.info(f"CSV文件读取成功: {file_path}, 记录数: {len(df)}")
        return df
