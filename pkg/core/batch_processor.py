"""
批量处理功能模块
把相互独立的任务（模拟重复）分发到进程池执行，并汇总成功/失败统计
"""

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from utils.file_handler import FileHandler
from utils.logger import app_logger


class BatchProcessor:
    """批量处理器类"""

    def __init__(self, workers: int = 1):
        """
        初始化批量处理器

        Args:
            workers (int): 工作进程数，1 表示在当前进程中顺序执行
        """
        if workers < 1:
            raise ValueError(f"工作进程数必须至少为 1，当前为 {workers}")
        self.workers = workers

    @staticmethod
    def _run_one(func: Callable[[Any], Dict[str, Any]], index: int, payload: Any) -> Tuple[int, Optional[Dict[str, Any]], str]:
        try:
            return index, func(payload), ""
        except Exception as e:
            return index, None, f"{type(e).__name__}: {e}"

    def run(self, func: Callable[[Any], Dict[str, Any]], tasks: Sequence[Tuple[int, Any]],
            label: str = "批量任务") -> Dict[str, Any]:
        """
        执行一批任务

        func 必须是模块级函数（可被 pickle），每个任务为 (index, payload)。
        结果按 index 排序，与执行顺序无关。

        Args:
            func: 任务函数，返回一条记录
            tasks: 任务列表
            label: 日志中的批次名称

        Returns:
            Dict[str, Any]: {'success', 'failed', 'errors', 'results'}
        """
        app_logger.info(f"开始{label}: 任务数={len(tasks)}, 进程数={self.workers}")
        outcomes = []
        if self.workers == 1 or len(tasks) <= 1:
            for index, payload in tasks:
                outcomes.append(self._run_one(func, index, payload))
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as executor:
                futures = [executor.submit(BatchProcessor._run_one, func, index, payload)
                           for index, payload in tasks]
                outcomes = [f.result() for f in futures]

        outcomes.sort(key=lambda item: item[0])
        results = [record for _, record, _ in outcomes if record is not None]
        errors = [f"任务 {index}: {message}" for index, record, message in outcomes if record is None]
        for error in errors:
            app_logger.error(f"{label}失败: {error}")
        result = {
            'success': len(results),
            'failed': len(errors),
            'errors': errors,
            'results': results,
        }
        app_logger.info(f"{label}完成: 成功={result['success']}, 失败={result['failed']}")
        return result

    def create_batch_report(self, results: Dict[str, Any], output_path: str,
                            extra: Optional[List[str]] = None) -> bool:
        """
        创建批量处理报告

        Args:
            results (Dict[str, Any]): 批量处理结果
            output_path (str): 报告输出路径
            extra (Optional[List[str]]): 附加的报告行

        Returns:
            bool: 操作是否成功
        """
        try:
            dir_path = os.path.dirname(output_path)
            if dir_path and not FileHandler.ensure_dir_exists(dir_path):
                return False

            report = []
            report.append("# 批量处理报告")
            report.append(f"生成时间: {pd.Timestamp.now().strftime('%Y-%m-%d %H:%M:%S')}")
            report.append("")
            report.append("## 处理结果统计")
            report.append(f"- 成功: {results.get('success', 0)} 个")
            report.append(f"- 失败: {results.get('failed', 0)} 个")
            report.append("")

            errors = results.get('errors', [])
            if errors:
                report.append("## 错误信息")
                for i, error in enumerate(errors, 1):
                    report.append(f"{i}. {error}")
                report.append("")
            if extra:
                report.extend(extra)

            FileHandler.save_text(output_path, "\n".join(report) + "\n")
            return True

        except Exception as e:
            app_logger.error(f"创建批量处理报告失败: {str(e)}")
            return False
