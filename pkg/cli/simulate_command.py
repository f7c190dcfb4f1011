"""
simulate 子命令
执行功效/检验水准模拟或单协变量一致性研究，输出 sim_summary.csv 与 sim_replications.csv.gz
"""

import os

import pandas as pd

from config.settings import SimConfig
from core.batch_processor import BatchProcessor
from core.simulation import consistency_study, run_study
from utils.exception_handler import EXIT_OK
from utils.file_handler import FileHandler
from utils.logger import app_logger


SIM_SUMMARY = "sim_summary.csv"
SIM_REPLICATIONS = "sim_replications.csv.gz"
SIM_CONFIG = "sim_config.json"
SIM_REPORT = "sim_report.md"


def cmd_simulate(config: SimConfig, out_dir: str) -> int:
    """
    simulate 子命令

    汇总中 valid 为 False 表示拟合失败率超过阈值；此时仍写出全部结果并记录警告
    """
    reps = config.effective_replications
    app_logger.info(f"开始模拟研究: {config.study}, 每个单元 {reps} 次重复, 种子 {config.seed}")
    if config.study == "consistency":
        table, records = consistency_study(config)
        valid = bool(table["valid"].all()) if len(table) else False
    else:
        summary, records = run_study(config)
        table = summary.to_frame()
        valid = summary.valid

    FileHandler.save_dataframe(os.path.join(out_dir, SIM_SUMMARY), table)
    FileHandler.save_dataframe(os.path.join(out_dir, SIM_REPLICATIONS), pd.DataFrame(records))
    FileHandler.save_json(os.path.join(out_dir, SIM_CONFIG), config.model_dump(mode="json"))

    failed = [r for r in records if not (r.get("ok", True) and r.get("mi_ok", True) and r.get("nami_ok", True))]
    errors = [f"重复 {r['index']}: {r.get('error') or r.get('nami_error') or r.get('mi_error')}" for r in failed]
    BatchProcessor().create_batch_report(
        {"success": len(records) - len(failed), "failed": len(failed), "errors": errors[:50]},
        os.path.join(out_dir, SIM_REPORT),
        extra=[f"汇总有效: {'是' if valid else '否'}"],
    )
    if not valid:
        app_logger.warning("模拟汇总被标记为无效，请检查 sim_report.md 中的失败记录")
    app_logger.info(f"模拟完成，结果写入 {out_dir}")
    return EXIT_OK
