"""
NAMI-HTE 命令行程序入口
子命令: fit（拟合联合模型）、simulate（模拟研究）、theory（理论标准误曲线）、version
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from cli.fit_command import cmd_fit
from cli.simulate_command import cmd_simulate
from cli.theory_command import cmd_theory
from config.settings import AnalysisConfig, SimConfig, TheoryGridConfig, parse_config
from core import __version__
from utils.exception_handler import EXIT_OK, ConfigError, global_exception_handler
from utils.file_handler import FileHandler
from utils.logger import app_logger


def build_parser() -> argparse.ArgumentParser:
    """
    创建命令行解析器

    Returns:
        argparse.ArgumentParser: 解析器
    """
    parser = argparse.ArgumentParser(prog="nami-hte", description="非正态调整边际推断与异质处理效应")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="输出调试信息")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="只输出警告和错误")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="拟合联合模型")
    fit.add_argument("--config", required=True, help="分析配置文件 (JSON)")
    fit.add_argument("--data", help="数据文件 (CSV)，覆盖配置中的 data_path")
    fit.add_argument("--out", default=".", help="输出目录")
    fit.add_argument("--seed", type=int, help="随机种子")
    fit.add_argument("--discrete-approx", action="store_true", default=None, help="离散协变量使用抖动近似")
    fit.add_argument("--multiplicity", choices=["bonferroni", "maxt"], help="多重比较校正方法")
    fit.add_argument("--init", help="以前的 fit.json，作为热启动初值")

    sim = sub.add_parser("simulate", help="运行模拟研究")
    sim.add_argument("--config", help="模拟配置文件 (JSON)，缺省使用默认设置")
    sim.add_argument("--out", default=".", help="输出目录")
    sim.add_argument("--seed", type=int, help="随机种子")
    sim.add_argument("--reps", type=int, help="每个单元的重复次数")
    sim.add_argument("--threads", type=int, help="工作进程数")
    sim.add_argument("--multiplicity", choices=["bonferroni", "maxt"], help="多重比较校正方法")
    sim.add_argument("--full-scale", action="store_true", default=None, help="使用 10000 次重复")

    theory = sub.add_parser("theory", help="输出理论标准误与效率比")
    theory.add_argument("--config", help="网格配置文件 (JSON)，缺省为单点网格")
    theory.add_argument("--out", default=".", help="输出目录")

    sub.add_parser("version", help="显示版本号")
    return parser


def _read_config(path: Optional[str]) -> Dict[str, Any]:
    return FileHandler.read_json(path) if path else {}


def _override(data: Dict[str, Any], key: str, value: Any) -> None:
    if value is not None:
        data[key] = value


def analysis_config_from_args(args: argparse.Namespace) -> AnalysisConfig:
    """读取分析配置并应用命令行覆盖"""
    data = _read_config(args.config)
    options = dict(data.get("options") or {})
    _override(options, "seed", args.seed)
    _override(options, "discrete_approx", args.discrete_approx)
    _override(options, "multiplicity", args.multiplicity)
    data["options"] = options
    return parse_config(data, AnalysisConfig)


def sim_config_from_args(args: argparse.Namespace) -> SimConfig:
    """读取模拟配置并应用命令行覆盖"""
    data = _read_config(args.config)
    _override(data, "seed", args.seed)
    _override(data, "replications", args.reps)
    _override(data, "threads", args.threads)
    _override(data, "multiplicity", args.multiplicity)
    _override(data, "full_scale", args.full_scale)
    return parse_config(data, SimConfig)


def dispatch(args: argparse.Namespace) -> int:
    """执行解析后的子命令并返回退出码"""
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    if not FileHandler.ensure_dir_exists(args.out):
        raise ConfigError(f"无法创建输出目录: {args.out}", {"out": args.out})
    if args.command == "fit":
        config = analysis_config_from_args(args)
        return cmd_fit(config, args.out, data_path=args.data, config_path=args.config, init_path=args.init)
    if args.command == "simulate":
        return cmd_simulate(sim_config_from_args(args), args.out)
    return cmd_theory(parse_config(_read_config(args.config), TheoryGridConfig), args.out)


def main(argv: Optional[List[str]] = None) -> int:
    """
    主函数

    Args:
        argv: 命令行参数，为 None 时读取 sys.argv

    Returns:
        int: 退出码（0 成功，2 输入或配置错误，3 数值失败）
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse 用法错误按输入错误处理
        return 0 if e.code == 0 else 2

    if args.verbose:
        app_logger.set_level(logging.DEBUG)
    elif args.quiet:
        app_logger.set_level(logging.WARNING)
    else:
        app_logger.set_level(logging.INFO)

    global_exception_handler.install()
    app_logger.debug(f"命令行参数: {vars(args)}")
    return global_exception_handler.run(lambda: dispatch(args))


if __name__ == "__main__":
    sys.exit(main())
