"""
theory 子命令
在 (τ, λ, γ) 或 (τ, ρ₀, ρ₁) 网格上输出闭式标准误与效率比，写入 theory.csv
"""

import os
from itertools import product
from typing import Any, Dict, List

from config.settings import TheoryGridConfig
from core.copula import copula_from_correlation, correlation_from_copula
from core.inference import TheoryPoint, efficiency_ratio, se_lemma1, se_lemma4
from utils.exception_handler import EXIT_OK
from utils.file_handler import FileHandler
from utils.logger import app_logger


THEORY_CSV = "theory.csv"
COLUMNS = ["tau", "lambda", "gamma", "rho0", "rho1", "n_per_arm", "se_unadjusted", "se_adjusted", "ratio"]


def theory_rows(grid: TheoryGridConfig) -> List[Dict[str, Any]]:
    """网格上每个点一行；correlation 轴先把 (ρ₀, ρ₁) 映射回 (λ, γ)"""
    if grid.axis == "correlation":
        pairs = []
        for rho0, rho1 in product(grid.rho0, grid.rho1):
            lam = copula_from_correlation(rho0)
            pairs.append((lam, copula_from_correlation(rho1) - lam))
    else:
        pairs = list(product(grid.lambda_grid(), grid.gamma_grid()))

    rows = []
    for tau, (lam, gamma) in product(grid.tau, pairs):
        point = TheoryPoint(tau, lam, gamma, grid.n_per_arm)
        rows.append({
            "tau": tau,
            "lambda": lam,
            "gamma": gamma,
            "rho0": correlation_from_copula(lam),
            "rho1": correlation_from_copula(lam + gamma),
            "n_per_arm": grid.n_per_arm,
            "se_unadjusted": se_lemma1(tau, grid.n_per_arm),
            "se_adjusted": se_lemma4(point),
            "ratio": efficiency_ratio(tau, lam, gamma),
        })
    return rows


def cmd_theory(grid: TheoryGridConfig, out_dir: str) -> int:
    rows = theory_rows(grid)
    FileHandler.save_records(os.path.join(out_dir, THEORY_CSV), rows, columns=COLUMNS)
    app_logger.info(f"理论曲线完成: {len(rows)} 个网格点")
    return EXIT_OK
