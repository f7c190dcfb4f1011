"""
fit 子命令
拟合联合模型，输出 fit.json（全部估计、检验、强度与收敛信息）和 fit_summary.csv
"""

import os
from typing import Any, Dict, List, Optional

import numpy as np

from cli.data_loader import LoadedData, load_analysis_data
from config.settings import AnalysisConfig
from core import __version__
from core.inference import TestResult, family_tests, se_lemma4, TheoryPoint, theory_scope
from core.joint import JointFit, fit_joint
from core.marginal import auc_from_tau
from utils.exception_handler import EXIT_NUMERICAL, EXIT_OK, ConfigError
from utils.file_handler import FileHandler
from utils.logger import app_logger


FIT_JSON = "fit.json"
FIT_SUMMARY = "fit_summary.csv"


def read_init(path: str) -> np.ndarray:
    """从以前的 fit.json 读取无约束参数作为热启动初值；长度由 fit_joint 校验"""
    raw = FileHandler.read_json(path).get("estimates_raw")
    if raw is None:
        raise ConfigError(f"初值文件缺少 estimates_raw: {path}")
    app_logger.info(f"使用热启动初值: {path}")
    return np.asarray(raw, dtype=float)


def _tests_to_rows(family: str, tests: Dict[str, TestResult], arms: Dict[str, str]) -> List[Dict[str, Any]]:
    return [{"family": family, "parameter": name, "arm": arms.get(name, ""), **result.to_dict()}
            for name, result in tests.items()]


def _family(fit: JointFit, indices: np.ndarray, names: List[str], options) -> Optional[Dict[str, TestResult]]:
    if indices.size == 0:
        return {}
    cov = fit.sub_covariance(indices)
    if not np.all(np.isfinite(cov)):
        return None
    return family_tests(fit.estimates[indices], cov, names, method=options.multiplicity,
                        level=options.ci_level, draws=options.mc_draws, seed=options.seed)


def build_fit_report(fit: JointFit, config: AnalysisConfig, loaded: LoadedData) -> Dict[str, Any]:
    """
    汇总拟合结果

    检验分三族：τ（各非对照组）、预后（最后一行 λ）、预测（全部 γ），多重比较校正在族内进行
    """
    spec = fit.spec
    options = config.options
    labels = spec.labels
    param_names = fit.layout.labels()
    se_all = np.sqrt(np.clip(np.diag(fit.covariance), 0.0, None))

    tau_idx = fit.layout.tau_indices()
    tau_names = [f"tau[{labels[a]}]" for a in range(1, spec.n_arms)]
    prog_idx = fit.layout.prognostic_indices() if spec.n_vars > 1 else np.zeros(0, dtype=int)
    prog_names = [param_names[i] for i in prog_idx]
    pred_idx = np.concatenate([fit.layout.gamma_indices(a) for a in range(1, spec.n_arms)]).astype(int) \
        if spec.n_vars > 1 else np.zeros(0, dtype=int)
    pred_names = [param_names[i] for i in pred_idx]
    arm_of = {name: labels[a + 1] for a, name in enumerate(tau_names)}
    for a in range(1, spec.n_arms):
        for i in (fit.layout.gamma_indices(a) if spec.n_vars > 1 else []):
            arm_of[param_names[i]] = labels[a]

    families = {
        "treatment_effect": _family(fit, tau_idx, tau_names, options),
        "prognostic": _family(fit, prog_idx, prog_names, options),
        "predictive": _family(fit, pred_idx, pred_names, options),
    }

    outcome = spec.outcome
    outcome_arms = []
    observed = ~loaded.data.columns[-1].missing
    for a, label in enumerate(labels):
        entry = {"arm": label, "n": int(np.sum(loaded.data.arms == a)),
                 "n_outcome_observed": int(np.sum((loaded.data.arms == a) & observed))}
        if a > 0:
            entry["tau"] = float(fit.tau[a - 1])
            entry["tau_se"] = float(se_all[tau_idx[a - 1]])
            if outcome.link == "probit":
                entry["auc"] = auc_from_tau(float(fit.tau[a - 1]))
        outcome_arms.append(entry)

    scope = theory_scope(spec.n_vars - 1, [m.link for m in spec.marginals], [m.basis for m in spec.marginals],
                         n_arms=spec.n_arms)
    theory: Dict[str, Any] = {"scope": scope or "single normal covariate, normal outcome"}
    if scope is None and spec.predictive:
        lam = float(fit.estimates[prog_idx[0]])
        gamma = float(fit.estimates[fit.layout.gamma_indices(1)[0]])
        n_arm = min(loaded.arm_counts.values())
        theory["se_tau"] = se_lemma4(TheoryPoint(float(fit.tau[0]), lam, gamma, n_arm))

    report = {
        "schema_version": 1,
        "version": __version__,
        "config": config.model_dump(mode="json", by_alias=True),
        "variable_order": spec.names,
        "arms": labels,
        "n_rows": fit.n_rows,
        "n_dropped": loaded.n_dropped,
        "arm_counts": loaded.arm_counts,
        "loglik": fit.loglik,
        "convergence": fit.convergence.to_dict(),
        "parameters": [
            {"name": n, "estimate": float(e), "se": float(s)}
            for n, e, s in zip(param_names, fit.estimates, se_all)
        ],
        "estimates_raw": fit.estimates.tolist(),
        "tests": {k: (None if v is None else {n: r.to_dict() for n, r in v.items()}) for k, v in families.items()},
        "multiplicity": options.multiplicity or "maxt",
        "outcome_by_arm": outcome_arms,
        "marginals": [m.to_dict() for m in fit.model.marginals],
        "theory": theory,
    }
    if spec.n_vars > 1:
        report["derived"] = fit.derived_quantities()
        report["correlation"] = {labels[a]: fit.correlation(a).tolist() for a in range(spec.n_arms)}
    report["_rows"] = [row for k, v in families.items() if v for row in _tests_to_rows(k, v, arm_of)]
    return report


def cmd_fit(config: AnalysisConfig, out_dir: str, data_path: Optional[str] = None,
            config_path: Optional[str] = None, init_path: Optional[str] = None) -> int:
    """
    fit 子命令

    Returns:
        int: 退出码；优化未收敛时仍写出最佳迭代点的报告并返回 3
    """
    app_logger.info("开始拟合联合模型")
    loaded = load_analysis_data(config, data_path, config_path)
    init = read_init(init_path) if init_path else None
    options = config.options
    fit = fit_joint(loaded.spec, loaded.data, init=init,
                    gtol=options.gtol, ftol=options.ftol, max_iter=options.max_iter)

    report = build_fit_report(fit, config, loaded)
    rows = report.pop("_rows")
    FileHandler.save_json(os.path.join(out_dir, FIT_JSON), report)
    FileHandler.save_records(os.path.join(out_dir, FIT_SUMMARY), rows,
                             columns=["family", "parameter", "arm", "estimate", "se", "z",
                                      "p_raw", "p_adjusted", "ci_lo", "ci_hi"])

    for entry in report["outcome_by_arm"][1:]:
        app_logger.info(f"处理组 {entry['arm']}: τ = {entry['tau']:.4f} (SE {entry['tau_se']:.4f})")
    if not fit.convergence.converged:
        app_logger.error(
            f"联合模型未收敛，已输出最佳迭代点: 对数似然 {fit.loglik:.6f}, "
            f"梯度 {fit.convergence.grad_norm:.3e}"
        )
        return EXIT_NUMERICAL
    app_logger.info(f"拟合完成，结果写入 {out_dir}")
    return EXIT_OK
