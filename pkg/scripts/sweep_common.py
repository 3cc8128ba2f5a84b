"""Shared summary formatting for the sweep scripts."""
import numpy as np


def summary_table(report, sweep: str) -> str:
    """Mean and sd of weighted RMSE and AUROC per sweep value and method."""
    lines = [f"{sweep},method,rmse_mean,rmse_sd,auroc_mean,auroc_sd,n_failed"]
    points = sorted({r["sweep_value"] for r in report.rows})
    methods = sorted({r["method"] for r in report.rows})
    for v in points:
        for m in methods:
            rmse = report.values(m, "weighted_rmse", sweep_value=v)
            auc = report.values(m, "auroc", sweep_value=v)
            auc = auc[~np.isnan(auc)]
            failed = sum(f["method"] == m and f.get("sweep_value") == v for f in report.failures)
            sd = lambda a: a.std(ddof=1) if a.size > 1 else 0.0  # noqa: E731
            lines.append(f"{v},{m},{rmse.mean():.4f},{sd(rmse):.4f},"
                         f"{auc.mean() if auc.size else float('nan'):.4f},"
                         f"{sd(auc) if auc.size else float('nan'):.4f},{failed}")
    return "\n".join(lines) + "\n"
