"""Vary the number of subgroups sharing coefficients (K0 = 1..K) at fixed n.

Writes a long-format report CSV plus a per-(K0, method) summary table.

    python3 scripts/run_k0_sweep.py --replicates 20 --p 50 --out results/k0
"""
import argparse
import logging
from pathlib import Path

from subgroup_fusion.cli import write_atomic
from subgroup_fusion.evaluation import ComparisonReport, CvGrid, run_comparison
from subgroup_fusion.simulation import SimulationConfig
from sweep_common import summary_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=9)
    ap.add_argument("--p", type=int, default=200)
    ap.add_argument("--n", type=int, default=250)
    ap.add_argument("--k0", type=int, nargs="*", help="K0 values (default 1..K)")
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--folds", type=int, default=10)
    ap.add_argument("--methods", nargs="+", default=["fused_l2", "pooled", "subgroupwise"])
    ap.add_argument("--tau", default="uniform", choices=["uniform", "mean", "kl"])
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=2026)
    ap.add_argument("--out", type=Path, default=Path("results/k0_sweep"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    report = ComparisonReport()
    for k0 in args.k0 or range(1, args.K + 1):
        cfg = SimulationConfig(K=args.K, K0=k0, p=args.p, n_total=args.n, seed=args.seed)
        logging.info("K0 = %d", k0)
        report.extend(run_comparison(cfg, args.methods, CvGrid(folds=args.folds, seed=args.seed),
                                     args.replicates, tau_scheme=args.tau, threads=args.threads,
                                     tags={"sweep": "K0", "sweep_value": k0}))
    write_atomic(args.out / "report.csv", report.to_csv())
    table = summary_table(report, "K0")
    write_atomic(args.out / "summary.csv", table)
    print(table)


if __name__ == "__main__":
    main()
