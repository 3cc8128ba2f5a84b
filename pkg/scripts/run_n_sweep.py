"""Vary the total sample size at a fixed number of sharing subgroups.

    python3 scripts/run_n_sweep.py --n 100 250 500 --k0 4 --p 50 --out results/n
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
    ap.add_argument("--k0", type=int, default=4)
    ap.add_argument("--p", type=int, default=200)
    ap.add_argument("--n", type=int, nargs="+", default=[100, 250, 500, 1000])
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--folds", type=int, default=10)
    ap.add_argument("--methods", nargs="+", default=["fused_l2", "pooled", "subgroupwise"])
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=2026)
    ap.add_argument("--out", type=Path, default=Path("results/n_sweep"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    report = ComparisonReport()
    for n in args.n:
        cfg = SimulationConfig(K=args.K, K0=args.k0, p=args.p, n_total=n, seed=args.seed)
        logging.info("n = %d", n)
        report.extend(run_comparison(cfg, args.methods, CvGrid(folds=args.folds, seed=args.seed),
                                     args.replicates, threads=args.threads,
                                     tags={"sweep": "n", "sweep_value": n}))
    write_atomic(args.out / "report.csv", report.to_csv())
    table = summary_table(report, "n")
    write_atomic(args.out / "summary.csv", table)
    print(table)


if __name__ == "__main__":
    main()
