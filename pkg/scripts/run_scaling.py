"""Sample-size scaling: nested CV at several subsample sizes, then a
fit-time table against the cost thresholds.

    python scripts/run_scaling.py configs/linear_scaling.json --sizes 5000,10000,20000,50000
"""
import argparse

import numpy as np

from survbench import harness


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--sizes", default="5000,10000,20000,50000")
    ap.add_argument("--out")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cfg = harness.load_config(args.config)
    if args.out:
        cfg.output_dir = args.out
    sizes = [int(s) for s in args.sizes.split(",")]
    reports = harness.scaling_experiment(cfg, sizes, threads=args.threads)
    harness.write_reports(reports, cfg.output_dir, cfg.cost, timing_path=True)

    limits = cfg.cost.seconds()
    print("cost lines: " + ", ".join(f"{t} -> {s:.0f}s" for t, s in limits.items()))
    print(f"{'size':>7s} {'model':14s} {'mean C':>7s} {'sd C':>7s} {'fit s':>8s}")
    for rep in reports:
        by_model = {}
        for f in rep.valid_folds():
            by_model.setdefault(f.model_kind, []).append(f)
        for model, folds in by_model.items():
            c = np.array([f.metrics.harrell_c for f in folds])
            t = np.mean([f.fit_time_seconds for f in folds])
            print(f"{rep.size:7d} {model:14s} {c.mean():7.4f} {c.std(ddof=1):7.4f} {t:8.3f}")


if __name__ == "__main__":
    main()
