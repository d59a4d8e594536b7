"""Run one nested-CV benchmark from a config and print mean C, ranks and
significant pairs.

    python scripts/run_benchmark.py configs/nonlinear_small.json --threads 4
"""
import argparse
import logging

import numpy as np

from survbench import harness


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--out")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--timing", action="store_true", help="also write timing.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    cfg = harness.load_config(args.config)
    if args.out:
        cfg.output_dir = args.out
    report = harness.run_nested_cv(cfg, threads=args.threads)
    harness.write_reports([report], cfg.output_dir, cfg.cost, timing_path=True if args.timing else None)

    summary = report.summary()
    ranks = harness.rank_models(report)["mean_rank"]
    print(f"{'model|feature_set':32s} {'C':>7s} {'95% CI':>17s} {'rank':>5s} {'fit s':>7s}")
    for cell, stats in summary.items():
        c = stats["harrell_c"]
        fit = np.mean([f.fit_time_seconds for f in report.valid_folds() if f"{f.model_kind}|{f.feature_set}" == cell])
        print(f"{cell:32s} {c['mean']:7.4f} [{c['ci_low']:.4f}, {c['ci_high']:.4f}] {ranks.get(cell, float('nan')):5.2f} {fit:7.2f}")
    for fs, res in harness.compare_models(report).items():
        models, q = res["models"], np.array(res["q"])
        sig = [(models[a], models[b], q[a, b]) for a in range(len(models)) for b in range(a + 1, len(models)) if q[a, b] < 0.05]
        for a, b, qv in sig:
            print(f"{fs}: {a} vs {b} q={qv:.3g}")
    print(f"fits={report.fit_count} out={cfg.output_dir}")


if __name__ == "__main__":
    main()
