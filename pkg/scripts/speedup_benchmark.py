"""Wall-clock of the linear-time Cox gradient/Hessian against the quadratic
reference, and GBT fit time against n.

    python scripts/speedup_benchmark.py --sizes 1000,5000,20000,50000
"""
import argparse
import time

import numpy as np

from survbench import gbt
from survbench.cox_objective import build_risk_index, grad_hess, grad_hess_naive
from survbench.dataset import SynthSpec, generate_synthetic, subsample


def best_of(fn, *args, repeat=3):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        out.append(time.perf_counter() - t0)
    return min(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="1000,5000,20000,50000")
    ap.add_argument("--skip-naive-above", type=int, default=60000)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    full = generate_synthetic(SynthSpec(n_rows=max(sizes), n_continuous=6, n_boolean=4, risk_kind="nonlinear", seed=1))
    hp = gbt.GbtHyperparams(n_estimators=50, policy=gbt.LeafWise(7))
    gbt.fit_gbt(subsample(full, min(sizes), 0), hp)  # jit warm-up
    print(f"{'n':>7s} {'fast ms':>9s} {'naive s':>9s} {'speedup':>8s} {'gbt s':>7s}")
    for n in sizes:
        ds = subsample(full, n, 0) if n < full.n_rows else full
        idx = build_risk_index(ds.time, ds.event)
        eta = np.random.default_rng(0).normal(size=n)
        fast = best_of(grad_hess, idx, eta, repeat=5)
        naive = best_of(grad_hess_naive, idx, eta, repeat=1) if n <= args.skip_naive_above else float("nan")
        fit = best_of(gbt.fit_gbt, ds, hp, repeat=1)
        print(f"{n:7d} {fast * 1e3:9.2f} {naive:9.2f} {naive / fast:8.0f} {fit:7.2f}")


if __name__ == "__main__":
    main()
