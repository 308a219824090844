"""Trained model vs identity baseline on the rotated-correlation family.

    python scripts/learnability_sweep.py --seeds 20 --c 1.0
"""
import argparse
import statistics
import time

from topsim.dataio import generate_synthetic
from topsim.qp import SolverConfig
from topsim.trainer import baseline_identity, evaluate, split_queries, train


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--relevant", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--test-fraction", type=float, default=0.3)
    args = p.parse_args()

    gains = []
    print("seed  trained  identity  iters  converged  seconds")
    for seed in range(args.seeds):
        ds = generate_synthetic("rotated_correlation", n=args.n, m=args.m, d=args.d,
                                relevant_per_query=args.relevant, noise=args.noise, seed=seed)
        tr, te = split_queries(ds.n, args.test_fraction, seed)
        t0 = time.perf_counter()
        res = train(ds, tr, SolverConfig(C=args.c))
        dt = time.perf_counter() - t0
        a = evaluate(ds, res.model, te).mean_top_precision
        b = evaluate(ds, baseline_identity(ds.d), te).mean_top_precision
        gains.append(a - b)
        print(f"{seed:4d}  {a:7.4f}  {b:8.4f}  {res.solution.iterations:5d}  {str(res.solution.converged):9s}  {dt:7.2f}")
    wins = sum(g > 0 for g in gains)
    print(f"wins {wins}/{len(gains)}  median gain {statistics.median(gains):.4f}")


if __name__ == "__main__":
    main()
