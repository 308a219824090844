"""Pick C on a holdout split of the training queries, then report test top precision.

    python scripts/c_holdout_sweep.py --kind rotated_correlation --seed 0
"""
import argparse

from topsim.dataio import generate_synthetic
from topsim.qp import SolverConfig
from topsim.trainer import evaluate, split_queries, train


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--kind", default="rotated_correlation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--grid", type=float, nargs="+", default=[0.01, 0.1, 1.0, 10.0, 100.0])
    args = p.parse_args()

    ds = generate_synthetic(args.kind, noise=args.noise, seed=args.seed)
    train_idx, test_idx = split_queries(ds.n, 0.3, args.seed)
    fit_pos, val_pos = split_queries(len(train_idx), 0.25, args.seed + 1)
    fit = [train_idx[i] for i in fit_pos]
    val = [train_idx[i] for i in val_pos]

    scores = {}
    for C in args.grid:
        model = train(ds, fit, SolverConfig(C=C)).model
        scores[C] = evaluate(ds, model, val).mean_top_precision
        print(f"C={C:<8g} holdout top precision {scores[C]:.4f}")
    best = max(args.grid, key=lambda c: (scores[c], -c))
    final = train(ds, train_idx, SolverConfig(C=best)).model
    print(f"best C={best:g}; test top precision {evaluate(ds, final, test_idx).mean_top_precision:.4f}")


if __name__ == "__main__":
    main()
