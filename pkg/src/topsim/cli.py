"""``topsim`` command line: train, evaluate, retrieve, synth, baseline.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure. Errors go
to stderr prefixed with ``error[input]:`` or ``error[numerical]:``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .core import RetrievalDataset
from .metrics import NoEvaluableQueries
from .qp import NumericalError, SolverConfig, WorkingSet
from .similarity import l2_normalize, preprocess, rank_scores
from .trainer import baseline_identity, evaluate, split_queries, train

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"error[input]: {message}\n")


def _write_json(doc, path=None):
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load(args) -> RetrievalDataset:
    return dataio.load_dataset(args.queries, args.database, args.relevance)


def _mean_or_none(ds, model, idx):
    try:
        return evaluate(ds, model, idx).mean_top_precision
    except NoEvaluableQueries:
        return None


def cmd_train(args) -> int:
    if not args.c > 0:
        raise InputError("C must be positive")
    ws = None
    if args.cap_per_pair is not None:
        ws = WorkingSet(args.cap_per_pair, args.refresh_every)
    try:
        cfg = SolverConfig(
            C=args.c, max_iterations=args.max_iters, rel_tol=args.rel_tol, kkt_tol=args.kkt_tol,
            step_rule=args.step_rule, working_set=ws,
        )
    except ValueError as e:
        raise InputError(str(e)) from None
    ds = _load(args)
    if ds.n < 2 or args.test_fraction == 0:
        train_idx, test_idx = list(range(ds.n)), []
    else:
        try:
            train_idx, test_idx = split_queries(ds.n, args.test_fraction, args.seed)
        except ValueError as e:
            raise InputError(str(e)) from None

    result = train(ds, train_idx, cfg, normalize=args.normalize)
    dataio.save_model(result.model, args.out)
    sol, cert = result.solution, result.certificate
    report = {
        "C": cfg.C,
        "dual_objective": sol.dual_objective,
        "primal_objective": cert.primal_objective,
        "duality_gap": cert.duality_gap,
        "relative_gap": cert.relative_gap,
        "certified": cert.certified,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "max_kkt_violation": sol.max_kkt_violation,
        "n_triplets": result.n_triplets,
        "train_queries": train_idx,
        "test_queries": test_idx,
        "train_mean_top_precision": _mean_or_none(ds, result.model, train_idx),
        "test_mean_top_precision": _mean_or_none(ds, result.model, test_idx) if test_idx else None,
        "normalize": bool(args.normalize),
        "warning": result.warning,
    }
    _write_json(report, args.report)
    return EXIT_OK


def _read_indices(path) -> list[int]:
    text = Path(path).read_text(encoding="utf-8").replace(",", " ").split()
    try:
        return [int(t) for t in text]
    except ValueError:
        raise InputError(f"{path}: query indices must be integers") from None


def cmd_evaluate(args) -> int:
    model = dataio.load_model(args.model)
    ds = _load(args)
    if model.d != ds.d:
        raise InputError(f"dimension mismatch: model d={model.d}, dataset d={ds.d}")
    idx = _read_indices(args.query_indices) if args.query_indices else list(range(ds.n))
    if not idx or min(idx) < 0 or max(idx) >= ds.n:
        raise InputError("query indices empty or out of range")
    rep = evaluate(ds, model, idx)
    print(f"mean_top_precision={rep.mean_top_precision:.6f} evaluated={len(rep.per_query)} skipped={len(rep.skipped)}")
    if args.report:
        _write_json(rep.as_dict(), args.report)
    return EXIT_OK


def _parse_row(text: str) -> np.ndarray:
    try:
        v = np.array([float(f) for f in text.split(",")])
    except ValueError:
        raise InputError(f"malformed query vector {text!r}") from None
    if not np.all(np.isfinite(v)):
        raise InputError("query vector has non-finite entries")
    return v


def cmd_retrieve(args) -> int:
    model = dataio.load_model(args.model)
    X = dataio.read_vectors(args.database)
    if args.query_vector is not None:
        z = _parse_row(args.query_vector)
    else:
        if args.queries is None:
            raise InputError("--query-index requires --queries")
        Z = dataio.read_vectors(args.queries)
        if not 0 <= args.query_index < Z.shape[0]:
            raise InputError(f"--query-index {args.query_index} out of range")
        z = Z[args.query_index]
    if z.shape[0] != model.d or X.shape[1] != model.d:
        raise InputError(f"dimension mismatch: model d={model.d}, query d={z.shape[0]}, database d={X.shape[1]}")
    if args.top < 1:
        raise InputError("--top must be >= 1")
    if model.preprocessing.get("l2_normalize"):
        z, X = l2_normalize(z), l2_normalize(X)
    ranking = rank_scores(X @ (model.W.T @ z))
    out = []
    for rank, j in enumerate(ranking.order[: args.top], start=1):
        out.append(f"{rank},{j},{ranking.scores[j]:.6f}\n")
    sys.stdout.write("".join(out))
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        ds = dataio.generate_synthetic(
            args.kind, n=args.n, m=args.m, d=args.d, relevant_per_query=args.relevant,
            noise=args.noise, seed=args.seed,
        )
    except ValueError as e:
        raise InputError(str(e)) from None
    dataio.save_dataset(ds, args.out_dir)
    return EXIT_OK


def cmd_baseline(args) -> int:
    if args.d < 1:
        raise InputError("--d must be >= 1")
    dataio.save_model(baseline_identity(args.d), args.out)
    return EXIT_OK


def _dataset_flags(p):
    p.add_argument("--queries", required=True)
    p.add_argument("--database", required=True)
    p.add_argument("--relevance", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="topsim", description="Top-precision bilinear similarity learning.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="learn W on a train split of the queries")
    _dataset_flags(p)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--kkt-tol", type=float, default=1e-6)
    p.add_argument("--step-rule", choices=("accelerated", "fixed", "backtracking"), default="accelerated")
    p.add_argument("--normalize", action="store_true", help="L2-normalize features first")
    p.add_argument("--cap-per-pair", type=int, default=None)
    p.add_argument("--refresh-every", type=int, default=50)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="mean top precision of a model")
    p.add_argument("--model", required=True)
    _dataset_flags(p)
    p.add_argument("--query-indices", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("retrieve", help="rank the database for one query")
    p.add_argument("--model", required=True)
    p.add_argument("--database", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--query-vector", default=None)
    g.add_argument("--query-index", type=int, default=None)
    p.add_argument("--queries", default=None)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--kind", choices=("separable", "rotated", "rotated_correlation"), default="separable")
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--relevant", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("baseline", help="write the identity model")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"error[numerical]: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, dataio.FormatError, NoEvaluableQueries, ValueError, OSError, IndexError) as e:
        print(f"error[input]: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
