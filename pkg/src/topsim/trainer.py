"""Training pipeline, identity baseline, evaluation and query splitting."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DualSolution, RetrievalDataset, SimilarityModel, enumerate_triplets
from .metrics import mean_top_precision
from .qp import Certificate, GramOracle, SolverConfig, certify, recover_W, solve_dual
from .similarity import l2_normalize, preprocess

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainResult:
    model: SimilarityModel
    solution: DualSolution
    certificate: Certificate
    n_triplets: int
    warning: str | None = None


def train(
    ds: RetrievalDataset,
    train_query_indices: Sequence[int],
    cfg: SolverConfig,
    normalize: bool = False,
) -> TrainResult:
    """Learn W on the training queries against the whole database."""
    idx = [int(q) for q in train_query_indices]
    if not idx:
        raise ValueError("train_query_indices must be non-empty")
    if min(idx) < 0 or max(idx) >= ds.n:
        raise IndexError("training query index out of range")
    prep = {"l2_normalize": bool(normalize)}
    if normalize:
        ds = RetrievalDataset(l2_normalize(ds.queries), l2_normalize(ds.database), ds.relevance)

    # with a working set the solver still receives every k and activates a subset
    triplets = enumerate_triplets(ds, query_indices=idx)
    warning = None
    if len(triplets) == 0:
        warning = "no relevant/irrelevant pairs among training queries; returning W = 0"
        log.warning(warning)
    solution = solve_dual(triplets, GramOracle(ds), cfg)
    learned = recover_W(solution.beta, triplets, ds, cfg.C)
    cert = certify(solution, triplets, ds, kkt_tol=cfg.kkt_tol)
    model = SimilarityModel(learned.W, provenance="trained", trained_C=float(cfg.C), preprocessing=prep)
    return TrainResult(model, solution, cert, len(triplets), warning)


def baseline_identity(d: int) -> SimilarityModel:
    if d < 1:
        raise ValueError("d must be >= 1")
    return SimilarityModel(np.eye(d), provenance="identity")


@dataclass(frozen=True)
class EvaluationReport:
    mean_top_precision: float
    per_query: dict[int, float]
    skipped: tuple[int, ...]
    provenance: str

    def as_dict(self) -> dict:
        return {
            "mean_top_precision": self.mean_top_precision,
            "per_query": {str(q): v for q, v in self.per_query.items()},
            "skipped": list(self.skipped),
            "provenance": self.provenance,
        }


def evaluate(ds: RetrievalDataset, model: SimilarityModel, test_query_indices: Sequence[int]) -> EvaluationReport:
    idx = [int(q) for q in test_query_indices]
    if not idx:
        raise ValueError("test_query_indices must be non-empty")
    rep = mean_top_precision(preprocess(ds, model), model, idx)
    return EvaluationReport(rep.mean, rep.per_query, rep.skipped, model.provenance)


def split_queries(n: int, test_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded shuffle into disjoint (train, test) query index lists, each sorted."""
    if n < 2:
        raise ValueError("need at least 2 queries to split")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    n_test = min(max(math.floor(n * test_fraction + 0.5), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return sorted(perm[n_test:].tolist()), sorted(perm[:n_test].tolist())
