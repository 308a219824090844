"""Top-irrelevant item, top precision, hinge loss and primal objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import RetrievalDataset, SimilarityModel
from .similarity import score_matrix


class NoEvaluableQueries(ValueError):
    pass


def _pair(scores, relevance_row):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(relevance_row)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"length mismatch: scores {s.shape} vs relevance {y.shape}")
    return s, y


def top_irrelevant_index(scores, relevance_row) -> int | None:
    """Highest-scoring irrelevant item (lowest index on ties), or None."""
    s, y = _pair(scores, relevance_row)
    irr = np.flatnonzero(y == 0)
    if irr.size == 0:
        return None
    # argmax returns the first maximum, and irr is ascending
    return int(irr[np.argmax(s[irr])])


def top_precision_counts(scores, relevance_row) -> tuple[int, int]:
    """``(relevant items strictly above the top irrelevant, relevant items)``."""
    s, y = _pair(scores, relevance_row)
    rel = y == 1
    n_rel = int(rel.sum())
    phi = top_irrelevant_index(s, y)
    if phi is None:
        return n_rel, n_rel
    return int(np.sum(s[rel] > s[phi])), n_rel


def top_precision(scores, relevance_row) -> float | None:
    """Fraction of relevant items ranked strictly before the top irrelevant one.

    Returns None when the row has no relevant item (undefined), and 1.0 when
    it has no irrelevant item.
    """
    above, total = top_precision_counts(scores, relevance_row)
    if total == 0:
        return None
    return above / total


@dataclass(frozen=True)
class TopPrecisionReport:
    mean: float
    per_query: dict[int, float]
    skipped: tuple[int, ...]


def mean_top_precision(
    ds: RetrievalDataset, model: SimilarityModel, query_subset: Sequence[int] | None = None
) -> TopPrecisionReport:
    idx = list(range(ds.n)) if query_subset is None else [int(q) for q in query_subset]
    for q in idx:
        if not 0 <= q < ds.n:
            raise IndexError(f"query index {q} out of range for n={ds.n}")
    S = score_matrix(ds.subset_queries(idx), model) if idx else np.zeros((0, ds.m))
    per_query: dict[int, float] = {}
    skipped = []
    for row, q in enumerate(idx):
        tp = top_precision(S[row], ds.relevance[q])
        if tp is None:
            skipped.append(q)
        else:
            per_query[q] = tp
    if not per_query:
        raise NoEvaluableQueries("no evaluable queries")
    total = 0.0
    for q in idx:
        if q in per_query:
            total += per_query[q]
    return TopPrecisionReport(total / len(per_query), per_query, tuple(skipped))


def _pair_losses(S: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hinge loss of every relevant pair, given the score matrix S."""
    irr_max = np.where(Y == 0, S, -np.inf).max(axis=1)
    qi, dj = np.nonzero(Y == 1)
    losses = np.maximum(0.0, irr_max[qi] - S[qi, dj] + 1.0)
    # pairs of queries without irrelevant items carry no constraint
    losses[~np.isfinite(irr_max[qi])] = 0.0
    return qi, dj, losses


def hinge_loss(ds: RetrievalDataset, model: SimilarityModel, i: int, j: int) -> float:
    """``max(0, max_{k: y_ik=0} z_i^T W (x_k - x_j) + 1)``; 0 if query i has no irrelevant item."""
    if ds.relevance[i, j] != 1:
        raise ValueError(f"not a relevant pair: ({i},{j})")
    z = ds.queries[i] @ model.W
    s = ds.database @ z
    irr = ds.relevance[i] == 0
    if not irr.any():
        return 0.0
    return float(max(0.0, s[irr].max() - s[j] + 1.0))


def hinge_losses(
    ds: RetrievalDataset, model: SimilarityModel, query_subset: Sequence[int] | None = None
) -> dict[tuple[int, int], float]:
    """Hinge loss for every relevant pair of the (optionally restricted) queries."""
    idx = np.arange(ds.n) if query_subset is None else np.asarray(sorted(set(query_subset)), dtype=np.int64)
    sub = ds.subset_queries(idx)
    qi, dj, losses = _pair_losses(score_matrix(sub, model), sub.relevance)
    return {(int(idx[a]), int(b)): float(l) for a, b, l in zip(qi, dj, losses)}


def primal_objective(
    ds: RetrievalDataset,
    model: SimilarityModel,
    C: float,
    query_subset: Sequence[int] | None = None,
) -> float:
    """``0.5 * ||W||_F^2 + C * sum of hinge losses`` over relevant pairs."""
    if not C > 0:
        raise ValueError("C must be positive")
    losses = hinge_losses(ds, model, query_subset)
    return 0.5 * float(np.sum(model.W**2)) + C * float(sum(losses.values()))
