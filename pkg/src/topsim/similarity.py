"""Bilinear scoring ``s(z, x) = z^T W x`` and database ranking."""
from __future__ import annotations

import numpy as np

from .core import RankingResult, RetrievalDataset, SimilarityModel


def _check_vector(v, d: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != d:
        raise ValueError(f"dimension mismatch: {name} has shape {v.shape}, model expects ({d},)")
    return v


def score(z, x, model: SimilarityModel) -> float:
    z = _check_vector(z, model.d, "query vector z")
    x = _check_vector(x, model.d, "database vector x")
    # row-major accumulation: sum_a z_a * (W[a] . x)
    return float(np.dot(z, model.W @ x))


def score_all(z, ds: RetrievalDataset, model: SimilarityModel) -> np.ndarray:
    """Scores of ``z`` against every database vector, in database order."""
    z = _check_vector(z, model.d, "query vector z")
    if ds.d != model.d:
        raise ValueError(f"dimension mismatch: database has d={ds.d}, model has d={model.d}")
    return ds.database @ (model.W.T @ z)


def score_matrix(ds: RetrievalDataset, model: SimilarityModel) -> np.ndarray:
    """n x m matrix of all query/database scores."""
    if ds.d != model.d:
        raise ValueError(f"dimension mismatch: dataset has d={ds.d}, model has d={model.d}")
    return (ds.queries @ model.W) @ ds.database.T


def rank_scores(scores) -> RankingResult:
    scores = np.asarray(scores, dtype=np.float64)
    # stable sort on negated scores keeps ties in ascending index order
    order = np.argsort(-scores, kind="stable")
    return RankingResult(order, scores)


def rank_database(z, ds: RetrievalDataset, model: SimilarityModel) -> RankingResult:
    return rank_scores(score_all(z, ds, model))


def l2_normalize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    norms = np.linalg.norm(a, axis=-1, keepdims=True)
    return np.divide(a, norms, out=np.zeros_like(a), where=norms > 0)


def preprocess(ds: RetrievalDataset, model: SimilarityModel) -> RetrievalDataset:
    """Apply the feature preprocessing recorded in ``model`` to ``ds``."""
    if model.preprocessing.get("l2_normalize"):
        return RetrievalDataset(l2_normalize(ds.queries), l2_normalize(ds.database), ds.relevance)
    return ds
