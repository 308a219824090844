"""CSV dataset files, JSON model files and synthetic dataset generators."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PROVENANCES, DatasetError, RetrievalDataset, SimilarityModel, validate_dataset

FORMAT_VERSION = 1
_MODEL_FIELDS = {"format_version", "d", "W", "provenance", "trained_C", "preprocessing"}


class FormatError(ValueError):
    pass


def _read_lines(path) -> list[str]:
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.replace("\r\n", "\n").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def read_vectors(path) -> np.ndarray:
    """One comma-separated vector per line, no header."""
    rows: list[list[float]] = []
    for ln, line in enumerate(_read_lines(path), start=1):
        fields = line.split(",")
        row = []
        for col, f in enumerate(fields, start=1):
            try:
                v = float(f)
            except ValueError:
                raise FormatError(f"{path}: non-numeric field {f!r} at line {ln}, column {col}") from None
            if not math.isfinite(v):
                raise FormatError(f"{path}: non-finite field at line {ln}, column {col}")
            row.append(v)
        if rows and len(row) != len(rows[0]):
            raise FormatError(f"{path}: inconsistent dimension at line {ln}")
        rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no rows")
    return np.asarray(rows, dtype=np.float64)


def read_relevance(path) -> np.ndarray:
    rows: list[list[int]] = []
    for r, line in enumerate(_read_lines(path)):
        row = []
        for c, f in enumerate(line.split(",")):
            f = f.strip()
            if f not in ("0", "1"):
                raise FormatError(f"{path}: non-binary relevance {f!r} at ({r},{c})")
            row.append(int(f))
        if rows and len(row) != len(rows[0]):
            raise FormatError(f"{path}: inconsistent column count at line {r + 1}")
        rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no rows")
    return np.asarray(rows, dtype=np.int8)


def load_dataset(queries_path, database_path, relevance_path) -> RetrievalDataset:
    Z = read_vectors(queries_path)
    X = read_vectors(database_path)
    Y = read_relevance(relevance_path)
    try:
        return RetrievalDataset.from_raw(Z, X, Y)
    except DatasetError as e:
        raise FormatError(str(e)) from None


@dataclass(frozen=True)
class DatasetBundle:
    queries_path: Path
    database_path: Path
    relevance_path: Path
    dataset: RetrievalDataset

    @classmethod
    def from_dir(cls, directory) -> "DatasetBundle":
        d = Path(directory)
        paths = d / "queries.csv", d / "database.csv", d / "relevance.csv"
        return cls(*paths, load_dataset(*paths))


def _fmt(v: float) -> str:
    # repr is the shortest string that round-trips the double exactly
    return repr(float(v))


def save_dataset(ds: RetrievalDataset, out_dir) -> DatasetBundle:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = out / "queries.csv", out / "database.csv", out / "relevance.csv"
    for path, A in zip(paths[:2], (ds.queries, ds.database)):
        path.write_text("".join(",".join(_fmt(v) for v in row) + "\n" for row in A), encoding="utf-8")
    paths[2].write_text("".join(",".join(str(int(v)) for v in row) + "\n" for row in ds.relevance), encoding="utf-8")
    return DatasetBundle(*paths, ds)


def model_to_dict(model: SimilarityModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "d": model.d,
        "W": [float(v) for v in model.W.ravel()],
        "provenance": model.provenance,
        "trained_C": model.trained_C,
        "preprocessing": dict(sorted(model.preprocessing.items())),
    }


def model_from_dict(doc: dict) -> SimilarityModel:
    if not isinstance(doc, dict):
        raise FormatError("model document must be a JSON object")
    unknown = set(doc) - _MODEL_FIELDS
    if unknown:
        raise FormatError(f"unknown model fields: {sorted(unknown)}")
    missing = _MODEL_FIELDS - set(doc) - {"trained_C", "preprocessing"}
    if missing:
        raise FormatError(f"missing model fields: {sorted(missing)}")
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {doc['format_version']!r}, expected {FORMAT_VERSION}")
    d = doc["d"]
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise FormatError("d must be a positive integer")
    W = doc["W"]
    if not isinstance(W, list) or len(W) != d * d:
        raise FormatError(f"W must have d*d = {d * d} entries, got {len(W) if isinstance(W, list) else type(W).__name__}")
    if doc["provenance"] not in PROVENANCES:
        raise FormatError(f"unknown provenance {doc['provenance']!r}")
    prep = doc.get("preprocessing") or {}
    if set(prep) - {"l2_normalize"}:
        raise FormatError(f"unknown preprocessing flags: {sorted(set(prep) - {'l2_normalize'})}")
    try:
        return SimilarityModel(
            np.asarray(W, dtype=np.float64).reshape(d, d),
            provenance=doc["provenance"],
            trained_C=None if doc.get("trained_C") is None else float(doc["trained_C"]),
            preprocessing=prep,
        )
    except (TypeError, ValueError) as e:
        raise FormatError(str(e)) from None


def save_model(model: SimilarityModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> SimilarityModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from None
    return model_from_dict(doc)


# --- synthetic data ----------------------------------------------------------


def _check_params(n, m, d, relevant_per_query, noise):
    if min(n, m, d, relevant_per_query) < 1:
        raise ValueError("n, m, d and relevant_per_query must be >= 1")
    if relevant_per_query >= m:
        raise ValueError("relevant_per_query must be < m")
    if not noise >= 0:
        raise ValueError("noise must be >= 0")


def _separable(rng, n, m, d, r, noise):
    n_classes = max(1, min(d, m // r))
    # orthonormal class directions
    U, _ = np.linalg.qr(rng.standard_normal((d, d)))
    dirs = U.T[:n_classes]
    q_class = rng.integers(n_classes, size=n)
    Z = dirs[q_class].copy()

    X = np.empty((m, d))
    db_class = np.full(m, -1)
    n_member = n_classes * r
    db_class[:n_member] = np.repeat(np.arange(n_classes), r)
    X[:n_member] = dirs[db_class[:n_member]] * rng.uniform(1.0, 2.0, size=(n_member, 1))
    # distractors: norm <= 0.5, so their inner product with any unit query is <= 0.5 < 1
    g = rng.standard_normal((m - n_member, d))
    X[n_member:] = 0.5 * rng.uniform(0.0, 1.0, size=(m - n_member, 1)) * g / np.linalg.norm(g, axis=1, keepdims=True)

    perm = rng.permutation(m)
    X, db_class = X[perm], db_class[perm]
    Y = (q_class[:, None] == db_class[None, :]).astype(np.int8)
    if noise > 0:
        Z = Z + noise * rng.standard_normal(Z.shape)
        X = X + noise * rng.standard_normal(X.shape)
    return Z, X, Y, None


def _rotated(rng, n, m, d, r, noise):
    Q1, _ = np.linalg.qr(rng.standard_normal((d, d)))
    Q2, _ = np.linalg.qr(rng.standard_normal((d, d)))
    W_star = Q1 @ np.diag(rng.uniform(0.5, 2.0, size=d)) @ Q2.T
    Z = rng.standard_normal((n, d))
    X = rng.standard_normal((m, d))
    S = Z @ W_star @ X.T
    top = np.argsort(-S, axis=1, kind="stable")[:, :r]
    Y = np.zeros((n, m), dtype=np.int8)
    np.put_along_axis(Y, top, 1, axis=1)
    if noise > 0:
        Z = Z + noise * rng.standard_normal(Z.shape)
        X = X + noise * rng.standard_normal(X.shape)
    return Z, X, Y, W_star


def generate_synthetic(
    kind: str,
    n: int = 40,
    m: int = 100,
    d: int = 16,
    relevant_per_query: int = 10,
    noise: float = 0.0,
    seed: int = 0,
    return_hidden: bool = False,
):
    """Seeded synthetic retrieval dataset.

    ``separable``: queries are class directions, relevant items are scaled
    copies of their class direction, irrelevant items lie on other
    (orthogonal) directions or have norm <= 0.5; at ``noise=0`` the plain
    inner product separates relevant from irrelevant items strictly.

    ``rotated_correlation``: Gaussian features labelled by the top
    ``relevant_per_query`` items under a hidden well-conditioned bilinear
    form ``W*``, so the inner product ranks poorly. With ``return_hidden``
    the pair ``(dataset, W*)`` is returned (``W*`` is None for separable).
    """
    _check_params(n, m, d, relevant_per_query, noise)
    rng = np.random.default_rng(seed)
    if kind == "separable":
        Z, X, Y, hidden = _separable(rng, n, m, d, relevant_per_query, noise)
    elif kind in ("rotated_correlation", "rotated"):
        Z, X, Y, hidden = _rotated(rng, n, m, d, relevant_per_query, noise)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    ds = RetrievalDataset(Z, X, Y)
    assert validate_dataset(ds).ok
    return (ds, hidden) if return_hidden else ds
