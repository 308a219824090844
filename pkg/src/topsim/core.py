"""Shared domain types: datasets, similarity models, triplets and dual solutions.

Indices are 0-based throughout. All arrays held by these types are marked
read-only after construction so instances can be shared freely.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

PROVENANCES = ("trained", "identity", "external")


class DatasetError(ValueError):
    """Raised when a dataset violates its invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True, eq=False)
class RetrievalDataset:
    """Queries ``Z`` (n x d), database ``X`` (m x d) and binary relevance ``Y`` (n x m).

    Use :meth:`from_raw` to build one from untrusted input; the constructor
    assumes well-formed arrays and only freezes them.
    """

    queries: np.ndarray
    database: np.ndarray
    relevance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "queries", _frozen(np.asarray(self.queries, dtype=np.float64)))
        object.__setattr__(self, "database", _frozen(np.asarray(self.database, dtype=np.float64)))
        object.__setattr__(self, "relevance", _frozen(np.asarray(self.relevance, dtype=np.int8)))

    @classmethod
    def from_raw(cls, queries, database, relevance) -> "RetrievalDataset":
        report = validate_dataset(queries, database, relevance)
        if not report.ok:
            raise DatasetError("; ".join(report.violations))
        return cls(queries, database, relevance)

    @property
    def n(self) -> int:
        return self.queries.shape[0]

    @property
    def m(self) -> int:
        return self.database.shape[0]

    @property
    def d(self) -> int:
        return self.queries.shape[1]

    def subset_queries(self, indices: Sequence[int]) -> "RetrievalDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return RetrievalDataset(self.queries[idx], self.database, self.relevance[idx])


def _rows(vectors, kind: str, violations: list[str]) -> list[np.ndarray] | None:
    try:
        rows = [np.asarray(v, dtype=np.float64) for v in vectors]
    except (TypeError, ValueError):
        violations.append(f"non-numeric {kind} entries")
        return None
    for r, row in enumerate(rows):
        if row.ndim != 1:
            violations.append(f"{kind} {r} is not a vector")
        elif not np.all(np.isfinite(row)):
            violations.append(f"non-finite value in {kind} {r}")
    return rows


def validate_dataset(queries, database=None, relevance=None) -> ValidationReport:
    """Check every dataset invariant and list all violations found.

    Accepts either a :class:`RetrievalDataset` or the three raw components
    (sequences of vectors and an n x m relevance table).
    """
    if isinstance(queries, RetrievalDataset):
        queries, database, relevance = queries.queries, queries.database, queries.relevance
    violations: list[str] = []
    zs = _rows(queries, "query", violations)
    xs = _rows(database, "database vector", violations)
    if zs is not None and len(zs) < 1:
        violations.append("no queries (n must be >= 1)")
    if xs is not None and len(xs) < 1:
        violations.append("empty database (m must be >= 1)")

    lengths = [row.shape[0] for rows in (xs or [], zs or []) for row in rows if row.ndim == 1]
    # the dimension is the most common vector length; ties favour the database
    d = Counter(lengths).most_common(1)[0][0] if lengths else None
    if d is not None and d < 1:
        violations.append("feature dimension must be >= 1")
    for kind, rows in (("query", zs), ("database vector", xs)):
        for r, row in enumerate(rows or []):
            if row.ndim == 1 and row.shape[0] != d:
                violations.append(f"dimension mismatch at {kind} {r}")

    n = len(zs) if zs is not None else None
    m = len(xs) if xs is not None else None
    rel_rows = list(relevance) if relevance is not None else []
    if n is not None and len(rel_rows) != n:
        violations.append(f"relevance has {len(rel_rows)} rows, expected {n}")
    for r, row in enumerate(rel_rows):
        row = list(np.atleast_1d(np.asarray(row)))
        if m is not None and len(row) != m:
            violations.append(f"relevance row {r} has {len(row)} columns, expected {m}")
        for c, v in enumerate(row):
            if not (v == 0 or v == 1) or isinstance(v, (bool, np.bool_)):
                violations.append(f"non-binary relevance at ({r},{c})")
    return ValidationReport(tuple(violations))


@dataclass(frozen=True, eq=False)
class SimilarityModel:
    """Bilinear similarity ``s(z, x) = z @ W @ x``."""

    W: np.ndarray
    provenance: str = "external"
    trained_C: float | None = None
    preprocessing: dict = field(default_factory=dict)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 1:
            raise ValueError(f"W must be a non-empty square matrix, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("W has non-finite entries")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "identity" and not np.array_equal(W, np.eye(W.shape[0])):
            raise ValueError("identity provenance requires W == I")
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "preprocessing", dict(self.preprocessing))

    @property
    def d(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True, eq=False)
class TripletSet:
    """Index triples ``(i, j, k)`` with ``y_ij = 1`` and ``y_ik = 0``.

    Triples are stored lexicographically; ``group_starts`` gives the first
    position of each ``(i, j)`` group and ``group_starts[-1] == len(self)``.
    """

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    group_starts: np.ndarray

    def __post_init__(self):
        for name in ("i", "j", "k", "group_starts"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64)))

    def __len__(self) -> int:
        return int(self.i.shape[0])

    def __iter__(self) -> Iterator[tuple[int, int, int]]:
        return iter(self.triplets)

    @property
    def triplets(self) -> list[tuple[int, int, int]]:
        return list(zip(self.i.tolist(), self.j.tolist(), self.k.tolist()))

    @property
    def n_groups(self) -> int:
        return int(self.group_starts.shape[0]) - 1

    @property
    def groups(self) -> dict[tuple[int, int], range]:
        s = self.group_starts.tolist()
        return {(int(self.i[a]), int(self.j[a])): range(a, b) for a, b in zip(s[:-1], s[1:])}

    @property
    def group_index(self) -> np.ndarray:
        """Group id of every triplet position."""
        sizes = np.diff(self.group_starts)
        return np.repeat(np.arange(sizes.shape[0]), sizes)

    @classmethod
    def empty(cls) -> "TripletSet":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, np.zeros(1, dtype=np.int64))


def enumerate_triplets(
    ds: RetrievalDataset,
    cap_per_pair: int | None = None,
    query_indices: Sequence[int] | None = None,
) -> TripletSet:
    """All ``(i, j, k)`` with ``y_ij = 1, y_ik = 0`` in lexicographic order.

    With ``cap_per_pair`` only the first that many ``k`` (index order) are
    kept per pair. ``query_indices`` restricts ``i`` to a subset of queries.
    """
    if cap_per_pair is not None and cap_per_pair < 1:
        raise ValueError("cap_per_pair must be >= 1")
    Y = ds.relevance
    rows = range(ds.n) if query_indices is None else sorted(set(int(q) for q in query_indices))
    I, J, K, starts = [], [], [], [0]
    for i in rows:
        rel = np.flatnonzero(Y[i] == 1)
        irr = np.flatnonzero(Y[i] == 0)
        if cap_per_pair is not None:
            irr = irr[:cap_per_pair]
        if irr.size == 0:
            continue
        for j in rel:
            I.append(np.full(irr.size, i))
            J.append(np.full(irr.size, j))
            K.append(irr)
            starts.append(starts[-1] + irr.size)
    if not I:
        return TripletSet.empty()
    return TripletSet(np.concatenate(I), np.concatenate(J), np.concatenate(K), np.asarray(starts))


@dataclass(frozen=True, eq=False)
class DualSolution:
    """Multipliers ``beta`` aligned with a :class:`TripletSet`.

    ``objective_trace`` holds the dual objective after every accepted
    iteration (starting with the initial point).
    """

    beta: np.ndarray
    C: float
    dual_objective: float
    iterations: int
    converged: bool
    max_kkt_violation: float
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(np.asarray(self.beta, dtype=np.float64)))
        object.__setattr__(self, "objective_trace", _frozen(np.asarray(self.objective_trace, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class RankingResult:
    order: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "order", _frozen(np.asarray(self.order, dtype=np.int64)))
        object.__setattr__(self, "scores", _frozen(np.asarray(self.scores, dtype=np.float64)))
