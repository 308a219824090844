"""Dual quadratic program over triplet multipliers.

The dual is

    max_beta  sum_t beta_t - 1/2 sum_{t,t'} beta_t beta_t' G(t, t')
    s.t.      beta >= 0,  sum_k beta_ijk <= C  for every pair (i, j)

with ``G(t, t') = (z_i . z_i') ((x_j - x_k) . (x_j' - x_k'))``. The solver is
projected-gradient ascent with an exact per-pair projection onto the capped
simplex, optionally accelerated (monotone FISTA: the extrapolated step is only
kept when it does not lower the objective, otherwise momentum restarts). ``G`` is never formed: with ``W = sum_t beta_t z_i (x_j - x_k)^T``,
``(G beta)_t = z_i^T W (x_j - x_k)`` and ``beta^T G beta = ||W||_F^2``.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .core import DualSolution, RetrievalDataset, SimilarityModel, TripletSet
from .metrics import hinge_losses

DENSE_GRAM_LIMIT = 2000
_DIFF_CACHE_SIZE = 100_000
_POWER_STEPS = 50
_SAFETY = 1.01
_TRUNCATE_BELOW = 1e-12


class NumericalError(ArithmeticError):
    pass


class GramOracle:
    """Factored access to the dual Hessian.

    Holds the query Gram ``Z Z^T``; difference dot products are computed on
    demand behind a lock-protected LRU cache.
    """

    def __init__(self, ds: RetrievalDataset):
        self.ds = ds
        with np.errstate(over="ignore", invalid="ignore"):
            self.query_gram = ds.queries @ ds.queries.T
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def check_finite(self) -> None:
        if not (np.all(np.isfinite(self.query_gram)) and np.all(np.isfinite(self.ds.database))):
            raise NumericalError("numerical overflow in Gram")
        diffs_bound = 2.0 * np.max(np.abs(self.ds.database)) if self.ds.m else 0.0
        if not np.isfinite(diffs_bound**2 * self.ds.d):
            raise NumericalError("numerical overflow in Gram")

    def diff_dot(self, j: int, k: int, j2: int, k2: int) -> float:
        key = (j, k, j2, k2) if (j, k) <= (j2, k2) else (j2, k2, j, k)
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        X = self.ds.database
        val = float(np.dot(X[j] - X[k], X[j2] - X[k2]))
        with self._lock:
            self._cache[key] = val
            if len(self._cache) > _DIFF_CACHE_SIZE:
                self._cache.popitem(last=False)
        return val

    def dense(self, triplets: TripletSet, allow_large: bool = False) -> np.ndarray:
        """Full T x T Gram matrix; refused above DENSE_GRAM_LIMIT unless forced."""
        T = len(triplets)
        if T > DENSE_GRAM_LIMIT and not allow_large:
            raise MemoryError(f"refusing to materialize a {T}x{T} Gram matrix")
        X = self.ds.database
        D = X[triplets.j] - X[triplets.k]
        return self.query_gram[np.ix_(triplets.i, triplets.i)] * (D @ D.T)


def gram_entry(t, t2, oracle: GramOracle) -> float:
    i, j, k = (int(a) for a in t)
    i2, j2, k2 = (int(a) for a in t2)
    return float(oracle.query_gram[i, i2]) * oracle.diff_dot(j, k, j2, k2)


# --- capped simplex projection -------------------------------------------


class _GroupLayout:
    """Padded (groups x max_size) view of contiguous groups for vectorized projection."""

    def __init__(self, starts: np.ndarray):
        starts = np.asarray(starts, dtype=np.int64)
        self.starts = starts
        self.sizes = np.diff(starts)
        self.n_groups = self.sizes.shape[0]
        self.width = int(self.sizes.max()) if self.n_groups else 0
        self.gid = np.repeat(np.arange(self.n_groups), self.sizes)
        self.col = np.arange(starts[-1]) - np.repeat(starts[:-1], self.sizes)
        self.valid = np.arange(self.width)[None, :] < self.sizes[:, None]

    def padded(self, v: np.ndarray, fill: float) -> np.ndarray:
        P = np.full((self.n_groups, self.width), fill)
        P[self.gid, self.col] = v
        return P

    def sums(self, v: np.ndarray) -> np.ndarray:
        return np.bincount(self.gid, weights=v, minlength=self.n_groups)

    def project(self, v: np.ndarray, C: float) -> np.ndarray:
        out = np.maximum(v, 0.0)
        if self.n_groups == 0:
            return out
        over = self.sums(out) > C
        if not over.any():
            return out
        rows = np.flatnonzero(over)
        P = self.padded(v, -np.inf)[rows]
        P = -np.sort(-P, axis=1)
        valid = self.valid[rows]
        P[~valid] = 0.0
        cs = np.cumsum(P, axis=1)
        r = np.arange(1, self.width + 1)[None, :]
        cond = valid & (P - (cs - C) / r > 0)
        rho = np.max(np.where(cond, r, 0), axis=1)
        theta = (cs[np.arange(rows.size), rho - 1] - C) / rho
        theta_g = np.zeros(self.n_groups)
        theta_g[rows] = theta
        sel = over[self.gid]
        out[sel] = np.maximum(v[sel] - theta_g[self.gid[sel]], 0.0)
        return out


def project_capped_simplex(v, C: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{u >= 0, sum(u) <= C}``."""
    if not C > 0:
        raise ValueError("C must be positive")
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return v.copy()
    return _GroupLayout(np.array([0, v.size])).project(v, C)


def project_groups(v, triplets: TripletSet, C: float) -> np.ndarray:
    """Project every ``(i, j)`` group of ``v`` onto its capped simplex."""
    return _GroupLayout(triplets.group_starts).project(np.asarray(v, dtype=np.float64), C)


# --- objective, W recovery -----------------------------------------------


def _weights_matrix(beta, triplets: TripletSet, n: int, m: int) -> np.ndarray:
    """n x m matrix B with ``W = Z^T B X``: +beta at (i, j), -beta at (i, k)."""
    beta = np.asarray(beta, dtype=np.float64)
    B = np.bincount(triplets.i * m + triplets.j, weights=beta, minlength=n * m)
    B -= np.bincount(triplets.i * m + triplets.k, weights=beta, minlength=n * m)
    return B.reshape(n, m)


def _W_from_beta(beta, triplets: TripletSet, ds: RetrievalDataset) -> np.ndarray:
    B = _weights_matrix(beta, triplets, ds.n, ds.m)
    return ds.queries.T @ B @ ds.database


def recover_W(
    beta, triplets: TripletSet, ds: RetrievalDataset, C: float | None = None
) -> SimilarityModel:
    """``W = sum_t beta_t z_i (x_j - x_k)^T``."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (len(triplets),):
        raise ValueError(f"beta has shape {beta.shape}, expected ({len(triplets)},)")
    if len(triplets) == 0:
        W = np.zeros((ds.d, ds.d))
    else:
        W = _W_from_beta(beta, triplets, ds)
    return SimilarityModel(W, provenance="trained", trained_C=C)


def dual_objective(beta, triplets: TripletSet, oracle: GramOracle) -> float:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (len(triplets),):
        raise ValueError(f"beta has shape {beta.shape}, expected ({len(triplets)},)")
    if len(triplets) == 0:
        return 0.0
    W = _W_from_beta(beta, triplets, oracle.ds)
    return float(np.sum(beta) - 0.5 * np.sum(W * W))


# --- solver ----------------------------------------------------------------


@dataclass(frozen=True)
class WorkingSet:
    cap_per_pair: int
    refresh_every: int = 50

    def __post_init__(self):
        if self.cap_per_pair < 1 or self.refresh_every < 1:
            raise ValueError("working set parameters must be >= 1")


@dataclass(frozen=True)
class SolverConfig:
    C: float = 1.0
    max_iterations: int = 10_000
    rel_tol: float = 1e-8
    kkt_tol: float = 1e-6
    step_rule: str = "accelerated"
    working_set: WorkingSet | None = None

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not (self.rel_tol > 0 and self.kkt_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.step_rule not in ("fixed", "backtracking", "accelerated"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


class _Problem:
    """Dual restricted to a subset of triplet positions."""

    def __init__(self, triplets: TripletSet, positions: np.ndarray, ds: RetrievalDataset):
        self.positions = positions
        self.i = triplets.i[positions]
        self.j = triplets.j[positions]
        self.k = triplets.k[positions]
        gid = triplets.group_index[positions]
        change = np.flatnonzero(np.diff(gid)) + 1
        self.layout = _GroupLayout(np.concatenate([[0], change, [positions.size]]))
        self.ds = ds
        self.n, self.m = ds.n, ds.m
        self.ij = self.i * self.m + self.j
        self.ik = self.i * self.m + self.k

    def W(self, beta: np.ndarray) -> np.ndarray:
        size = self.n * self.m
        B = np.bincount(self.ij, weights=beta, minlength=size) - np.bincount(self.ik, weights=beta, minlength=size)
        W = self.ds.queries.T @ B.reshape(self.n, self.m) @ self.ds.database
        if not np.all(np.isfinite(W)):
            raise NumericalError("numerical overflow in Gram")
        return W

    def G_times(self, W: np.ndarray) -> np.ndarray:
        S = (self.ds.queries @ W) @ self.ds.database.T
        flat = S.ravel()
        return flat[self.ij] - flat[self.ik]

    def objective(self, beta: np.ndarray, W: np.ndarray) -> float:
        return float(np.sum(beta) - 0.5 * np.sum(W * W))

    def kkt(self, beta: np.ndarray, grad: np.ndarray, C: float) -> float:
        if beta.size == 0:
            return 0.0
        return float(np.max(np.abs(beta - self.layout.project(beta + grad, C))))

    def lipschitz(self) -> float:
        T = self.positions.size
        v = np.full(T, 1.0 / np.sqrt(T))
        lam = 0.0
        for _ in range(_POWER_STEPS):
            w = self.G_times(self.W(v))
            lam = float(v @ w)
            norm = np.linalg.norm(w)
            if norm == 0.0:
                return 0.0
            v = w / norm
        return lam * _SAFETY


def _initial_working_set(triplets: TripletSet, cap: int) -> np.ndarray:
    layout = _GroupLayout(triplets.group_starts)
    return np.flatnonzero(layout.col < cap)


def _refresh_working_set(triplets: TripletSet, grad: np.ndarray, beta: np.ndarray, cap: int) -> np.ndarray:
    layout = _GroupLayout(triplets.group_starts)
    P = layout.padded(grad, -np.inf)
    order = np.argsort(-P, axis=1, kind="stable")
    rank = np.empty_like(order)
    rank[np.arange(order.shape[0])[:, None], order] = np.arange(order.shape[1])[None, :]
    keep = rank[layout.gid, layout.col] < cap
    return np.flatnonzero(keep | (beta > 0))


def solve_dual(
    triplets: TripletSet,
    oracle: GramOracle,
    cfg: SolverConfig,
    beta0=None,
) -> DualSolution:
    """Projected-gradient ascent on the dual.

    ``step_rule``: ``"accelerated"`` (default) adds restarted momentum,
    ``"fixed"`` is plain 1/L ascent, ``"backtracking"`` keeps any step
    reduction found by halving. Every rule yields a non-decreasing objective.

    Convergence requires both a relative objective change below ``rel_tol``
    and a projected-gradient KKT residual below ``kkt_tol``. Without
    convergence the last (best) iterate is returned with ``converged=False``.
    """
    T = len(triplets)
    C = float(cfg.C)
    if T == 0:
        return DualSolution(np.zeros(0), C, 0.0, 0, True, 0.0, np.zeros(1))
    oracle.check_finite()
    ds = oracle.ds

    full = _Problem(triplets, np.arange(T), ds)
    beta = np.zeros(T) if beta0 is None else full.layout.project(np.asarray(beta0, dtype=np.float64), C)
    ws = cfg.working_set
    active = np.arange(T) if ws is None else _initial_working_set(triplets, ws.cap_per_pair)
    if ws is not None and beta0 is not None:
        active = np.union1d(active, np.flatnonzero(beta > 0))
    prob = full if active.size == T else _Problem(triplets, active, ds)

    def step_for(p: _Problem) -> float:
        L = p.lipschitz()
        return 1.0 / L if L > 1e-300 else 1e12

    step = step_for(prob)
    b = beta[active]
    W = prob.W(b)
    obj = prob.objective(b, W)
    trace = [obj]
    it = 0
    converged = False
    kkt = np.inf

    accelerated = cfg.step_rule == "accelerated"
    y, yW, momentum, prev = b, W, 1.0, b
    while it < cfg.max_iterations:
        grad = 1.0 - prob.G_times(yW)
        t = step
        accepted = False
        for _ in range(60):
            nb = prob.layout.project(y + t * grad, C)
            nW = prob.W(nb)
            nobj = prob.objective(nb, nW)
            if nobj >= obj:
                accepted = True
                break
            if accelerated and y is not b:
                # the extrapolated point overshot: restart momentum from the best iterate
                y, yW, momentum = b, W, 1.0
                grad = 1.0 - prob.G_times(yW)
                continue
            t *= 0.5
        if cfg.step_rule == "backtracking" or t < step:
            step = t
        it += 1
        if accepted:
            rel = abs(nobj - obj) / max(1.0, abs(nobj))
            prev, b, W, obj = b, nb, nW, nobj
            trace.append(obj)
        else:
            rel = 0.0
        if accelerated and accepted:
            m_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum**2))
            y = b + ((momentum - 1.0) / m_next) * (b - prev)
            momentum = m_next
            yW = prob.W(y)
        else:
            y, yW = b, W

        refresh_due = ws is not None and it % ws.refresh_every == 0
        if rel < cfg.rel_tol or refresh_due:
            beta = np.zeros(T)
            beta[active] = b
            full_grad = 1.0 - full.G_times(W)
            kkt = full.kkt(beta, full_grad, C)
            if rel < cfg.rel_tol and kkt < cfg.kkt_tol:
                converged = True
                break
            if ws is not None and (refresh_due or rel < cfg.rel_tol):
                new_active = _refresh_working_set(triplets, full_grad, beta, ws.cap_per_pair)
                if not np.array_equal(new_active, active):
                    active = new_active
                    prob = full if active.size == T else _Problem(triplets, active, ds)
                    step = step_for(prob)
                    b = beta[active]
                    y, yW, momentum, prev = b, W, 1.0, b
                elif not accepted:
                    break
            elif not accepted:
                break

    beta = np.zeros(T)
    beta[active] = b
    beta[beta < _TRUNCATE_BELOW] = 0.0
    W = full.W(beta)
    kkt = full.kkt(beta, 1.0 - full.G_times(W), C)
    return DualSolution(
        beta=beta,
        C=C,
        dual_objective=full.objective(beta, W),
        iterations=it,
        converged=converged,
        max_kkt_violation=kkt,
        objective_trace=np.asarray(trace),
    )


# --- certificates ------------------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    primal_objective: float
    dual_objective: float
    duality_gap: float
    relative_gap: float
    max_complementarity: float
    max_constraint_violation: float
    certified: bool
    alpha: dict = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict:
        return {
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "duality_gap": self.duality_gap,
            "relative_gap": self.relative_gap,
            "max_complementarity": self.max_complementarity,
            "max_constraint_violation": self.max_constraint_violation,
            "certified": self.certified,
        }


def certify(
    solution: DualSolution,
    triplets: TripletSet,
    ds: RetrievalDataset,
    kkt_tol: float = 1e-6,
    gap_tol: float = 1e-4,
) -> Certificate:
    """Duality gap and complementary-slackness residuals of a dual point.

    The slack of pair (i, j) is its hinge loss under the recovered W, and
    ``alpha_ij = C - sum_k beta_ijk``. Complementarity is checked as
    ``alpha_ij * xi_ij ~ 0`` and ``beta_ijk * (xi_ij - violation_ijk) ~ 0``.
    """
    C = solution.C
    beta = np.asarray(solution.beta)
    model = recover_W(beta, triplets, ds, C)
    W = model.W
    dual = float(np.sum(beta) - 0.5 * np.sum(W * W))
    queries = np.unique(triplets.i)
    xi = hinge_losses(ds, model, queries) if len(triplets) else {}
    primal = 0.5 * float(np.sum(W * W)) + C * float(sum(xi.values()))
    gap = primal - dual

    comp = 0.0
    alpha = {}
    violation = 0.0
    if len(triplets):
        layout = _GroupLayout(triplets.group_starts)
        sums = layout.sums(beta)
        S = (ds.queries @ W) @ ds.database.T
        viol = 1.0 + S[triplets.i, triplets.k] - S[triplets.i, triplets.j]
        xi_t = np.array([xi[(int(a), int(b))] for a, b in zip(triplets.i, triplets.j)])
        comp = float(np.max(beta * np.abs(xi_t - viol)))
        for g, (a, b) in enumerate(zip(triplets.group_starts[:-1], triplets.group_starts[1:])):
            pair = (int(triplets.i[a]), int(triplets.j[a]))
            alpha[pair] = C - float(sums[g])
            comp = max(comp, max(alpha[pair], 0.0) * xi[pair])
        violation = float(max(np.max(-beta), np.max(sums - C), 0.0))
    rel_gap = gap / max(1.0, abs(dual))
    certified = rel_gap < gap_tol and comp < kkt_tol and violation < kkt_tol
    return Certificate(primal, dual, gap, rel_gap, comp, violation, certified, alpha)
