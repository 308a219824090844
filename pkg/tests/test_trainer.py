import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topsim.core import RetrievalDataset
from topsim.dataio import generate_synthetic
from topsim.metrics import hinge_losses, primal_objective
from topsim.qp import SolverConfig
from topsim.similarity import score
from topsim.trainer import baseline_identity, evaluate, split_queries, train


def _toy():
    return RetrievalDataset([[1.0]], [[2.0], [1.0]], [[1, 0]])


def test_train_toy():
    r = train(_toy(), [0], SolverConfig(C=0.5))
    assert r.model.W.tolist() == [[0.5]]
    assert r.model.provenance == "trained" and r.model.trained_C == 0.5
    assert r.certificate.certified
    assert r.solution.dual_objective == 0.375


def test_train_without_triplets_warns():
    ds = RetrievalDataset([[1.0], [2.0]], [[2.0], [1.0]], [[1, 1], [1, 0]])
    r = train(ds, [0], SolverConfig())
    assert r.warning is not None and r.n_triplets == 0
    assert np.all(r.model.W == 0)


def test_train_rejects_bad_indices():
    with pytest.raises(ValueError):
        train(_toy(), [], SolverConfig())
    with pytest.raises(IndexError):
        train(_toy(), [3], SolverConfig())


def test_train_separable_small_large_C():
    ds = generate_synthetic("separable", n=10, m=30, d=6, relevant_per_query=5, seed=7)
    r = train(ds, range(10), SolverConfig(C=1000.0))
    assert max(hinge_losses(ds, r.model).values()) < 1e-3
    rep = evaluate(ds, r.model, range(10))
    assert rep.mean_top_precision == 1.0


def test_train_deterministic():
    ds = generate_synthetic("rotated_correlation", n=10, m=30, d=5, relevant_per_query=4, seed=3)
    a = train(ds, range(7), SolverConfig(C=1.0)).model.W
    b = train(ds, range(7), SolverConfig(C=1.0)).model.W
    assert a.tobytes() == b.tobytes()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.05, 1.0, 20.0]))
def test_train_never_worse_than_zero_model(seed, C):
    ds = generate_synthetic("rotated_correlation", n=4, m=10, d=3, relevant_per_query=3, noise=0.2, seed=seed)
    r = train(ds, range(ds.n), SolverConfig(C=C))
    zero = C * sum(int(row.sum()) for row in ds.relevance if (row == 0).any())
    assert r.certificate.primal_objective <= zero + 1e-9
    assert primal_objective(ds, r.model, C) == pytest.approx(r.certificate.primal_objective, rel=1e-12)


def test_hinge_non_increasing_in_C():
    ds = generate_synthetic("separable", n=8, m=24, d=4, relevant_per_query=4, noise=0.3, seed=1)
    totals = []
    for C in (0.01, 1.0, 100.0):
        r = train(ds, range(ds.n), SolverConfig(C=C, max_iterations=50_000))
        totals.append(sum(hinge_losses(ds, r.model).values()))
    assert totals[0] >= totals[1] - 1e-6 and totals[1] >= totals[2] - 1e-6


def test_normalize_flag_recorded():
    ds = generate_synthetic("separable", n=6, m=12, d=3, relevant_per_query=3, noise=0.1, seed=2)
    r = train(ds, range(6), SolverConfig(), normalize=True)
    assert r.model.preprocessing == {"l2_normalize": True}
    assert 0.0 <= evaluate(ds, r.model, range(6)).mean_top_precision <= 1.0


def test_baseline_identity():
    assert baseline_identity(2).W.tolist() == [[1, 0], [0, 1]]
    assert baseline_identity(1).W.tolist() == [[1]]
    assert baseline_identity(2).provenance == "identity"
    assert score([3, 4], [3, 4], baseline_identity(2)) == 25.0
    with pytest.raises(ValueError):
        baseline_identity(0)


def test_evaluate_report():
    r = train(_toy(), [0], SolverConfig(C=2.0))
    rep = evaluate(_toy(), r.model, [0])
    assert rep.mean_top_precision == 1.0 and rep.provenance == "trained"
    with pytest.raises(ValueError):
        evaluate(_toy(), r.model, [])


def test_split_examples():
    tr, te = split_queries(10, 0.3, 0)
    assert len(tr) == 7 and len(te) == 3
    assert sorted(tr + te) == list(range(10))
    assert split_queries(10, 0.3, 0) == (tr, te)
    assert tuple(map(len, split_queries(2, 0.9, 5))) == (1, 1)
    with pytest.raises(ValueError):
        split_queries(1, 0.5, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 200), st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_split_partition(n, f, seed):
    tr, te = split_queries(n, f, seed)
    assert set(tr).isdisjoint(te) and sorted(tr + te) == list(range(n))
    assert 1 <= len(te) <= n - 1
