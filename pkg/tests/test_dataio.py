import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topsim.core import SimilarityModel, validate_dataset
from topsim.dataio import (
    DatasetBundle,
    FormatError,
    generate_synthetic,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
)
from topsim.metrics import mean_top_precision
from topsim.trainer import baseline_identity


def _write(tmp_path, q, x, y):
    paths = tmp_path / "q.csv", tmp_path / "x.csv", tmp_path / "y.csv"
    for p, text in zip(paths, (q, x, y)):
        p.write_bytes(text.encode())
    return paths


def test_load_minimal(tmp_path):
    ds = load_dataset(*_write(tmp_path, "1.0,2.0\n", "0.5,0.5\n1.0,0.0\n", "1,0\n"))
    assert (ds.n, ds.m, ds.d) == (1, 2, 2)


def test_load_crlf(tmp_path):
    ds = load_dataset(*_write(tmp_path, "1.0,2.0\r\n", "0.5,0.5\r\n1e0,0\r\n", "1,0\r\n"))
    assert ds.database[1].tolist() == [1.0, 0.0]


def test_load_errors(tmp_path):
    with pytest.raises(FormatError, match=r"\(0,0\)"):
        load_dataset(*_write(tmp_path, "1.0,2.0\n", "0.5,0.5\n1.0,0.0\n", "2,0\n"))
    with pytest.raises(FormatError, match="inconsistent dimension at line 2"):
        load_dataset(*_write(tmp_path, "1.0,2.0\n", "0.5,0.5\n1.0,0.0,3\n", "1,0\n"))
    with pytest.raises(FormatError, match="line 1, column 2"):
        load_dataset(*_write(tmp_path, "1.0,abc\n", "0.5,0.5\n1.0,0.0\n", "1,0\n"))
    with pytest.raises(FormatError, match="dimension mismatch"):
        load_dataset(*_write(tmp_path, "1.0,2.0,3.0\n", "0.5,0.5\n1.0,0.0\n", "1,0\n"))
    with pytest.raises(FormatError, match="columns"):
        load_dataset(*_write(tmp_path, "1.0,2.0\n", "0.5,0.5\n1.0,0.0\n", "1,0,1\n"))


def test_model_round_trip(tmp_path):
    m = SimilarityModel(np.array([[0, 0.5], [0, 0]]), provenance="trained", trained_C=0.5)
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.W.tobytes() == m.W.tobytes() and back.trained_C == 0.5
    save_model(baseline_identity(3), tmp_path / "i.json")
    assert load_model(tmp_path / "i.json").provenance == "identity"


@settings(max_examples=50, deadline=None)
@given(d=st.integers(1, 5), seed=st.integers(0, 2**32 - 1), scale=st.integers(-200, 200))
def test_model_round_trip_bit_exact(d, seed, scale, tmp_path_factory):
    W = np.random.default_rng(seed).standard_normal((d, d)) * 10.0**scale
    path = tmp_path_factory.mktemp("m") / "m.json"
    save_model(SimilarityModel(W), path)
    assert load_model(path).W.tobytes() == W.tobytes()


def _doc(**over):
    doc = {"format_version": 1, "d": 2, "W": [1, 0, 0, 1], "provenance": "external", "trained_C": None, "preprocessing": {}}
    doc.update(over)
    return doc


@pytest.mark.parametrize(
    "doc,match",
    [
        (_doc(W=[1, 0, 0]), "d\\*d"),
        (_doc(format_version=2), "format_version"),
        (dict(_doc(), extra=1), "unknown model fields"),
        (_doc(provenance="magic"), "provenance"),
        (_doc(preprocessing={"whiten": True}), "preprocessing"),
        (_doc(provenance="identity", W=[2, 0, 0, 1]), "identity"),
    ],
)
def test_model_strict_parsing(tmp_path, doc, match):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match=match):
        load_model(path)


def test_dataset_round_trip_bit_exact(tmp_path):
    ds = generate_synthetic("rotated_correlation", n=5, m=9, d=3, relevant_per_query=2, noise=0.1, seed=4)
    bundle = save_dataset(ds, tmp_path)
    back = DatasetBundle.from_dir(tmp_path).dataset
    assert bundle.dataset is ds
    for a, b in [(ds.queries, back.queries), (ds.database, back.database), (ds.relevance, back.relevance)]:
        assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["separable", "rotated_correlation"]))
def test_generator_reproducible(seed, kind):
    a = generate_synthetic(kind, n=6, m=15, d=4, relevant_per_query=3, noise=0.2, seed=seed)
    b = generate_synthetic(kind, n=6, m=15, d=4, relevant_per_query=3, noise=0.2, seed=seed)
    assert a.queries.tobytes() == b.queries.tobytes() and a.relevance.tobytes() == b.relevance.tobytes()
    assert np.all(a.relevance.sum(axis=1) == 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 6), st.integers(1, 5))
def test_separable_strict_at_zero_noise(seed, n, d, r):
    m = r + 1 + seed % 20
    ds = generate_synthetic("separable", n=n, m=m, d=d, relevant_per_query=r, seed=seed)
    S = ds.queries @ ds.database.T
    for i in range(n):
        assert S[i][ds.relevance[i] == 1].min() > S[i][ds.relevance[i] == 0].max()
    assert mean_top_precision(ds, baseline_identity(d)).mean == 1.0


@pytest.mark.parametrize("seed", [0, 7, 123])
def test_rotated_hidden_model_is_perfect(seed):
    ds, W_star = generate_synthetic("rotated_correlation", seed=seed, return_hidden=True)
    assert not np.allclose(W_star, np.eye(16))
    assert np.linalg.cond(W_star) <= 4.0 + 1e-9
    assert mean_top_precision(ds, SimilarityModel(W_star)).mean == 1.0
    assert mean_top_precision(ds, baseline_identity(16)).mean < 0.5


def test_small_generator_example():
    ds = generate_synthetic("separable", n=2, m=4, d=2, relevant_per_query=2, seed=0)
    assert validate_dataset(ds).ok
    assert ds.relevance.sum(axis=1).tolist() == [2, 2]


@pytest.mark.parametrize("kw", [dict(relevant_per_query=10, m=10), dict(n=0), dict(noise=-1.0)])
def test_generator_parameter_errors(kw):
    with pytest.raises(ValueError):
        generate_synthetic("separable", **kw)
    with pytest.raises(ValueError):
        generate_synthetic("bogus")
