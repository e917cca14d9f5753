import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcont.datamodel import (
    DimensionMismatchError,
    LayerBlock,
    MetricSpec,
    ZeroVectorError,
)
from kcont.metrics import distance, pairwise


def test_l2_pythagorean():
    assert distance([0.0, 0.0], [3.0, 4.0], MetricSpec.lp(2.0)) == 5.0


def test_cosine_orthogonal():
    assert distance([1.0, 0.0], [0.0, 1.0], MetricSpec.cosine()) == 1.0


def test_cosine_range_and_extremes():
    assert distance([1.0, 0.0], [2.0, 0.0], MetricSpec.cosine()) == pytest.approx(0.0, abs=1e-12)
    assert distance([1.0, 0.0], [-1.0, 0.0], MetricSpec.cosine()) == pytest.approx(2.0)


def test_discrete_metric():
    m = MetricSpec.discrete(7.0)
    assert distance([1.0, 2.0], [1.0, 2.0], m) == 0.0
    assert distance([1.0, 2.0], [1.0, 2.5], m) == 7.0


def test_linf_is_max_norm():
    assert distance([0.0, 0.0], [3.0, -4.0], MetricSpec.lp(math.inf)) == 4.0


def test_l1():
    assert distance([1.0, 1.0], [-1.0, 3.0], MetricSpec.lp(1.0)) == 4.0


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        distance([1.0], [1.0, 2.0], MetricSpec.lp(2.0))


def test_cosine_zero_vector_rejected():
    with pytest.raises(ZeroVectorError):
        distance([0.0, 0.0], [1.0, 0.0], MetricSpec.cosine())


def _block(values, metric, dim=1):
    v = np.asarray(values, dtype=np.float32).reshape(-1, dim)
    return LayerBlock(1, dim, v, metric)


def test_pairwise_worked_example():
    dm = pairwise(_block([0.0, 1.0, 3.0], MetricSpec.lp(1.0)))
    expected = np.array([[0, 1, 3], [1, 0, 2], [3, 2, 0]], dtype=float)
    assert np.array_equal(dm.entries, expected)
    assert dm.collisions == ()


def test_pairwise_matches_distance_everywhere():
    rng = np.random.default_rng(5)
    vectors = rng.normal(size=(12, 3)).astype(np.float32)
    for metric in (MetricSpec.lp(1.0), MetricSpec.lp(2.0), MetricSpec.lp(3.5),
                   MetricSpec.lp(math.inf), MetricSpec.cosine(), MetricSpec.discrete(2.0)):
        block = LayerBlock(1, 3, vectors, metric)
        dm = pairwise(block)
        for i in range(12):
            for j in range(12):
                assert dm.entries[i, j] == distance(vectors[i], vectors[j], metric), (metric, i, j)


def test_pairwise_symmetric_zero_diagonal():
    rng = np.random.default_rng(7)
    block = LayerBlock(1, 4, rng.normal(size=(30, 4)).astype(np.float32), MetricSpec.lp(2.0))
    dm = pairwise(block)
    assert np.array_equal(dm.entries, dm.entries.T)
    assert np.all(np.diag(dm.entries) == 0.0)
    assert np.all(dm.entries >= 0.0)


def test_duplicate_vectors_listed_as_collisions():
    vectors = np.array([[1.0, 2.0], [3.0, 4.0], [1.0, 2.0]], dtype=np.float32)
    for metric in (MetricSpec.lp(2.0), MetricSpec.cosine(), MetricSpec.discrete(1.0)):
        dm = pairwise(LayerBlock(1, 2, vectors, metric))
        assert (0, 2) in dm.collisions and (2, 0) in dm.collisions
        assert dm.entries[0, 2] == 0.0


def test_discrete_matrix_two_valued():
    rng = np.random.default_rng(11)
    vectors = rng.integers(0, 2, size=(20, 3)).astype(np.float32)
    dm = pairwise(LayerBlock(1, 3, vectors, MetricSpec.discrete(4.0)))
    assert set(np.unique(dm.entries)) <= {0.0, 4.0}


@settings(max_examples=30, deadline=None)
@given(
    p=st.sampled_from([1.0, 1.5, 2.0, 3.0, math.inf]),
    seed=st.integers(0, 10_000),
)
def test_lp_triangle_inequality(p, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(9, 4))
    metric = MetricSpec.lp(p)
    for _ in range(30):
        i, j, k = rng.integers(0, 9, size=3)
        dij = distance(pts[i], pts[j], metric)
        dik = distance(pts[i], pts[k], metric)
        dkj = distance(pts[k], pts[j], metric)
        assert dij <= dik + dkj + 1e-9 * max(1.0, dij)


def test_pairwise_independent_of_worker_count(monkeypatch):
    rng = np.random.default_rng(13)
    vectors = rng.normal(size=(300, 8)).astype(np.float32)
    results = []
    for threads in ("1", "4", "8"):
        monkeypatch.setenv("KC_THREADS", threads)
        for metric in (MetricSpec.lp(2.0), MetricSpec.cosine()):
            results.append((threads, metric.kind, pairwise(LayerBlock(1, 8, vectors, metric)).entries))
    by_metric = {}
    for threads, kind, entries in results:
        if kind in by_metric:
            assert np.array_equal(by_metric[kind], entries), f"{kind} differs at KC_THREADS={threads}"
        else:
            by_metric[kind] = entries


def test_bad_kc_threads_rejected(monkeypatch):
    monkeypatch.setenv("KC_THREADS", "lots")
    with pytest.raises(ValueError, match="KC_THREADS"):
        pairwise(_block([0.0, 1.0], MetricSpec.lp(2.0)))
