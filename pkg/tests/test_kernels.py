"""Compiled and numpy kernels against independent brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carla import _backend


def naive_extremes(reps, q):
    n = len(reps)
    near, far = [], []
    for i in range(n):
        dists = []
        for j in range(n):
            if j == i:
                continue
            d = 0.0
            for k in range(reps.shape[1]):
                diff = float(reps[i, k]) - float(reps[j, k])
                d += diff * diff
            dists.append((d, j))
        near.append([j for _, j in sorted(dists, key=lambda t: (t[0], t[1]))[:q]])
        far.append([j for _, j in sorted(dists, key=lambda t: (-t[0], t[1]))[:q]])
    return np.array(near), np.array(far)


def naive_point_adjust(preds, labels):
    out = list(preds)
    i = 0
    while i < len(labels):
        if labels[i]:
            j = i
            while j < len(labels) and labels[j]:
                j += 1
            if any(preds[i:j]):
                out[i:j] = [1] * (j - i)
            i = j
        else:
            i += 1
    return np.array(out)


def test_collinear_example(backend):
    near, far = _backend.knn_extremes(np.array([[0.0], [1.0], [10.0]]), 1, backend=backend)
    assert near[0].tolist() == [1]
    assert far[0].tolist() == [2]


def test_matches_naive_oracle(backend):
    reps = np.random.default_rng(0).normal(size=(60, 16))
    near, far = _backend.knn_extremes(reps, 5, backend=backend)
    on, of = naive_extremes(reps, 5)
    np.testing.assert_array_equal(near, on)
    np.testing.assert_array_equal(far, of)


def test_ties_go_to_lower_index(backend):
    # points on a line with duplicates: many equal distances
    reps = np.array([[0.0], [1.0], [1.0], [-1.0], [2.0], [1.0]])
    near, far = _backend.knn_extremes(reps, 3, backend=backend)
    on, of = naive_extremes(reps, 3)
    np.testing.assert_array_equal(near, on)
    np.testing.assert_array_equal(far, of)


def test_exhaustive_q(backend):
    reps = np.random.default_rng(1).normal(size=(12, 3))
    near, far = _backend.knn_extremes(reps, 11, backend=backend)
    for j in range(12):
        assert set(near[j]) | {j} == set(range(12))
        assert j not in near[j] and j not in far[j]


def test_q_too_large(backend):
    with pytest.raises(ValueError):
        _backend.knn_extremes(np.zeros((4, 2)), 4, backend=backend)


def test_backends_agree():
    impls = _backend.available_backends()
    if len(impls) < 2:
        pytest.skip("compiled extension not built")
    reps = np.random.default_rng(5).normal(size=(700, 32))
    a = _backend.knn_extremes(reps, 5, backend="cython")
    b = _backend.knn_extremes(reps, 5, backend="python")
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_point_adjust_oracle(pairs):
    preds = np.array([p for p, _ in pairs], dtype=np.int8)
    labels = np.array([y for _, y in pairs], dtype=np.int8)
    expected = naive_point_adjust(preds, labels)
    for name in _backend.available_backends():
        np.testing.assert_array_equal(_backend.point_adjust(preds, labels, backend=name), expected)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.integers(0, 1)), min_size=1, max_size=60),
       st.floats(-10, 10))
def test_adjust_scores_equals_adjusting_predictions(pairs, tau):
    scores = np.array([s for s, _ in pairs])
    labels = np.array([y for _, y in pairs], dtype=np.int8)
    for name in _backend.available_backends():
        adjusted = _backend.adjust_scores(scores, labels, backend=name)
        np.testing.assert_array_equal(
            (adjusted >= tau).astype(np.int8),
            naive_point_adjust((scores >= tau).astype(np.int8), labels),
        )
