"""Numpy implementations of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

_BLOCK = 1024


def _select(dist_row: np.ndarray, q: int) -> np.ndarray:
    # argpartition alone breaks ties arbitrarily; widen to every value tied
    # with the q-th and order by (distance, index).
    part = np.argpartition(dist_row, q - 1)[:q]
    cut = dist_row[part].max()
    cand = np.flatnonzero(dist_row <= cut)
    order = np.lexsort((cand, dist_row[cand]))
    return cand[order[:q]]


def knn_extremes(reps: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray]:
    reps = np.ascontiguousarray(reps, dtype=np.float64)
    n = reps.shape[0]
    if q < 1 or q > n - 1:
        raise ValueError(f"q must be in [1, {n - 1}], got {q}")
    sq = np.einsum("ij,ij->i", reps, reps)
    near = np.empty((n, q), dtype=np.int64)
    far = np.empty((n, q), dtype=np.int64)
    for lo in range(0, n, _BLOCK):
        hi = min(lo + _BLOCK, n)
        d = sq[lo:hi, None] + sq[None, :] - 2.0 * (reps[lo:hi] @ reps.T)
        np.maximum(d, 0.0, out=d)
        rows = np.arange(hi - lo)
        d_near = d.copy()
        d_near[rows, rows + lo] = np.inf
        d_far = -d
        d_far[rows, rows + lo] = np.inf
        for r in rows:
            near[lo + r] = _select(d_near[r], q)
            far[lo + r] = _select(d_far[r], q)
    return near, far


def _runs(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.concatenate(([0], (labels != 0).astype(np.int8), [0]))
    edges = np.diff(padded)
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def point_adjust(preds: np.ndarray, labels: np.ndarray) -> np.ndarray:
    if len(preds) != len(labels):
        raise ValueError("preds and labels differ in length")
    out = np.asarray(preds, dtype=np.int8).copy()
    for start, stop in zip(*_runs(labels)):
        if out[start:stop].any():
            out[start:stop] = 1
    return out


def adjust_scores(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    out = np.asarray(scores, dtype=np.float64).copy()
    for start, stop in zip(*_runs(labels)):
        out[start:stop] = out[start:stop].max()
    return out
