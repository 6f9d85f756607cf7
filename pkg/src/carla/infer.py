"""Window labels/scores from the majority class and their point projection."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from carla.dataset import TimeSeries, window_array
from carla.errors import DataError
from carla.selfsup import Classifier, predict_proba

PROJECTIONS = ("causal", "mean")


def label_from_probs(probs: np.ndarray, majority: int) -> np.ndarray:
    """0 where the majority class is (one of) the most probable, else 1."""
    probs = np.atleast_2d(probs)
    return (probs[:, majority] < probs.max(axis=1)).astype(np.int8)


def score_from_probs(probs: np.ndarray, majority: int) -> np.ndarray:
    return 1.0 - np.atleast_2d(probs)[:, majority]


def window_label(model: Classifier, majority: int, windows) -> np.ndarray:
    return label_from_probs(predict_proba(model, windows), majority)


def window_score(model: Classifier, majority: int, windows) -> np.ndarray:
    return score_from_probs(predict_proba(model, windows), majority)


def project_scores(window_scores: np.ndarray, length: int, window_size: int,
                   projection: str = "causal") -> np.ndarray:
    """Map stride-1 window scores onto ``length`` points.

    ``causal``: point ``t >= WS-1`` takes the window ending at ``t``; earlier
    points take the first window. ``mean``: average over covering windows.
    """
    window_scores = np.asarray(window_scores, dtype=np.float64)
    m = length - window_size + 1
    if window_scores.shape != (m,):
        raise ValueError(f"expected {m} window scores, got {window_scores.shape}")
    if projection == "causal":
        out = np.empty(length)
        out[: window_size - 1] = window_scores[0]
        out[window_size - 1:] = window_scores
        return out
    if projection == "mean":
        sums = np.zeros(length + 1)
        np.add.at(sums, np.arange(m), window_scores)
        np.add.at(sums, np.arange(m) + window_size, -window_scores)
        covered = np.minimum.reduce([np.arange(1, length + 1), np.full(length, window_size),
                                     np.full(length, m), np.arange(length, 0, -1)])
        return np.cumsum(sums)[:length] / covered
    raise ValueError(f"projection must be one of {PROJECTIONS}")


def score_series(model: Classifier, majority: int, test: TimeSeries, window_size: int,
                 projection: str = "causal") -> np.ndarray:
    if test.length < window_size:
        raise DataError(f"series length {test.length} shorter than window size {window_size}")
    scores = window_score(model, majority, window_array(test, window_size, 1))
    return np.clip(project_scores(scores, test.length, window_size, projection), 0.0, 1.0)


def write_scores(path: str | Path, scores: np.ndarray) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("index,score\n")
        for i, s in enumerate(scores):
            fh.write(f"{i},{float(s)!r}\n")
    return path


def read_scores(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    lines = path.read_text().strip().splitlines()
    if not lines or lines[0].strip() != "index,score":
        raise DataError(f"{path}: expected header 'index,score'")
    out = []
    for k, line in enumerate(lines[1:]):
        idx, val = line.split(",")
        if int(idx) != k:
            raise DataError(f"{path}: index column out of order at row {k}")
        out.append(float(val))
    return np.array(out)


def write_labels(path: str | Path, labels: np.ndarray) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("index,label\n")
        for i, v in enumerate(labels):
            fh.write(f"{i},{int(v)}\n")
    return path
