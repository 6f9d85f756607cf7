import numpy as np
import pytest
import torch
from torch import nn

from carla.dataset import TimeSeries
from carla.encoder import EncoderConfig, init_encoder
from carla.errors import DataError
from carla.infer import (
    label_from_probs,
    project_scores,
    read_scores,
    score_from_probs,
    score_series,
    window_label,
    window_score,
    write_labels,
    write_scores,
)
from carla.selfsup import Classifier, predict_proba


def test_label_examples():
    assert label_from_probs(np.array([0.7, 0.2, 0.1]), 0).tolist() == [0]
    assert label_from_probs(np.array([0.45, 0.45, 0.1]), 1).tolist() == [0]
    assert label_from_probs(np.array([0.05, 0.9, 0.05]), 0).tolist() == [1]


def test_score_examples():
    assert score_from_probs(np.array([1.0, 0.0]), 0).tolist() == [0.0]
    assert score_from_probs(np.array([0.3, 0.7]), 0)[0] == pytest.approx(0.7)
    assert score_from_probs(np.full(10, 0.1), 4)[0] == pytest.approx(0.9)


def test_label_zero_iff_majority_in_argmax(rng):
    probs = rng.dirichlet(np.ones(4), size=500)
    probs[:50, 1] = probs[:50, 2]  # manufacture ties
    probs /= probs.sum(1, keepdims=True)
    for c in range(4):
        expected = (probs[:, c] < probs.max(1)).astype(int)
        assert label_from_probs(probs, c).tolist() == expected.tolist()


def test_project_causal_small():
    np.testing.assert_array_equal(project_scores(np.array([0.3]), 4, 4), [0.3] * 4)
    np.testing.assert_array_equal(project_scores(np.array([0.3, 0.8]), 5, 4), [0.3, 0.3, 0.3, 0.3, 0.8])


def test_project_mean():
    out = project_scores(np.array([0.0, 1.0]), 3, 2, "mean")
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])
    ws = np.array([0.2, 0.4, 0.6, 0.8])
    out = project_scores(ws, 6, 3, "mean")
    expected = [np.mean([ws[j] for j in range(4) if j <= t < j + 3]) for t in range(6)]
    np.testing.assert_allclose(out, expected)


def test_project_errors():
    with pytest.raises(ValueError):
        project_scores(np.zeros(3), 5, 4)
    with pytest.raises(ValueError):
        project_scores(np.zeros(2), 5, 4, "centered")


class ConstantHead(nn.Module):
    """Ignores its input and always outputs fixed logits."""

    def __init__(self, logits):
        super().__init__()
        self.logits = nn.Parameter(torch.tensor(logits, dtype=torch.float32))

    def forward(self, rep):
        return self.logits.expand(rep.shape[0], -1)


def constant_model(logits):
    model = Classifier(init_encoder(EncoderConfig(input_dims=2, window_size=8, channels=[2, 2, 2], rep_dim=4), 0),
                       len(logits))
    model.head = ConstantHead(logits)
    return model


def test_score_series_constant_output(rng):
    model = constant_model([0.0, np.log(3.0)])  # softmax -> (0.25, 0.75)
    test = TimeSeries(rng.normal(size=(30, 2)))
    out = score_series(model, 0, test, 8)
    assert out.shape == (30,)
    np.testing.assert_allclose(out, 0.75, atol=1e-6)


def test_score_series_short_cases(rng):
    enc = init_encoder(EncoderConfig(input_dims=2, window_size=8, channels=[2, 2, 2], rep_dim=4), 1)
    model = Classifier(enc, 3)
    series = rng.normal(size=(9, 2))
    ws = window_score(model, 1, np.stack([series[:8], series[1:]]))
    one = score_series(model, 1, TimeSeries(series[:8]), 8)
    np.testing.assert_allclose(one, ws[0], atol=1e-6)
    two = score_series(model, 1, TimeSeries(series), 8)
    np.testing.assert_allclose(two[:8], ws[0], atol=1e-6)
    assert two[8] == pytest.approx(ws[1], abs=1e-6)
    with pytest.raises(DataError):
        score_series(model, 1, TimeSeries(series[:7]), 8)


def test_threshold_reproduces_window_labels(rng):
    model = Classifier(init_encoder(EncoderConfig(input_dims=2, window_size=8, channels=[2, 2, 2], rep_dim=4), 2), 3)
    series = rng.normal(size=(40, 2))
    windows = np.lib.stride_tricks.sliding_window_view(series, 8, axis=0).transpose(0, 2, 1)
    labels = window_label(model, 0, windows)
    scores = score_series(model, 0, TimeSeries(series), 8)[7:]
    probs = predict_proba(model, windows)
    tau = 1 - probs.max(1)
    np.testing.assert_array_equal((scores > tau + 1e-6).astype(int), labels)


def test_scores_io(tmp_path):
    vals = np.array([0.0, 0.125, 1 / 3, 1.0])
    path = write_scores(tmp_path / "scores.csv", vals)
    assert path.read_text().startswith("index,score\n0,0.0\n")
    np.testing.assert_array_equal(read_scores(path), vals)
    lab = write_labels(tmp_path / "labels.csv", np.array([0, 1, 1]))
    assert lab.read_text() == "index,label\n0,0\n1,1\n2,1\n"
    (tmp_path / "bad.csv").write_text("i,s\n0,1\n")
    with pytest.raises(DataError):
        read_scores(tmp_path / "bad.csv")
