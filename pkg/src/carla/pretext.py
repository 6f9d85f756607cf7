"""Stage one: triplet training of the encoder and neighbour mining.

Each usable window ``i`` (those with ``i >= y``) becomes an anchor. Its
positive is a window ``r ~ U{1..y}`` steps earlier and its negative is an
injected copy of itself. Anchors and negatives form the neighbour pool, in
which entry ``2k`` is the k-th anchor and ``2k + 1`` its negative.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
import torch

from carla import _backend
from carla.encoder import EncoderConfig, encode, init_encoder, to_tensor
from carla.errors import DataError, NumericError
from carla.inject import ANOMALY_TYPES, AnomalySpec, inject_anomaly

log = logging.getLogger(__name__)


@dataclass
class PretextConfig:
    margin: float = 1.0
    proximity: int = 10
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-4
    seed: int = 0
    positive: str = "temporal"
    noise_sigma: float = 0.01
    anomaly_types: list[str] = field(default_factory=lambda: list(ANOMALY_TYPES))

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.proximity < 1:
            raise ValueError("proximity range y must be >= 1")
        if self.positive not in ("temporal", "noise"):
            raise ValueError(f"positive must be 'temporal' or 'noise', got {self.positive!r}")


@dataclass(frozen=True)
class Triplet:
    anchor_idx: int
    positive_idx: int
    negative: np.ndarray
    spec: AnomalySpec


@dataclass
class NeighborPool:
    """Anchors (as indices into ``windows``) interleaved with their negatives."""

    windows: np.ndarray
    anchor_idx: np.ndarray
    negatives: np.ndarray
    specs: list[AnomalySpec] = field(default_factory=list)

    def __len__(self) -> int:
        return 2 * len(self.anchor_idx)

    @property
    def is_anchor(self) -> np.ndarray:
        flags = np.zeros(len(self), dtype=bool)
        flags[0::2] = True
        return flags

    @property
    def source_window(self) -> np.ndarray:
        return np.repeat(self.anchor_idx, 2)

    def gather(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        out = np.empty((len(idx),) + self.windows.shape[1:], dtype=self.windows.dtype)
        anchors = idx % 2 == 0
        out[anchors] = self.windows[self.anchor_idx[idx[anchors] // 2]]
        out[~anchors] = self.negatives[idx[~anchors] // 2]
        return out

    def iter_chunks(self, size: int = 2048) -> Iterator[np.ndarray]:
        for lo in range(0, len(self), size):
            yield self.gather(np.arange(lo, min(lo + size, len(self))))

    def save(self, path: str | Path) -> None:
        np.savez(path, anchor_idx=self.anchor_idx, negatives=self.negatives)

    @classmethod
    def load(cls, path: str | Path, windows: np.ndarray) -> "NeighborPool":
        with np.load(path) as z:
            return cls(windows, z["anchor_idx"], z["negatives"])


@dataclass
class Triplets:
    anchor_idx: np.ndarray
    positive_idx: np.ndarray
    pool: NeighborPool
    positives: Optional[np.ndarray] = None  # materialised when positives are noisy copies

    def __len__(self) -> int:
        return len(self.anchor_idx)

    def __getitem__(self, k: int) -> Triplet:
        return Triplet(int(self.anchor_idx[k]), int(self.positive_idx[k]),
                       self.pool.negatives[k], self.pool.specs[k])

    def __iter__(self) -> Iterator[Triplet]:
        return (self[k] for k in range(len(self)))

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        windows = self.pool.windows
        a = windows[self.anchor_idx[idx]]
        p = self.positives[idx] if self.positives is not None else windows[self.positive_idx[idx]]
        return a, p, self.pool.negatives[idx]


def build_triplets(
    windows: np.ndarray,
    proximity: int,
    rng: np.random.Generator,
    *,
    anomaly_types: Sequence[str] = ANOMALY_TYPES,
    positive: str = "temporal",
    noise_sigma: float = 0.01,
) -> tuple[Triplets, NeighborPool]:
    m = len(windows)
    if m < proximity + 1:
        raise DataError(f"series too short: {m} windows, need at least y + 1 = {proximity + 1}")
    anchors = np.arange(proximity, m)
    offsets = rng.integers(1, proximity + 1, size=len(anchors))
    negatives = np.empty((len(anchors),) + windows.shape[1:], dtype=np.float64)
    specs = []
    for k, i in enumerate(anchors):
        negatives[k], spec = inject_anomaly(windows[i], rng, anomaly_types)
        specs.append(spec)
    pool = NeighborPool(windows, anchors, negatives, specs)
    positives = None
    if positive == "noise":
        positives = windows[anchors] + rng.normal(0.0, noise_sigma, size=negatives.shape)
        positive_idx = anchors.copy()
    else:
        positive_idx = anchors - offsets
    return Triplets(anchors, positive_idx, pool, positives), pool


def triplet_loss(rep_a: torch.Tensor, rep_p: torch.Tensor, rep_n: torch.Tensor, margin: float) -> torch.Tensor:
    d_ap = (rep_a - rep_p).pow(2).sum(dim=1)
    d_an = (rep_a - rep_n).pow(2).sum(dim=1)
    return torch.clamp(d_ap - d_an + margin, min=0.0).mean()


@dataclass
class PretextResult:
    model: torch.nn.Module
    triplets: Triplets
    pool: NeighborPool
    loss_history: list[float]


def train_pretext(
    windows: np.ndarray,
    config: PretextConfig,
    encoder_config: Optional[EncoderConfig] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> PretextResult:
    """Build triplets, then run ``config.epochs`` epochs of Adam on the triplet loss."""
    windows = np.asarray(windows)
    if encoder_config is None:
        encoder_config = EncoderConfig(input_dims=windows.shape[2], window_size=windows.shape[1])
    rng = np.random.default_rng(config.seed)
    triplets, pool = build_triplets(
        windows, config.proximity, rng,
        anomaly_types=config.anomaly_types, positive=config.positive, noise_sigma=config.noise_sigma,
    )
    model = init_encoder(encoder_config, config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    history = []
    n = len(triplets)
    model.train()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            a, p, neg = triplets.batch(idx)
            reps = model(to_tensor(np.concatenate([a, p, neg]), model))
            ra, rp, rn = reps.split(len(idx))
            loss = triplet_loss(ra, rp, rn, config.margin)
            if not torch.isfinite(loss):
                raise NumericError(f"pretext loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / n)
        log.info("pretext epoch %d/%d loss %.6f", epoch, config.epochs, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    model.eval()
    return PretextResult(model, triplets, pool, history)


def triplet_distances(model: torch.nn.Module, triplets: Triplets, chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Squared distances anchor-positive and anchor-negative for every triplet."""
    d_ap, d_an = [], []
    for lo in range(0, len(triplets), chunk):
        idx = np.arange(lo, min(lo + chunk, len(triplets)))
        a, p, n = (encode(model, x) for x in triplets.batch(idx))
        d_ap.append(((a - p) ** 2).sum(1))
        d_an.append(((a - n) ** 2).sum(1))
    return np.concatenate(d_ap), np.concatenate(d_an)


def pool_representations(model: torch.nn.Module, pool: NeighborPool) -> np.ndarray:
    return np.concatenate([encode(model, chunk) for chunk in pool.iter_chunks()])


def mine_neighbors(model: torch.nn.Module, pool: NeighborPool, q: int, backend: Optional[str] = None):
    """Exact Q nearest / Q furthest pool entries in representation space."""
    if not 1 <= q < len(pool):
        raise ValueError(f"Q={q} must satisfy 1 <= Q < |pool| = {len(pool)}")
    return _backend.knn_extremes(pool_representations(model, pool), q, backend=backend)


def save_neighbors(path: str | Path, nearest: np.ndarray, furthest: np.ndarray, pool: NeighborPool) -> Path:
    path = Path(path)
    path.write_text(json.dumps({
        "q": int(nearest.shape[1]),
        "pool_size": len(pool),
        "source_window": pool.source_window.tolist(),
        "is_anchor": pool.is_anchor.tolist(),
        "nearest": nearest.tolist(),
        "furthest": furthest.tolist(),
    }))
    return path


def load_neighbors(path: str | Path) -> tuple[np.ndarray, np.ndarray, dict]:
    data = json.loads(Path(path).read_text())
    return np.array(data["nearest"], dtype=np.int64), np.array(data["furthest"], dtype=np.int64), data


def write_loss_history(path: str | Path, history: Sequence[float]) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("epoch,loss\n")
        for k, v in enumerate(history, start=1):
            fh.write(f"{k},{v!r}\n")
    return path


def read_loss_history(path: str | Path) -> list[float]:
    rows = Path(path).read_text().strip().splitlines()[1:]
    return [float(r.split(",")[1]) for r in rows if r]


def separation_fraction(d_ap: np.ndarray, d_an: np.ndarray) -> float:
    return float(np.mean(d_ap < d_an)) if len(d_ap) else math.nan
