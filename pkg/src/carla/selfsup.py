"""Stage two: neighbour-consistency classification over C classes.

Losses operate on a matrix of class probabilities (one row per pool entry
or per batch-local entry) plus integer neighbour index arrays into it.

Two formulations are available. ``"stable"`` (default) pushes furthest
neighbours apart with ``-log(1 - sim)`` and subtracts ``beta * H`` where
``H`` is the Shannon entropy of the mean class distribution, so class
diversity is rewarded. ``"literal"`` evaluates
``L_cons - L_incons - beta * sum(p_hat * log p_hat)`` with ``L_incons``
using ``-log(sim)``, exactly as the objective is usually printed; it is
unbounded below and kept for fidelity experiments.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from carla.encoder import encode, to_tensor
from carla.errors import NumericError
from carla.pretext import NeighborPool

log = logging.getLogger(__name__)

FORMULATIONS = ("stable", "literal")


@dataclass
class SelfSupConfig:
    num_classes: int = 10
    num_neighbors: int = 5
    entropy_weight: float = 5.0
    epochs: int = 100
    lr: float = 1e-4
    batch_size: int = 128
    formulation: str = "stable"
    eps_log: float = 1e-8
    seed: int = 0
    inconsistency: bool = True
    # one random NN and FN per anchor per step, terms rescaled by Q
    sample_neighbors: bool = False

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.num_neighbors < 1:
            raise ValueError("num_neighbors must be >= 1")
        if self.entropy_weight < 0:
            raise ValueError("entropy_weight must be >= 0")
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"formulation must be one of {FORMULATIONS}")


class Classifier(nn.Module):
    """Encoder backbone followed by a linear head and softmax."""

    def __init__(self, backbone: nn.Module, num_classes: int):
        super().__init__()
        self.backbone = backbone
        self.config = backbone.config
        self.num_classes = num_classes
        self.head = nn.Linear(backbone.config.rep_dim, num_classes)

    def logits(self, x):
        return self.head(self.backbone(x))

    def forward(self, x):
        return torch.softmax(self.logits(x), dim=-1)


def similarity(p_i: torch.Tensor, p_j: torch.Tensor) -> torch.Tensor:
    return (p_i * p_j).sum(dim=-1)


def _pair_sims(probs, neighbors, anchors):
    neighbors = torch.as_tensor(np.asarray(neighbors), dtype=torch.long)
    if anchors is None:
        anchor_p = probs[: neighbors.shape[0]]
    else:
        anchor_p = probs[torch.as_tensor(np.asarray(anchors), dtype=torch.long)]
    return similarity(anchor_p[:, None, :], probs[neighbors])


def consistency_loss(probs: torch.Tensor, nearest, anchors=None, eps: float = 1e-8) -> torch.Tensor:
    """``-mean_w sum_{n in N_w} log(max(sim, eps))``.

    ``nearest[k]`` lists the neighbour rows of anchor ``anchors[k]`` (or of
    row ``k`` when ``anchors`` is omitted).
    """
    sims = _pair_sims(probs, nearest, anchors)
    return -torch.log(torch.clamp(sims, min=eps)).sum(dim=1).mean()


def inconsistency_loss(probs: torch.Tensor, furthest, anchors=None, formulation: str = "stable",
                       eps: float = 1e-8) -> torch.Tensor:
    sims = _pair_sims(probs, furthest, anchors)
    if formulation == "literal":
        return -torch.log(torch.clamp(sims, min=eps)).sum(dim=1).mean()
    return -torch.log(torch.clamp(1.0 - sims, min=eps)).sum(dim=1).mean()


def mean_class_distribution(probs: torch.Tensor) -> torch.Tensor:
    return probs.mean(dim=0)


def entropy_reg(probs: torch.Tensor) -> torch.Tensor:
    """Shannon entropy of the batch-mean class distribution (>= 0)."""
    p_hat = mean_class_distribution(probs)
    return -torch.special.xlogy(p_hat, p_hat).sum()


def total_loss(probs: torch.Tensor, nearest, furthest, config: SelfSupConfig, anchors=None,
               scale: float = 1.0) -> torch.Tensor:
    eps = config.eps_log
    cons = scale * consistency_loss(probs, nearest, anchors, eps)
    if anchors is None:
        anchor_p = probs[: np.asarray(nearest).shape[0]]
    else:
        anchor_p = probs[torch.as_tensor(np.asarray(anchors), dtype=torch.long)]
    h = entropy_reg(anchor_p)
    if config.inconsistency:
        incons = scale * inconsistency_loss(probs, furthest, anchors, config.formulation, eps)
    else:
        incons = torch.zeros((), dtype=probs.dtype)
    if config.formulation == "literal":
        # -beta * sum(p log p) == +beta * H
        return cons - incons + config.entropy_weight * h
    return cons + incons - config.entropy_weight * h


@dataclass
class ClassAssignment:
    classes: np.ndarray
    counts: np.ndarray
    majority: int


def majority_from_classes(classes: np.ndarray, num_classes: int) -> ClassAssignment:
    counts = np.bincount(np.asarray(classes, dtype=np.int64), minlength=num_classes)
    # argmax returns the first maximum: ties go to the lowest class index
    return ClassAssignment(np.asarray(classes), counts, int(np.argmax(counts)))


def predict_proba(model: Classifier, windows) -> np.ndarray:
    return encode(model, windows)


def majority_class(model: Classifier, windows) -> ClassAssignment:
    """Class assignment of original (anchor) windows and the most populous class."""
    probs = predict_proba(model, windows)
    return majority_from_classes(probs.argmax(axis=1), model.num_classes)


@dataclass
class SelfSupResult:
    model: Classifier
    assignment: ClassAssignment
    loss_history: list[float]


def init_classifier(pretext_model: nn.Module, num_classes: int, seed: int) -> Classifier:
    backbone = copy.deepcopy(pretext_model)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Classifier(backbone, num_classes).to(next(backbone.parameters()).dtype)


def train_selfsup(
    pretext_model: nn.Module,
    pool: NeighborPool,
    nearest: np.ndarray,
    furthest: np.ndarray,
    config: SelfSupConfig,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> SelfSupResult:
    """Fine-tune a copy of the pretext encoder plus a fresh head on the pool."""
    nearest = np.asarray(nearest, dtype=np.int64)
    furthest = np.asarray(furthest, dtype=np.int64)
    if nearest.shape[0] != len(pool) or furthest.shape[0] != len(pool):
        raise ValueError("neighbour sets do not match the pool size")
    q = nearest.shape[1]
    model = init_classifier(pretext_model, config.num_classes, config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    history = []
    n = len(pool)
    model.train()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            if config.sample_neighbors:
                nn_idx = nearest[batch, rng.integers(q, size=len(batch))][:, None]
                fn_idx = furthest[batch, rng.integers(q, size=len(batch))][:, None]
                scale = float(q)
            else:
                nn_idx, fn_idx, scale = nearest[batch], furthest[batch], 1.0
            union = np.unique(np.concatenate([batch, nn_idx.ravel(), fn_idx.ravel()]))
            probs = model(to_tensor(pool.gather(union), model))
            loss = total_loss(
                probs,
                np.searchsorted(union, nn_idx),
                np.searchsorted(union, fn_idx),
                config,
                anchors=np.searchsorted(union, batch),
                scale=scale,
            )
            if not torch.isfinite(loss):
                raise NumericError(f"self-supervised loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
        history.append(total / n)
        log.info("selfsup epoch %d/%d loss %.6f", epoch, config.epochs, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    model.eval()
    anchors = pool.windows[pool.anchor_idx]
    return SelfSupResult(model, majority_class(model, anchors), history)
