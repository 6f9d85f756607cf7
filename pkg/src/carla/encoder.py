"""Residual 1-D convolutional encoder and its checkpoint format.

Checkpoint layout (little endian)::

    b"CARLACKP" | uint32 header_len | JSON header | raw tensor bytes

The header carries ``format_version``, ``stage`` ("pretext" or "selfsup"),
the encoder config, seed, epoch, any stage extras, and for every tensor its
name, dtype, shape and byte offset into the payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from carla.errors import DataError

FORMAT_VERSION = 1
_MAGIC = b"CARLACKP"


@dataclass
class EncoderConfig:
    input_dims: int = 1
    window_size: int = 200
    kernel_sizes: list[int] = field(default_factory=lambda: [8, 5, 3])
    channels: list[int] = field(default_factory=lambda: [64, 128, 128])
    rep_dim: int = 128

    def __post_init__(self):
        if self.rep_dim < 1 or self.input_dims < 1 or self.window_size < 1:
            raise ValueError("rep_dim, input_dims and window_size must be >= 1")
        if not self.kernel_sizes or any(k < 1 for k in self.kernel_sizes):
            raise ValueError("kernel sizes must be positive")
        if not self.channels or any(c < 1 for c in self.channels):
            raise ValueError("channel counts must be positive")


class SameConv1d(nn.Module):
    """Stride-1 convolution padded so the output keeps the input length."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int):
        super().__init__()
        self.pad = ((kernel - 1) // 2, kernel - 1 - (kernel - 1) // 2)
        self.conv = nn.Conv1d(in_ch, out_ch, kernel)

    def forward(self, x):
        return self.conv(F.pad(x, self.pad))


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel_sizes):
        super().__init__()
        layers = []
        ch = in_ch
        for i, k in enumerate(kernel_sizes):
            layers.append(SameConv1d(ch, out_ch, k))
            layers.append(nn.BatchNorm1d(out_ch))
            if i < len(kernel_sizes) - 1:
                layers.append(nn.ReLU())
            ch = out_ch
        self.body = nn.Sequential(*layers)
        if in_ch == out_ch:
            self.shortcut = nn.Identity()
        else:
            self.shortcut = nn.Sequential(nn.Conv1d(in_ch, out_ch, 1), nn.BatchNorm1d(out_ch))

    def forward(self, x):
        return F.relu(self.body(x) + self.shortcut(x))


class ResNetEncoder(nn.Module):
    """(B, WS, Dim) windows -> (B, rep_dim) vectors."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        blocks = []
        ch = config.input_dims
        for out_ch in config.channels:
            blocks.append(ResidualBlock(ch, out_ch, config.kernel_sizes))
            ch = out_ch
        self.blocks = nn.Sequential(*blocks)
        self.fc = nn.Linear(ch, config.rep_dim)

    def forward(self, x):
        h = self.blocks(x.transpose(1, 2))
        return self.fc(h.mean(dim=2))


def init_encoder(config: EncoderConfig, seed: int) -> ResNetEncoder:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ResNetEncoder(config)


def check_batch(batch, config: EncoderConfig) -> np.ndarray:
    arr = np.asarray(batch)
    if arr.ndim == 2 and config.input_dims == 1:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] != config.input_dims:
        raise DataError(
            f"expected batch of shape (B, WS, {config.input_dims}), got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise DataError("batch contains NaN or Inf")
    return arr


def to_tensor(arr: np.ndarray, like: nn.Module) -> torch.Tensor:
    dtype = next(like.parameters()).dtype
    arr = np.ascontiguousarray(arr)
    if not arr.flags.writeable:
        arr = arr.copy()
    return torch.as_tensor(arr, dtype=dtype)


@torch.no_grad()
def encode(model: nn.Module, batch, chunk: int = 1024) -> np.ndarray:
    """Evaluation-mode forward pass; returns a float64 numpy array."""
    arr = check_batch(batch, model.config)
    was_training = model.training
    model.eval()
    try:
        outs = [model(to_tensor(arr[i:i + chunk], model)) for i in range(0, len(arr), chunk)]
    finally:
        model.train(was_training)
    if not outs:
        return np.empty((0,), dtype=np.float64)
    return torch.cat(outs).double().numpy()


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    stage: str,
    *,
    seed: int | None = None,
    epoch: int | None = None,
    extra: dict[str, Any] | None = None,
) -> Path:
    path = Path(path)
    state = model.state_dict()
    tensors, offset, chunks = [], 0, []
    for name, t in state.items():
        arr = t.detach().cpu().contiguous().numpy()
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        tensors.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "stage": stage,
        "encoder": asdict(model.config),
        "seed": seed,
        "epoch": epoch,
        "extra": extra or {},
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for raw in chunks:
            fh.write(raw)
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    blob = Path(path).read_bytes()
    if blob[:len(_MAGIC)] != _MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", blob, len(_MAGIC))
    start = len(_MAGIC) + 4
    header = json.loads(blob[start:start + hlen])
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    payload = memoryview(blob)[start + hlen:]
    state = {}
    for t in header["tensors"]:
        dtype = np.dtype(t["dtype"]).newbyteorder("<")
        arr = np.frombuffer(payload[t["offset"]:t["offset"] + t["nbytes"]], dtype=dtype)
        state[t["name"]] = torch.from_numpy(arr.reshape(t["shape"]).astype(dtype.newbyteorder("="), copy=True))
    return header, state


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    """Rebuild the stage's module from a checkpoint; returns (model, header)."""
    header, state = read_checkpoint(path)
    config = EncoderConfig(**header["encoder"])
    if header["stage"] == "pretext":
        model = ResNetEncoder(config)
    elif header["stage"] == "selfsup":
        from carla.selfsup import Classifier

        model = Classifier(ResNetEncoder(config), int(header["extra"]["num_classes"]))
    else:
        raise DataError(f"{path}: unknown stage {header['stage']!r}")
    dtype = next(iter(state.values())).dtype if state else torch.float32
    model = model.to(dtype)
    model.load_state_dict(state)
    model.eval()
    return model, header
