"""Run configuration: defaults, YAML file format and seed derivation.

The config file is YAML with one mapping per section::

    seed: 0
    deterministic: false
    out: runs/carla
    data: {path: bench/, window_size: 200, stride: 1, projection: causal}
    encoder: {kernel_sizes: [8, 5, 3], channels: [64, 128, 128], rep_dim: 128}
    pretext: {margin: 1.0, proximity: 10, epochs: 30, batch_size: 128, lr: 0.0001, ...}
    selfsup: {num_classes: 10, num_neighbors: 5, entropy_weight: 5.0, epochs: 100, ...}

Per-stage seeds are not part of the file; they derive from the root seed.
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from carla.errors import DataError, UsageError
from carla.inject import ANOMALY_TYPES
from carla.pretext import PretextConfig
from carla.selfsup import SelfSupConfig


@dataclass
class DataConfig:
    path: Optional[str] = None
    window_size: int = 200
    # stride of training windows; scoring always slides by 1
    stride: int = 1
    projection: str = "causal"


@dataclass
class EncoderSection:
    kernel_sizes: list[int] = field(default_factory=lambda: [8, 5, 3])
    channels: list[int] = field(default_factory=lambda: [64, 128, 128])
    rep_dim: int = 128


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = False
    out: str = "runs/carla"
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    pretext: PretextConfig = field(default_factory=PretextConfig)
    selfsup: SelfSupConfig = field(default_factory=SelfSupConfig)


SECTIONS = {"data": DataConfig, "encoder": EncoderSection, "pretext": PretextConfig, "selfsup": SelfSupConfig}
TOP_LEVEL = ("seed", "deterministic", "out")
_HIDDEN = {"seed"}


def section_fields(section: str) -> list[dataclasses.Field]:
    return [f for f in dataclasses.fields(SECTIONS[section]) if f.name not in _HIDDEN]


def to_dict(config: RunConfig) -> dict:
    out: dict[str, Any] = {k: getattr(config, k) for k in TOP_LEVEL}
    for name in SECTIONS:
        sec = getattr(config, name)
        out[name] = {f.name: _plain(getattr(sec, f.name)) for f in section_fields(name)}
    return out


def _plain(v):
    return list(v) if isinstance(v, (list, tuple)) else v


def from_dict(d: dict) -> RunConfig:
    unknown = set(d) - set(TOP_LEVEL) - set(SECTIONS)
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {k: d[k] for k in TOP_LEVEL if k in d}
    for name, cls in SECTIONS.items():
        raw = d.get(name) or {}
        allowed = {f.name for f in section_fields(name)}
        bad = set(raw) - allowed
        if bad:
            raise DataError(f"unknown keys in [{name}]: {sorted(bad)}")
        try:
            kwargs[name] = cls(**raw)
        except (TypeError, ValueError) as exc:
            raise DataError(f"invalid [{name}] section: {exc}") from None
    return RunConfig(**kwargs)


def dump_config(config: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(to_dict(config), sort_keys=False))
    return path


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise DataError(f"{path}: config must be a mapping")
    return from_dict(data)


def with_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Apply ``{"section.field": value}`` / ``{"seed": value}`` overrides."""
    d = to_dict(config)
    for key, value in overrides.items():
        if "." in key:
            sec, name = key.split(".", 1)
            d[sec][name] = value
        else:
            d[key] = value
    return from_dict(d)


def derive_seed(root: int, *keys: str) -> int:
    """Stable child seed for a named component (independent of hash seeds)."""
    entropy = [int(root)] + [zlib.crc32(k.encode()) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])


ABLATION_SWITCHES = (
    "drop-anomaly-type:<type>",
    "positive:noise",
    "positive:temporal",
    "loss:no-inconsistency",
    "loss:no-entropy",
)


def apply_switch(config: RunConfig, switch: str) -> RunConfig:
    kind, _, arg = switch.partition(":")
    if kind == "drop-anomaly-type":
        if arg not in ANOMALY_TYPES:
            raise UsageError(f"unknown anomaly type in switch {switch!r}; choose from {ANOMALY_TYPES}")
        pool = [t for t in config.pretext.anomaly_types if t != arg]
        if not pool:
            raise UsageError(f"switch {switch!r} would leave no anomaly types")
        return with_overrides(config, {"pretext.anomaly_types": pool})
    if kind == "positive" and arg in ("noise", "temporal"):
        return with_overrides(config, {"pretext.positive": arg})
    if switch == "loss:no-inconsistency":
        return with_overrides(config, {"selfsup.inconsistency": False})
    if switch == "loss:no-entropy":
        return with_overrides(config, {"selfsup.entropy_weight": 0.0})
    raise UsageError(f"unknown ablation switch {switch!r}; expected one of {ABLATION_SWITCHES}")
