"""Time-series containers, CSV entity layout, normalisation and windowing.

An entity directory holds ``train.csv``, ``test.csv`` (header ``d0,...``),
``test_labels.csv`` (header ``label``) and an optional ``meta.json``. A
benchmark is a directory of entity directories plus ``manifest.json``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from carla.errors import DataError


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray
    dim_names: Optional[list[str]] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"series must be a non-empty T x Dim array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("series contains NaN or Inf")
        if self.dim_names is not None and len(self.dim_names) != values.shape[1]:
            raise DataError("dim_names length does not match Dim")
        object.__setattr__(self, "values", values)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LabeledSeries:
    series: TimeSeries
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] != self.series.length:
            raise DataError(
                f"labels length {labels.shape[0] if labels.ndim else 0} != series length {self.series.length}"
            )
        if not np.isin(labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        object.__setattr__(self, "labels", labels.astype(np.int8))


@dataclass(frozen=True)
class WindowView:
    start: int
    length: int

    def slice(self, series: TimeSeries) -> np.ndarray:
        return series.values[self.start:self.start + self.length]


@dataclass(frozen=True)
class BenchmarkEntity:
    name: str
    train: TimeSeries
    test: LabeledSeries

    def __post_init__(self):
        if self.train.dims != self.test.series.dims:
            raise DataError(
                f"entity {self.name!r}: train Dim {self.train.dims} != test Dim {self.test.series.dims}"
            )


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    zero_std: np.ndarray = field(default=None)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise DataError("mean and std must be 1-D arrays of equal length")
        if (std < 0).any():
            raise DataError("std entries must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "zero_std", std == 0)

    @classmethod
    def from_series(cls, series: TimeSeries) -> "NormStats":
        return cls(series.values.mean(axis=0), series.values.std(axis=0))

    @property
    def scale(self) -> np.ndarray:
        return np.where(self.zero_std, 1.0, self.std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mean"]), np.array(d["std"]))


def normalize(series: TimeSeries, stats: NormStats) -> TimeSeries:
    """Per-dimension z-score; zero-variance dimensions are only centred."""
    if series.dims != stats.mean.shape[0]:
        raise DataError(f"Dim mismatch: series has {series.dims}, stats have {stats.mean.shape[0]}")
    return TimeSeries((series.values - stats.mean) / stats.scale, series.dim_names)


def denormalize(series: TimeSeries, stats: NormStats) -> TimeSeries:
    if series.dims != stats.mean.shape[0]:
        raise DataError(f"Dim mismatch: series has {series.dims}, stats have {stats.mean.shape[0]}")
    return TimeSeries(series.values * stats.scale + stats.mean, series.dim_names)


def window_count(length: int, window_size: int, stride: int = 1) -> int:
    if window_size > length:
        raise DataError(f"window size {window_size} exceeds series length {length}")
    if window_size < 1 or stride < 1:
        raise DataError("window size and stride must be >= 1")
    return (length - window_size) // stride + 1


def sliding_windows(series: TimeSeries, window_size: int, stride: int = 1) -> list[WindowView]:
    m = window_count(series.length, window_size, stride)
    return [WindowView(i * stride, window_size) for i in range(m)]


def window_array(series: TimeSeries, window_size: int, stride: int = 1) -> np.ndarray:
    """Windows as a read-only ``(m, WS, Dim)`` strided view (no copy)."""
    m = window_count(series.length, window_size, stride)
    view = np.lib.stride_tricks.sliding_window_view(series.values, window_size, axis=0)
    # sliding_window_view puts the window axis last: (T-WS+1, Dim, WS)
    return view[: (m - 1) * stride + 1 : stride].transpose(0, 2, 1)


# --------------------------------------------------------------------- CSV I/O


def _read_matrix(path: Path, expect_header: Optional[Sequence[str]] = None) -> tuple[list[str], np.ndarray]:
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if expect_header is not None and header != list(expect_header):
            raise DataError(f"{path}: header {header} != expected {list(expect_header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: ragged row ({len(row)} fields, expected {len(header)})")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric cell in {row}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: NaN or Inf value")
    return header, values


def _write_matrix(path: Path, header: Sequence[str], values: np.ndarray, fmt: str = "%.17g") -> None:
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, values, delimiter=",", fmt=fmt)


def _dim_header(dims: int) -> list[str]:
    return [f"d{k}" for k in range(dims)]


def load_entity(path: str | Path) -> BenchmarkEntity:
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"entity directory not found: {path}")
    train_header, train = _read_matrix(path / "train.csv")
    dims = train.shape[1]
    if train_header != _dim_header(dims):
        raise DataError(f"{path / 'train.csv'}: header must be {_dim_header(dims)}")
    _, test = _read_matrix(path / "test.csv", _dim_header(dims))
    _, labels = _read_matrix(path / "test_labels.csv", ["label"])
    labels = labels[:, 0]
    if labels.shape[0] != test.shape[0]:
        raise DataError(f"{path}: {labels.shape[0]} labels for {test.shape[0]} test rows")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise DataError(f"{path / 'test_labels.csv'}: label values must be 0 or 1")
    name, dim_names = path.name, None
    meta_path = path / "meta.json"
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        name = meta.get("name", name)
        dim_names = meta.get("dim_names")
    return BenchmarkEntity(
        name=name,
        train=TimeSeries(train, dim_names),
        test=LabeledSeries(TimeSeries(test, dim_names), labels.astype(np.int8)),
    )


def save_entity(entity: BenchmarkEntity, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = _dim_header(entity.train.dims)
    _write_matrix(path / "train.csv", header, entity.train.values)
    _write_matrix(path / "test.csv", header, entity.test.series.values)
    _write_matrix(path / "test_labels.csv", ["label"], entity.test.labels[:, None], fmt="%d")
    meta = {"name": entity.name}
    if entity.train.dim_names is not None:
        meta["dim_names"] = list(entity.train.dim_names)
    (path / "meta.json").write_text(json.dumps(meta, indent=2))
    return path


def save_benchmark(entities: Sequence[BenchmarkEntity], path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for ent in entities:
        save_entity(ent, path / ent.name)
    (path / "manifest.json").write_text(json.dumps({"entities": [e.name for e in entities]}, indent=2))
    return path


def load_benchmark(path: str | Path) -> list[BenchmarkEntity]:
    """Load every entity listed in ``manifest.json``; a bare entity dir loads as one."""
    path = Path(path)
    manifest = path / "manifest.json"
    if not manifest.is_file():
        if (path / "train.csv").is_file():
            return [load_entity(path)]
        raise DataError(f"{path}: neither a benchmark (manifest.json) nor an entity directory")
    names = json.loads(manifest.read_text()).get("entities")
    if not isinstance(names, list) or not names:
        raise DataError(f"{manifest}: 'entities' must be a non-empty list")
    return [load_entity(path / name) for name in names]


# ------------------------------------------------------------------- synthesis


def _clean_signal(rng: np.random.Generator, length: int, dims: int) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    out = np.empty((length, dims))
    for d in range(dims):
        n_waves = int(rng.integers(1, 4))
        periods = rng.uniform(16.0, 64.0, size=n_waves)
        amps = rng.uniform(0.5, 2.0, size=n_waves)
        phases = rng.uniform(0.0, 2 * np.pi, size=n_waves)
        signal = (amps[:, None] * np.sin(2 * np.pi * t[None, :] / periods[:, None] + phases[:, None])).sum(0)
        out[:, d] = signal + rng.uniform(-1.0, 1.0) + 0.05 * rng.standard_normal(length)
    return out


def synthesize_entity(seed: int, length: int, dims: int, anomaly_ratio: float, *,
                      name: Optional[str] = None,
                      segment_length: tuple[int, int] = (40, 160)) -> BenchmarkEntity:
    """Clean sinusoidal train split plus a test split with injected segments.

    Train and test are consecutive stretches (``length`` points each) of the
    same generating process. Anomalous segments in the test split are made
    with the subsequence injectors of :mod:`carla.inject`, and only cells
    that actually changed are labelled.
    """
    return _synthesize(seed, length, dims, anomaly_ratio, name, segment_length)[0]


def _synthesize(
    seed: int,
    length: int,
    dims: int,
    anomaly_ratio: float,
    name: Optional[str],
    segment_length: tuple[int, int],
) -> tuple[BenchmarkEntity, np.ndarray]:
    from carla import inject

    lo, hi = segment_length
    if length < 10 or dims < 1 or not 0.0 < anomaly_ratio < 0.5 or not 1 <= lo <= hi or hi * 2 > length:
        raise DataError(
            f"degenerate synthesis parameters: length={length}, dims={dims}, "
            f"anomaly_ratio={anomaly_ratio}, segment_length={segment_length}"
        )
    rng = np.random.default_rng(seed)
    full = _clean_signal(rng, 2 * length, dims)
    train, test = full[:length].copy(), full[length:].copy()
    clean_test = test.copy()

    budget = int(round(anomaly_ratio * length))
    labelled = 0
    occupied = np.zeros(length, dtype=bool)
    attempts = 0
    kinds = ("seasonal", "trend", "shapelet")
    while labelled < budget and attempts < 1000:
        attempts += 1
        seg = int(rng.integers(lo, hi + 1))
        seg = min(seg, max(1, budget - labelled + lo // 2))
        start = int(rng.integers(0, length - seg))
        stop = start + seg
        # keep a one-segment gap so runs stay distinct
        if occupied[max(0, start - seg):min(length, stop + seg)].any():
            continue
        # context around the segment supplies the local statistics
        ctx_lo, ctx_hi = max(0, start - seg), min(length, stop + seg)
        kind = kinds[int(rng.integers(len(kinds)))]
        dims_hit = inject.choose_dims(dims, rng)
        s, e = start - ctx_lo, stop - ctx_lo - 1
        for d in dims_hit:
            window = test[ctx_lo:ctx_hi]
            if kind == "seasonal":
                k = inject.SEASONAL_FACTORS[int(rng.integers(len(inject.SEASONAL_FACTORS)))]
                new = inject.inject_seasonal(window, d, s, e + 1, k)
            elif kind == "trend":
                new = inject.inject_trend(window, d, s, e, float(rng.uniform(3.0, 5.0)))
            else:
                new = inject.inject_shapelet(window, d, s, e)
            test[ctx_lo:ctx_hi] = new
        changed = (test[start:stop] != clean_test[start:stop]).any(axis=1)
        occupied[start:stop] = True
        labelled += int(changed.sum())
    labels = (test != clean_test).any(axis=1).astype(np.int8)
    entity = BenchmarkEntity(
        name=name or f"synth-{seed}",
        train=TimeSeries(train),
        test=LabeledSeries(TimeSeries(test), labels),
    )
    return entity, clean_test


def synthesize_benchmark(
    seed: int, n_entities: int, length: int, dims: int, anomaly_ratio: float, **kwargs
) -> list[BenchmarkEntity]:
    seeds = np.random.SeedSequence(seed).generate_state(n_entities)
    return [
        synthesize_entity(int(s), length, dims, anomaly_ratio, name=f"entity-{k:02d}", **kwargs)
        for k, s in enumerate(seeds)
    ]


def prevalence(labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    return float(labels.mean()) if labels.size else math.nan
