"""Synthetic anomaly injection for single windows.

Five injectors turn a normal window into a negative sample: two point
types (``global``, ``contextual`` spikes) and three subsequence types
(``seasonal`` frequency change, ``trend`` level shift, ``shapelet`` flat
segment). :func:`inject_anomaly` picks the dimensions, a shared start/end
and one injector per dimension, and records every draw in an
:class:`AnomalySpec`.

Statistics use the population standard deviation (``ddof=0``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

ANOMALY_TYPES = ("global", "contextual", "seasonal", "trend", "shapelet")
SEASONAL_FACTORS = (Fraction(1, 3), Fraction(1, 2), Fraction(2), Fraction(3))
COEFFICIENT_RANGE = (3.0, 5.0)
MAX_REGION_FRACTION = 0.9


@dataclass
class DimInjection:
    dim: int
    kind: str
    start: int
    end: int
    coefficient: float | None = None
    sign: int | None = None
    mean: float | None = None
    std: float | None = None
    region: tuple[int, int] = (0, 0)  # half-open [lo, hi) of rows this injector may touch

    @property
    def region_length(self) -> int:
        return self.region[1] - self.region[0]


@dataclass
class AnomalySpec:
    start: int
    end: int
    dims: list[int]
    injections: list[DimInjection] = field(default_factory=list)

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        for inj in self.injections:
            lo, hi = inj.region
            out[lo:hi, inj.dim] = True
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def _check_dim(w: np.ndarray, d: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    if not 0 <= d < w.shape[1]:
        raise IndexError(f"dimension {d} out of range for window with {w.shape[1]} dims")
    return w


def _check_span(s: int, e: int, length: int, inclusive: bool) -> None:
    hi = length - 1 if inclusive else length
    if not (0 <= s < e <= hi):
        raise IndexError(f"need 0 <= s < e <= {hi}, got s={s}, e={e}")


def _restore(w_in, out: np.ndarray) -> np.ndarray:
    return out[:, 0] if np.ndim(w_in) == 1 else out


def inject_global(w, d: int, s: int, g: float, sign: int = 1) -> np.ndarray:
    """Spike at ``s``: mean of the whole dimension plus/minus ``g`` std."""
    x = _check_dim(w, d)
    if not 0 <= s < x.shape[0]:
        raise IndexError(f"s={s} outside window of length {x.shape[0]}")
    out = x.copy()
    col = x[:, d]
    out[s, d] = col.mean() + (1 if sign >= 0 else -1) * g * col.std()
    return _restore(w, out)


def inject_contextual(w, d: int, s: int, x: float, s_ctx: int, e_ctx: int, sign: int = 1) -> np.ndarray:
    """Spike at ``s`` scaled by the statistics of ``w[s_ctx:e_ctx, d]``."""
    arr = _check_dim(w, d)
    if not (0 <= s_ctx < e_ctx <= arr.shape[0]) or not s_ctx <= s < e_ctx:
        raise IndexError(f"invalid context [{s_ctx}, {e_ctx}) for s={s}")
    out = arr.copy()
    ctx = arr[s_ctx:e_ctx, d]
    out[s, d] = ctx.mean() + (1 if sign >= 0 else -1) * x * ctx.std()
    return _restore(w, out)


def seasonal_source_index(t: int, s: int, e: int, k: Fraction) -> int:
    """Row that output row ``t`` copies from inside a seasonal segment [s, e)."""
    n = e - s
    shifted = ((t - s) * k.numerator) // k.denominator
    if k > 1:
        return s + shifted % n
    return s + shifted


def inject_seasonal(w, d: int, s: int, e: int, k) -> np.ndarray:
    """Re-sample ``w[s:e, d]`` at ``k`` times its frequency (end exclusive)."""
    arr = _check_dim(w, d)
    _check_span(s, e, arr.shape[0], inclusive=False)
    k = Fraction(k).limit_denominator(12)
    if k <= 0 or k == 1:
        raise ValueError(f"frequency factor must be positive and != 1, got {k}")
    out = arr.copy()
    src = [seasonal_source_index(t, s, e, k) for t in range(s, e)]
    out[s:e, d] = arr[src, d]
    return _restore(w, out)


def inject_trend(w, d: int, s: int, e: int, b: float) -> np.ndarray:
    """Shift rows ``s..e`` (inclusive) by ``b`` window standard deviations."""
    arr = _check_dim(w, d)
    _check_span(s, e, arr.shape[0], inclusive=True)
    out = arr.copy()
    out[s:e + 1, d] += b * arr[:, d].std()
    return _restore(w, out)


def inject_shapelet(w, d: int, s: int, e: int) -> np.ndarray:
    """Hold rows ``s..e`` (inclusive) at the value of row ``s``."""
    arr = _check_dim(w, d)
    _check_span(s, e, arr.shape[0], inclusive=True)
    out = arr.copy()
    out[s:e + 1, d] = arr[s, d]
    return _restore(w, out)


def max_dims(n_dims: int) -> int:
    return max(1, math.ceil(n_dims / 10))


def choose_dims(n_dims: int, rng: np.random.Generator) -> list[int]:
    if n_dims < 1:
        raise ValueError("need at least one dimension")
    count = int(rng.integers(1, max_dims(n_dims) + 1))
    return sorted(int(i) for i in rng.choice(n_dims, size=count, replace=False))


def max_span(window_size: int) -> int:
    """Largest ``e - s``; inclusive-end injectors then touch ``e - s + 1`` rows."""
    return max(1, math.floor(MAX_REGION_FRACTION * window_size) - 1)


def inject_anomaly(
    w,
    rng: np.random.Generator,
    types: Sequence[str] = ANOMALY_TYPES,
) -> tuple[np.ndarray, AnomalySpec]:
    """Return an injected copy of window ``w`` (WS x Dim) and the draws made.

    All affected dimensions share one ``(s, e)``; each draws its own type.
    """
    x = np.asarray(w, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    ws, n_dims = x.shape
    if ws < 2:
        raise ValueError("window must have at least 2 rows")
    if not types:
        raise ValueError("empty anomaly type pool")
    unknown = set(types) - set(ANOMALY_TYPES)
    if unknown:
        raise ValueError(f"unknown anomaly types: {sorted(unknown)}")

    dims = choose_dims(n_dims, rng)
    span = int(rng.integers(1, max_span(ws) + 1))
    s = int(rng.integers(0, ws - span))
    e = s + span
    spec = AnomalySpec(start=s, end=e, dims=dims)
    out = x.copy()
    lo, hi = COEFFICIENT_RANGE
    for d in dims:
        kind = types[int(rng.integers(len(types)))]
        inj = DimInjection(dim=d, kind=kind, start=s, end=e)
        if kind == "global":
            inj.coefficient = float(rng.uniform(lo, hi))
            inj.sign = 1 if rng.random() < 0.5 else -1
            inj.mean, inj.std = float(x[:, d].mean()), float(x[:, d].std())
            inj.region = (s, s + 1)
            out[:, d] = inject_global(x, d, s, inj.coefficient, inj.sign)[:, d]
        elif kind == "contextual":
            inj.coefficient = float(rng.uniform(lo, hi))
            inj.sign = 1 if rng.random() < 0.5 else -1
            ctx = x[s:e + 1, d]
            inj.mean, inj.std = float(ctx.mean()), float(ctx.std())
            inj.region = (s, s + 1)
            out[:, d] = inject_contextual(x, d, s, inj.coefficient, s, e + 1, inj.sign)[:, d]
        elif kind == "seasonal":
            k = SEASONAL_FACTORS[int(rng.integers(len(SEASONAL_FACTORS)))]
            inj.coefficient = float(k)
            inj.region = (s, e)
            out[:, d] = inject_seasonal(x, d, s, e, k)[:, d]
        elif kind == "trend":
            inj.coefficient = float(rng.uniform(lo, hi))
            inj.mean, inj.std = float(x[:, d].mean()), float(x[:, d].std())
            inj.region = (s, e + 1)
            out[:, d] = inject_trend(x, d, s, e, inj.coefficient)[:, d]
        else:
            inj.region = (s, e + 1)
            out[:, d] = inject_shapelet(x, d, s, e)[:, d]
        spec.injections.append(inj)
    return (out[:, 0] if squeeze else out), spec
