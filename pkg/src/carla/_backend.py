"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``CARLA_PURE_PYTHON=1`` to force the numpy kernels.
"""

import os

import numpy as np

from carla import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("CARLA_PURE_PYTHON"):
    try:
        from carla import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def available_backends() -> dict:
    out = {"python": _pykernels}
    try:
        from carla import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out


def knn_extremes(reps, q: int, backend=None):
    impl = _impl if backend is None else available_backends()[backend]
    return impl.knn_extremes(np.ascontiguousarray(reps, dtype=np.float64), int(q))


def point_adjust(preds, labels, backend=None):
    impl = _impl if backend is None else available_backends()[backend]
    return impl.point_adjust(
        np.ascontiguousarray(preds, dtype=np.int8),
        np.ascontiguousarray(labels, dtype=np.int8),
    )


def adjust_scores(scores, labels, backend=None):
    impl = _impl if backend is None else available_backends()[backend]
    return impl.adjust_scores(
        np.ascontiguousarray(scores, dtype=np.float64),
        np.ascontiguousarray(labels, dtype=np.int8),
    )
