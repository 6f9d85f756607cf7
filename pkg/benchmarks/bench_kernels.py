"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--sizes 1000 4000] [--repeat 3]

Prints one row per (kernel, size, backend) with the best-of-N wall time and
checks that both backends return identical results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from carla import _backend


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[1000, 4000])
    parser.add_argument("--rep-dim", type=int, default=128)
    parser.add_argument("--q", type=int, default=5)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    backends = sorted(_backend.available_backends())
    print(f"backends: {', '.join(backends)} (default: {_backend.BACKEND})")
    print(f"{'kernel':<14}{'n':>9}  {'backend':<8}{'seconds':>10}{'speedup':>9}")
    rng = np.random.default_rng(0)
    for n in args.sizes:
        reps = rng.normal(size=(n, args.rep_dim))
        labels = np.zeros(n * 50, dtype=np.int8)
        for start in rng.integers(0, n * 50 - 200, size=n // 10):
            labels[start:start + rng.integers(1, 200)] = 1
        scores = rng.random(n * 50)
        preds = (scores > 0.9).astype(np.int8)
        cases = {
            "knn_extremes": lambda b: _backend.knn_extremes(reps, args.q, backend=b),
            "point_adjust": lambda b: _backend.point_adjust(preds, labels, backend=b),
            "adjust_scores": lambda b: _backend.adjust_scores(scores, labels, backend=b),
        }
        for name, fn in cases.items():
            results = {b: fn(b) for b in backends}
            ref = results[backends[0]]
            for b in backends[1:]:
                same = (all(np.array_equal(x, y) for x, y in zip(ref, results[b]))
                        if isinstance(ref, tuple) else np.array_equal(ref, results[b]))
                if not same:
                    raise SystemExit(f"{name}: backends disagree at n={n}")
            timings = {b: best_of(lambda: fn(b), args.repeat) for b in backends}
            slowest = max(timings.values())
            size = n if name == "knn_extremes" else n * 50
            for b in backends:
                print(f"{name:<14}{size:>9}  {b:<8}{timings[b]:>10.4f}{slowest / timings[b]:>8.1f}x")


if __name__ == "__main__":
    main()
