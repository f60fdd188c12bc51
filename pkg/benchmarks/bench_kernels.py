"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both paths are called directly, so the env flag does not matter here. Each
case is checked for equal output before it is timed.
"""
import argparse
import json
import time

import numpy as np

from wipgest import kernels


def cases(rng):
    clouds = rng.random((512, 18, 12))
    train, test = rng.random((4000, 216)), rng.random((500, 216))
    votes = rng.integers(0, 9, (20000, 6))
    signal = np.cumsum(rng.normal(size=20000))
    return {
        "knn (512 clouds, k=4)": (
            lambda: [kernels.knn_indices_numba(c, 4) for c in clouds],
            lambda: [kernels.knn_indices_numpy(c, 4) for c in clouds],
        ),
        "1-NN (4000 x 500, d=216)": (
            lambda: kernels.nearest_neighbor_numba(train, test),
            lambda: kernels.nearest_neighbor_numpy(train, test),
        ),
        "majority vote (20000 x 6)": (
            lambda: kernels.majority_vote_numba(votes, 9),
            lambda: kernels.majority_vote_numpy(votes, 9),
        ),
        "moving average (20000, w=5)": (
            lambda: kernels.moving_average_numba(signal, 5),
            lambda: kernels.moving_average_numpy(signal, 5),
        ),
        "find_peaks (20000, d=5)": (
            lambda: kernels.find_peaks_numba(signal, 0.5, 5),
            lambda: kernels.find_peaks_numpy(signal, 0.5, 5),
        ),
    }


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times) * 1000.0


def same(a, b):
    if isinstance(a, list):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.allclose(a, b)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", help="also write results here")
    args = parser.parse_args(argv)

    results = []
    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, (fast, slow) in cases(np.random.default_rng(args.seed)).items():
        if not same(fast(), slow()):  # also compiles the numba path
            raise SystemExit(f"{name}: numba and numpy outputs differ")
        a, b = best_of(fast, args.repeat), best_of(slow, args.repeat)
        results.append({"kernel": name, "numba_ms": a, "numpy_ms": b, "speedup": b / a})
        print(f"{name:32s} {a:10.3f} {b:10.3f} {b / a:8.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
