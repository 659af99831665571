"""Time the numba and numpy versions of each hot kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Shapes mirror the pipeline: assigning a pooled client upload to 15 centroids
in a 50-dim PCA space, and the attack's nearest-neighbour search from 200
queries against a 600-row noisy reference set.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from fedcohort import kernels
from fedcohort._accel import HAVE_NUMBA


def best_of(fn, args, repeat: int) -> float:
    fn(*args)  # warm-up, includes JIT compilation for the numba path
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0, help="multiply row counts")
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    n = int(14_400 * args.scale)
    cases = {
        "nearest_centroid": (
            kernels.nearest_centroid_numba, kernels.nearest_centroid_numpy,
            (rng.normal(size=(n, 50)), rng.normal(size=(15, 50))),
        ),
        "min_distance": (
            kernels.min_distance_numba, kernels.min_distance_numpy,
            (rng.normal(size=(int(200 * args.scale), 50)), rng.normal(size=(int(600 * args.scale), 50))),
        ),
    }
    if not HAVE_NUMBA:
        print("numba is not installed; the numba column runs the same loops as plain Python")
    print(f"{'kernel':<18}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>10}")
    for name, (fast, ref, inputs) in cases.items():
        a = fast(*inputs)
        b = ref(*inputs)
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            assert np.allclose(u, v, rtol=1e-10, atol=1e-10), f"{name}: paths disagree"
        t_fast = best_of(fast, inputs, args.repeat)
        t_ref = best_of(ref, inputs, args.repeat)
        print(f"{name:<18}{t_fast * 1e3:>12.2f}{t_ref * 1e3:>12.2f}{t_ref / t_fast:>9.1f}x")


if __name__ == "__main__":
    main()
