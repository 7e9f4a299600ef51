"""Time the neighbourhood kernels and a full metric under both backends.

    python3 benchmarks/bench_kernels.py [--n 200000] [--repeat 3]

Neighbour rows are computed once and shared, so the kernel timings isolate the
per-point statistics.  The first numba call (JIT compile or cache load) is
excluded.
"""

import argparse
import time

import numpy as np

from p2dqa import _accel
from p2dqa.kernels import color_distances, geometry_distances
from p2dqa.knn import KnnIndex
from p2dqa.metrics import MetricConfig, compute_metrics
from p2dqa.synth import DegradationSpec, degrade, make_cloud


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    ref = make_cloud("sphere", args.n, "gradient", 0)
    deg = degrade(degrade(ref, DegradationSpec("geometry-gaussian", 0.002, 1)),
                  DegradationSpec("color-gaussian", 5, 2))
    t0 = time.perf_counter()
    index = KnnIndex(deg.points)
    nbr40, _ = index.query(ref.points, 40)
    print(f"n={args.n}  knn k=40: {time.perf_counter() - t0:.2f}s")
    nbr15 = np.ascontiguousarray(nbr40[:, :15])
    src_y = ref.colors[:, 1].astype(float)
    tgt_y = deg.colors[:, 1].astype(float)

    backends = ["numpy"] + (["numba"] if _accel.HAS_NUMBA else [])
    results = {}
    for name in backends:
        _accel.set_backend(name)
        color_distances(src_y[:10], tgt_y, nbr15[:10])
        geometry_distances(ref.points[:10], deg.points, nbr40[:10])
        tc, c = best_of(lambda: color_distances(src_y, tgt_y, nbr15), args.repeat)
        tg, g = best_of(lambda: geometry_distances(ref.points, deg.points, nbr40), args.repeat)
        results[name] = (c, g)
        print(f"{name:>6}  color k=15: {tc:7.3f}s   geometry k=40: {tg:7.3f}s")

    if len(results) == 2:
        (c0, g0), (c1, g1) = results.values()
        print(f"max |numpy - numba|  color {np.max(np.abs(c0 - c1)):.2e}  "
              f"geometry {np.max(np.abs(g0 - g1)):.2e}")

    small = min(args.n, 20_000)
    a = make_cloud("sphere", small, "gradient", 0)
    b = degrade(a, DegradationSpec("color-gaussian", 5, 1))
    for name in backends:
        _accel.set_backend(name)
        t, _ = best_of(lambda: compute_metrics(a, b, ["p2d-g", "p2d-y", "p2d-jgy"],
                                               MetricConfig()), 1)
        print(f"{name:>6}  p2d-g + p2d-y + p2d-jgy on {small} points: {t:.2f}s")


if __name__ == "__main__":
    main()
