"""Compiled vs numpy kernels on dataset-building and evaluation workloads.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from urbannav import kernels


def workloads(rng):
    n = 20_000
    yaw = np.cumsum(rng.normal(0, 0.05, n))
    xy = np.cumsum(np.stack([-np.sin(yaw), np.cos(yaw)], 1), 0)
    anchors = np.arange(5, n - 25)
    offsets = np.empty((len(anchors), 11), dtype=np.int64)
    offsets[:, :5] = np.arange(-4, 1)
    offsets[:, 5:10] = np.arange(1, 6)
    offsets[:, 10] = rng.integers(5, 26, len(anchors))
    pred = rng.normal(size=(100_000, 5, 2))
    gt = rng.normal(size=(100_000, 5, 2))
    return {
        "relative_positions (20k anchors x 11)": lambda impl: kernels.relative_positions(xy, yaw, anchors, offsets, impl=impl),
        "mean_step_length (20k poses)": lambda impl: kernels.mean_step_length(xy, impl=impl),
        "orientation_errors (100k x 5 pairs)": lambda impl: kernels.orientation_errors(pred, gt, impl=impl),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = kernels.backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(sorted(impls))}")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} " + " ".join(f"{k:>12s}" for k in sorted(impls)) + "   speedup")
    for name, fn in workloads(rng).items():
        best = {}
        for k, impl in sorted(impls.items()):
            fn(impl)
            best[k] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        outs = {k: fn(impl) for k, impl in impls.items()}
        first = lambda o: np.asarray(o[0] if isinstance(o, tuple) else o)
        for k, out in outs.items():
            assert np.allclose(first(out), first(outs["python"]), atol=1e-9), (name, k)
        speed = best["python"] / best["cython"] if "cython" in best else float("nan")
        print(f"{name:40s} " + " ".join(f"{best[k] * 1e3:10.2f}ms" for k in sorted(best)) + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
