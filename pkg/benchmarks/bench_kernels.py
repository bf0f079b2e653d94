"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each row reports the median wall time per call and the speedup. Outputs of
the two backends are compared before timing; a mismatch aborts the run.
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from srtr._kernels import _pykernels as python

try:
    from srtr._kernels import _ckernels as compiled
except ImportError:
    compiled = None


def _boxes(rng, n):
    return np.concatenate([rng.uniform(0.2, 0.8, (n, 2)), rng.uniform(0.05, 0.4, (n, 2))], 1)


def workloads(rng):
    levels = [(6, 6), (12, 12)]
    return {
        "linear_sum_assignment 40x12": ("linear_sum_assignment", (rng.random((40, 12)),)),
        "linear_sum_assignment 200x60": ("linear_sum_assignment", (rng.random((200, 60)),)),
        "bilinear_pool_matrix 20 boxes": ("bilinear_pool_matrix", (_boxes(rng, 20), levels)),
        "bilinear_pool_jacobian 20 boxes": ("bilinear_pool_jacobian", (_boxes(rng, 20), levels)),
        "pairwise_iou 200x200": ("pairwise_iou", (_boxes(rng, 200), _boxes(rng, 200))),
    }


def _median_time(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':34s} {'python':>11s} {'cython':>11s} {'speedup':>8s}")
    for label, (name, inputs) in workloads(rng).items():
        py_fn, c_fn = getattr(python, name), getattr(compiled, name)
        a, b = py_fn(*inputs), c_fn(*inputs)
        a, b = (a if isinstance(a, tuple) else (a,)), (b if isinstance(b, tuple) else (b,))
        if not all(np.array_equal(x, y) for x, y in zip(a, b)):
            print(f"{label}: backends disagree", file=sys.stderr)
            return 1
        tp = _median_time(py_fn, inputs, args.repeat)
        tc = _median_time(c_fn, inputs, args.repeat)
        print(f"{label:34s} {tp * 1e3:9.3f}ms {tc * 1e3:9.3f}ms {tp / tc:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
