"""Compare the compiled kernels with the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel: median wall time of each backend, the speedup,
and the largest absolute difference between their outputs.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from mbda import _kernels
from mbda._kernels import _fallback


def _time(fn, repeat):
    out, times = None, []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times), out


def _cases():
    g = np.random.default_rng(0)
    v = g.normal(size=(20000, 8))
    A = g.normal(size=(12, 12))
    H = A @ A.T
    gv = g.normal(size=12)
    return {
        "counter_uniforms 2e5x6": lambda k: k.counter_uniforms(42, 3, 0, 200_000, 6),
        "project_simplex 2e4x8": lambda k: k.project_simplex(v),
        "simplex_qp 12 (x200)": lambda k: [k.simplex_qp(H, gv + i * 1e-3) for i in range(200)],
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.BACKEND != "cython":
        print("compiled core not available; build with `pip install -e . --no-build-isolation`")
        return
    from mbda._kernels import _core

    print(f"{'kernel':<26}{'cython s':>12}{'python s':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, fn in _cases().items():
        tc, oc = _time(lambda: fn(_core), args.repeat)
        tp, op = _time(lambda: fn(_fallback), args.repeat)
        diff = float(np.max(np.abs(np.asarray(oc) - np.asarray(op))))
        print(f"{name:<26}{tc:>12.5f}{tp:>12.5f}{tp / tc:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
