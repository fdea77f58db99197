"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once per path before timing so numba compilation is
excluded.  Results are checked for equality between the two paths.
"""

import argparse
import os
import timeit

import numpy as np

from pareto_fair import _accel


def _paths(fn, *args, repeat):
    out = {}
    for flag in ("1", "0"):
        os.environ["PARETO_FAIR_NUMBA"] = flag
        ref = fn(*args)
        t = min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))
        out["numba" if flag == "1" else "numpy"] = (t, ref)
    os.environ.pop("PARETO_FAIR_NUMBA", None)
    (tn, a), (tp, b) = out["numba"], out["numpy"]
    assert np.array_equal(a, b), "paths disagree"
    return tn, tp


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel._HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    cases = []
    for n, d in ((500, 2), (2000, 4), (5000, 3)):
        v = rng.random((n, d))
        cases.append((f"nondominated_mask n={n} d={d}", _accel.nondominated_mask, (v,)))
    for n, G in ((20000, 4), (200000, 8)):
        s = rng.random(n)
        y = rng.integers(0, 2, n)
        g = rng.integers(0, G, n)
        grid = np.linspace(0, 1, 101)
        cases.append((f"sweep_counts n={n} G={G} T=101", _accel.sweep_counts, (s, y, g, G, grid)))
    print(f"{'kernel':<36}{'numba s':>11}{'numpy s':>11}{'speedup':>9}")
    for name, fn, a in cases:
        tn, tp = _paths(fn, *a, repeat=args.repeat)
        print(f"{name:<36}{tn:>11.5f}{tp:>11.5f}{tp / tn:>8.1f}x")


if __name__ == "__main__":
    main()
