"""Time the numba and numpy Extra-Trees kernels on the same data.

    python3 benchmarks/bench_kernels.py [--rows 500] [--features 193] [--trees 50]

Both backends grow identical trees (checked before timing), so the
comparison is purely about speed.
"""

import argparse
import time

import numpy as np

from coughforest import _jit
from coughforest._tree_kernels import apply_tree, grow_tree
from coughforest.ensemble import ExtraTreesClassifier


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=500)
    ap.add_argument("--features", type=int, default=193)
    ap.add_argument("--trees", type=int, default=50)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    X = rng.normal(size=(args.rows, args.features))
    y = (X[:, :5].sum(axis=1) + rng.normal(scale=0.5, size=args.rows) > 0).astype(np.int64)
    mf = int(np.ceil(np.sqrt(args.features)))

    results = {}
    trees = {}
    for name in ("numba", "numpy"):
        previous = _jit.set_backend(name)
        try:
            trees[name] = grow_tree(X, y, mf, 7)  # also warms the JIT
            apply_tree(X, *trees[name][:4])
            results[name] = {
                "grow_tree": _time(lambda: grow_tree(X, y, mf, 7), args.repeats),
                "apply_tree": _time(lambda: apply_tree(X, *trees[name][:4]), args.repeats),
                "extra_trees_fit": _time(
                    lambda: ExtraTreesClassifier(args.trees, seed=1).fit(X, y), args.repeats),
            }
        finally:
            _jit.set_backend(previous)

    same = all(np.array_equal(a, b) for a, b in zip(trees["numba"], trees["numpy"]))
    print(f"data {args.rows}x{args.features}, {args.trees} trees; identical trees: {same}")
    print(f"{'kernel':<18}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for kernel in results["numba"]:
        a, b = results["numba"][kernel] * 1e3, results["numpy"][kernel] * 1e3
        print(f"{kernel:<18}{a:>12.2f}{b:>12.2f}{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
