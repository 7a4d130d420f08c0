"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_backends.py [--n 20000] [--trees 100] [--repeat 3]

Each kernel runs once untimed per backend (numba compilation), then the best
of ``--repeat`` runs is reported.
"""

import argparse
import os
import time

import numpy as np

from shiftscope.models import fit_gbdt, predict
from shiftscope.shapley import treeshap_matrix
from shiftscope.tabular import ShiftScenario, generate_scenario


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    ref, _ = generate_scenario(ShiftScenario("sensitivity", 0.5, n=args.n, seed=0))
    os.environ["SHIFTSCOPE_BACKEND"] = "numba"
    model = fit_gbdt(ref, depth=args.depth, n_trees=args.trees)

    kernels = {
        "fit_gbdt": lambda: fit_gbdt(ref, depth=args.depth, n_trees=args.trees),
        "predict": lambda: predict(model, ref),
        "treeshap": lambda: treeshap_matrix(model, ref.features),
    }
    print(f"n={args.n} p={ref.p} trees={args.trees} depth={args.depth}")
    print(f"{'kernel':<10} {'numba s':>10} {'numpy s':>10} {'speedup':>8}")
    outputs = {}
    for name, fn in kernels.items():
        row = {}
        for backend in ("numba", "numpy"):
            os.environ["SHIFTSCOPE_BACKEND"] = backend
            row[backend] = best_of(fn, args.repeat)
            outputs[name, backend] = fn()
        print(f"{name:<10} {row['numba']:>10.3f} {row['numpy']:>10.3f} "
              f"{row['numpy'] / row['numba']:>7.1f}x")

    gap = np.max(np.abs(outputs["treeshap", "numba"] - outputs["treeshap", "numpy"]))
    print(f"max |treeshap numba - numpy| = {gap:.2e}")


if __name__ == "__main__":
    main()
