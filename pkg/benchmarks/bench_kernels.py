"""Compare the compiled and NumPy kernels on synthetic cohorts.

    python benchmarks/bench_kernels.py [--sizes 200,1000,5000] [--features 20] [--repeats 5]
"""
import argparse
import timeit

import numpy as np

from fedcox import _pykernels
from fedcox.survival import SurvivalDataset

try:
    from fedcox import _ckernels
except ImportError:
    _ckernels = None


def cohort(n, p, rng):
    X = rng.normal(size=(n, p))
    time = rng.integers(0, n // 4 + 1, n).astype(float)  # plenty of ties
    event = rng.random(n) < 0.5
    return SurvivalDataset([f"x{i}" for i in range(p)], X, time, event)


def bench(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="200,1000,5000")
    ap.add_argument("--features", type=int, default=20)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the NumPy kernels are available")
    rng = np.random.default_rng(0)
    header = f"{'kernel':<18}{'n':>7}{'numpy s':>12}{'cython s':>12}{'speedup':>9}"
    print(header)
    for n in (int(s) for s in args.sizes.split(",")):
        d = cohort(n, args.features, rng)
        X, event, group_start = d._sorted
        eta = X @ rng.normal(scale=0.3, size=args.features)
        order = np.argsort(d.time, kind="stable")
        t, e = d.time[order], d.event[order].astype(bool)
        risk = d.covariates[order] @ rng.normal(size=args.features)
        cases = {
            "cox_terms(H)": lambda m: m.cox_terms(X, eta, event, group_start, 2),
            "concordance": lambda m: m.concordance_counts(t, e, risk),
        }
        for name, call in cases.items():
            py = bench(lambda: call(_pykernels), args.repeats)
            if _ckernels is None:
                print(f"{name:<18}{n:>7}{py:>12.5f}{'-':>12}{'-':>9}")
                continue
            cy = bench(lambda: call(_ckernels), args.repeats)
            print(f"{name:<18}{n:>7}{py:>12.5f}{cy:>12.5f}{py / cy:>8.1f}x")


if __name__ == "__main__":
    main()
