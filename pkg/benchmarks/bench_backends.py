"""Benchmark the compiled kernels against the pure-numpy fallback.

The online greedy loop spends essentially all of its time in the
``*_gains``/``*_many`` kernels, so this script times exactly those, plus one
end-to-end swapping search per backend::

    python benchmarks/bench_backends.py --d 300 --k 40 --r 20 --samples 8

Kernel outputs are cross-checked to 1e-9 before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from oedplace import SampleAverageGainCriterion, swapping_greedy
from oedplace.backend import available_backends, get_kernels
from oedplace.lowrank import LowRankHessian


def _random_surrogate(rng, d, k):
    basis, _ = np.linalg.qr(rng.standard_normal((d, k)))
    eigenvalues = 2.0 ** -np.arange(k, dtype=float)
    return basis, eigenvalues


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--d", type=int, default=300, help="candidate rows")
    parser.add_argument("--k", type=int, default=40, help="surrogate rank")
    parser.add_argument("--r", type=int, default=20, help="design size")
    parser.add_argument("--samples", type=int, default=8,
                        help="surrogates for the sample-averaged criterion")
    parser.add_argument("--repeat", type=int, default=5, help="best-of repeats")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    basis, lam = _random_surrogate(rng, args.d, args.k)
    bases = [basis] + [
        _random_surrogate(rng, args.d, args.k)[0] for _ in range(args.samples - 1)
    ]
    us = np.stack(bases)
    lams = np.tile(lam, (args.samples, 1))
    base_rows = np.arange(args.r - 1, dtype=np.intp)
    cands = np.arange(args.r - 1, args.d, dtype=np.intp)

    backends = list(available_backends())
    print(f"backends available: {', '.join(backends)}")
    if len(backends) < 2:
        print("compiled kernels not built; timing the pure backend only")

    kernels = {name: get_kernels(name) for name in backends}
    reference = {
        "logdet_gains": kernels[backends[0]].logdet_gains(basis, lam, base_rows, cands),
        "la_gains": kernels[backends[0]].la_gains(us, lams, base_rows, cands),
    }
    for name, kern in kernels.items():
        if not np.allclose(kern.logdet_gains(basis, lam, base_rows, cands),
                           reference["logdet_gains"], atol=1e-9):
            raise AssertionError(f"{name} logdet_gains disagrees")
        if not np.allclose(kern.la_gains(us, lams, base_rows, cands),
                           reference["la_gains"], atol=1e-9):
            raise AssertionError(f"{name} la_gains disagrees")

    rows = []
    for name, kern in kernels.items():
        rows.append((f"logdet_gains[{name}]", _time(
            lambda: kern.logdet_gains(basis, lam, base_rows, cands), args.repeat)))
        rows.append((f"la_gains[{name}]", _time(
            lambda: kern.la_gains(us, lams, base_rows, cands), args.repeat)))

        lowranks = [
            LowRankHessian(basis=b, eigenvalues=lam, trailing_logdet=0.0,
                           trailing_exact=True, rank_deficient=False)
            for b in bases
        ]
        criterion = SampleAverageGainCriterion(lowranks, kernels=kern)

        def search():
            swapping_greedy(criterion, args.d, args.r,
                            init_bases=[lr.basis for lr in lowranks])

        rows.append((f"swapping_greedy[{name}]", _time(search, args.repeat)))

    width = max(len(label) for label, _ in rows)
    print(f"\n{'kernel':<{width}}  best of {args.repeat} (s)")
    for label, seconds in rows:
        print(f"{label:<{width}}  {seconds:10.6f}")
    if len(backends) == 2:
        for op in ("logdet_gains", "la_gains", "swapping_greedy"):
            t = {name: sec for label, sec in rows for name in backends
                 if label == f"{op}[{name}]"}
            if len(t) == 2 and t["compiled"] > 0:
                print(f"{op}: compiled is {t['pure'] / t['compiled']:.2f}x "
                      "the pure backend")


if __name__ == "__main__":
    main()
