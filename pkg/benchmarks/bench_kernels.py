"""Benchmark the compiled kernel backend against the NumPy fallback.

Times the six kernel functions at a few batch sizes on sl3 data, checks
that both backends agree, and prints a speedup table. Run from the
repository root:

    python3 benchmarks/bench_kernels.py --repeats 5
"""

import argparse
import time

import numpy as np

from lienn import kernels
from lienn.algebra import get_algebra


def _cases(batch, rng, algebra):
    sk = algebra.kernel
    k = algebra.dim
    u = rng.normal(size=(batch, k))
    v = rng.normal(size=(batch, k))
    g = rng.normal(size=(batch, k))
    mats = algebra.hat(0.3 * u)
    pos = kernels.expm(mats)
    return [
        ("expm", lambda: kernels.expm(mats)),
        ("logm", lambda: kernels.logm(pos)),
        ("bracket_fwd", lambda: kernels.bracket_fwd(sk, u, v)),
        ("bracket_bwd_u", lambda: kernels.bracket_bwd_u(sk, v, g)),
        ("bracket_bwd_v", lambda: kernels.bracket_bwd_v(sk, u, g)),
        ("bilinear", lambda: kernels.bilinear(algebra.killing, u, v)),
    ]


def _best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batches", type=int, nargs="+", default=[100, 2000, 50000])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    available = kernels.available_backends()
    print(f"available backends: {available}")
    if "fast" not in available:
        print("compiled backend not built; nothing to compare")
        return 0

    algebra = get_algebra("sl3")
    rng = np.random.default_rng(args.seed)
    print(f"{'function':<15s} {'batch':>7s} {'numpy':>10s} {'fast':>10s} {'speedup':>8s}")
    for batch in args.batches:
        cases = _cases(batch, rng, algebra)
        for name, fn in cases:
            with kernels.use_backend("numpy"):
                ref = fn()
                t_np = _best_of(fn, args.repeats)
            with kernels.use_backend("fast"):
                out = fn()
                t_fast = _best_of(fn, args.repeats)
            worst = float(np.max(np.abs(np.asarray(out) - np.asarray(ref))))
            if worst > 1e-10:
                print(f"backend mismatch in {name} at batch {batch}: {worst:.3e}")
                return 1
            print(
                f"{name:<15s} {batch:>7d} {t_np*1e3:>9.3f}ms {t_fast*1e3:>9.3f}ms "
                f"{t_np/t_fast:>7.2f}x"
            )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
