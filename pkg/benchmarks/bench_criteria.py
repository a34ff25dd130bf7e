"""Criterion-kernel benchmark: numba backend vs pure-numpy fallback.

Times every removal-ranking kernel over flat coordinate arrays of the
sizes a real mask update scores, on both backends, and prints the
speedup table. Run directly:

    python benchmarks/bench_criteria.py [--sizes 100000,1000000] [--repeats 5]

The numba path pays a one-off JIT compile that is excluded by a warmup
call per kernel.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ssvi import backend
from ssvi.gaussian_stats import CriterionKind, ranking_scores

KINDS = [
    CriterionKind.parse("abs_mu"),
    CriterionKind.parse("snr_theta"),
    CriterionKind.parse("e_abs"),
    CriterionKind.parse("snr_abs"),
    CriterionKind.parse("e_exp_abs", 1.0),
    CriterionKind.parse("snr_exp_abs", 1.0),
]


def time_kernel(kind: CriterionKind, mu: np.ndarray, sigma: np.ndarray,
                repeats: int) -> float:
    ranking_scores(mu[:64], sigma[:64], kind)  # warmup / JIT compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        ranking_scores(mu, sigma, kind)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="100000,1000000",
                        help="comma-separated array lengths")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]

    rng = np.random.default_rng(0)
    original = backend.active_backend_name()
    try:
        for n in sizes:
            mu = rng.uniform(-5.0, 5.0, n)
            sigma = rng.uniform(1e-3, 2.0, n)
            print(f"\nn = {n:,} coordinates (best of {args.repeats})")
            print(f"{'kernel':<14} {'numpy':>10} {'numba':>10} {'speedup':>8}")
            for kind in KINDS:
                rows = {}
                for name in ("numpy", "numba"):
                    try:
                        backend.set_backend(name)
                    except Exception as exc:  # numba missing
                        rows[name] = None
                        print(f"  backend {name} unavailable: {exc}")
                        continue
                    rows[name] = time_kernel(kind, mu, sigma, args.repeats)
                if rows.get("numpy") and rows.get("numba"):
                    print(f"{kind.name:<14} {rows['numpy'] * 1e3:>8.2f}ms "
                          f"{rows['numba'] * 1e3:>8.2f}ms "
                          f"{rows['numpy'] / rows['numba']:>7.1f}x")
    finally:
        backend.set_backend(original)


if __name__ == "__main__":
    main()
