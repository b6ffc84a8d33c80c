"""Time the compiled collision kernels against the numpy reference.

Usage: ``python3 benchmarks/bench_kernels.py [--sizes 1000,10000,100000]``.
Both implementations are imported side by side (no env var needed) and
cross-checked for equality on every input before timing.
"""

import argparse
import time

import numpy as np

from aqsim import _kernels_ref

try:
    from aqsim import _kernels_fast
except ImportError:
    _kernels_fast = None

RADIUS = 1.0
R0 = 0.03
DT = 0.01
SPEED = 6.0


def sample_gas(n: int, rng: np.random.Generator):
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    pos = pts * (RADIUS * rng.random(n) ** (1.0 / 3.0))[:, None]
    vel = rng.normal(size=(n, 3))
    vel *= SPEED / np.linalg.norm(vel, axis=1)[:, None]
    return pos, vel


def time_advance(impl, pos, vel, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        p, v = pos.copy(), vel.copy()
        start = time.perf_counter()
        impl.advance_reflect(p, v, DT, RADIUS)
        best = min(best, time.perf_counter() - start)
    return best


def time_pairs(impl, pos, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        impl.build_pairs(pos, R0, RADIUS)
        best = min(best, time.perf_counter() - start)
    return best


def check_agreement(pos, vel) -> None:
    p1, v1 = pos.copy(), vel.copy()
    p2, v2 = pos.copy(), vel.copy()
    ref = _kernels_ref.advance_reflect(p1, v1, DT, RADIUS)
    fast = _kernels_fast.advance_reflect(p2, v2, DT, RADIUS)
    assert np.array_equal(p1, p2) and np.array_equal(v1, v2)
    assert all(np.array_equal(a, b) if isinstance(a, np.ndarray) else a == b
               for a, b in zip(ref, fast))
    assert np.array_equal(_kernels_ref.build_pairs(p1, R0, RADIUS),
                          _kernels_fast.build_pairs(p2, R0, RADIUS))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="1000,10000,100000",
                        help="comma-separated gas sizes")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if _kernels_fast is None:
        print("compiled extension not available; timing the reference only")

    rng = np.random.default_rng(0)
    header = f"{'n':>8}  {'kernel':<16} {'ref ms':>10} {'fast ms':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n in sizes:
        pos, vel = sample_gas(n, rng)
        if _kernels_fast is not None:
            check_agreement(pos, vel)
        for label, timer, extra in (("advance_reflect",
                                     time_advance, (pos, vel)),
                                    ("build_pairs", time_pairs, (pos,))):
            ref_s = timer(_kernels_ref, *extra, repeats=args.repeats)
            if _kernels_fast is None:
                print(f"{n:>8}  {label:<16} {ref_s * 1e3:>10.2f} "
                      f"{'-':>10} {'-':>8}")
                continue
            fast_s = timer(_kernels_fast, *extra, repeats=args.repeats)
            print(f"{n:>8}  {label:<16} {ref_s * 1e3:>10.2f} "
                  f"{fast_s * 1e3:>10.2f} {ref_s / fast_s:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
