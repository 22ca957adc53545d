"""Time the numba kernels against their numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from reachcert import _accel, kernels
from reachcert.mintime import velocity_fields
from reachcert.switching import sample_grid
from reachcert.sysdef import load_builtin


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    X, Z, Y = rng.normal(size=(720, 2)), rng.normal(size=(720, 2)), rng.normal(size=(1440, 2))
    yield "convexity_sweep 720x1440", lambda b: kernels.convexity_sweep(X, Z, Y, 2.0, backend=b)
    yield "reach_sweep 720x1440", lambda b: kernels.reach_sweep(X, Z, Y, backend=b)

    s, V, W = sample_grid(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.array([0.0, 1.0]), 10.0, 4096)
    Zs = rng.normal(size=(2000, 2))
    yield "scan_switching 2000 covectors", lambda b: kernels.scan_switching(Zs, V, W, backend=b)

    R = 128
    x = np.linspace(-0.5, 0.5, R + 1)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    Vf = velocity_fields(load_builtin("double_integrator"), np.column_stack((X1.ravel(), X2.ravel())))
    Vf = Vf.reshape(-1, R + 1, R + 1, 2)
    h = 1.0 / R
    dt = 0.4 * h / np.max(np.linalg.norm(Vf, axis=-1))
    fixed = (np.abs(X1) <= h * (1 + 1e-9)) & (np.abs(X2) <= h * (1 + 1e-9))

    def vi(b):
        T = np.full((R + 1, R + 1), 1e6)
        kernels.value_iteration(T, Vf, h, h, dt, fixed, tol=1e-9, big=1e6, backend=b)

    yield f"value_iteration R={R}", vi


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _accel.USE_NUMBA:
        raise SystemExit("numba is disabled (REACHCERT_DISABLE_NUMBA); nothing to compare")
    print(f"{'kernel':32s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}")
    for name, fn in cases():
        fn("numba")  # compile outside the timing
        tn = best_of(lambda: fn("numba"), args.repeat)
        tp = best_of(lambda: fn("numpy"), args.repeat)
        print(f"{name:32s} {tn:10.4f} {tp:10.4f} {tp / tn:8.1f}x")


if __name__ == "__main__":
    main()
