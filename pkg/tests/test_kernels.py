import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reachcert import _accel, kernels
from reachcert.mintime import GridSpec, velocity_fields
from reachcert.switching import sample_grid

pytestmark = pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba disabled")

seeds = st.integers(0, 2**31)


def cloud(seed, k=40, n=2):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(k, n)), rng.normal(size=(k, n)), rng.normal(size=(k + 7, n))


def same(a, b):
    for u, v in zip(a, b):
        assert np.allclose(u, v, rtol=1e-12, atol=1e-14)


@given(seeds, st.floats(1.0, 3.0), st.integers(2, 3))
def test_convexity_and_reach_sweeps(seed, p, n):
    X, Z, Y = cloud(seed, n=n)
    Y[:3] = X[:3]  # coincident pairs exercise the exclusion
    same(kernels.convexity_sweep(X, Z, Y, p, backend="numba"), kernels.convexity_sweep(X, Z, Y, p, backend="numpy"))
    same(kernels.reach_sweep(X, Z, Y, backend="numba"), kernels.reach_sweep(X, Z, Y, backend="numpy"))


@given(seeds, st.floats(0.1, 10.0))
def test_epigraph_sweep(seed, cap):
    rng = np.random.default_rng(seed)
    X, Z, Y = cloud(seed)
    TX, TH, B = rng.uniform(0, 1, len(X)), rng.normal(size=len(X)), rng.uniform(0, 1, len(Y))
    same(kernels.epigraph_sweep(X, TX, Z, TH, Y, B, cap, backend="numba"),
         kernels.epigraph_sweep(X, TX, Z, TH, Y, B, cap, backend="numpy"))


@given(seeds)
def test_scan_switching(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, 2))
    s, V, W = sample_grid(A, np.array([0.0, 1.0]), 6.0, 512)
    Z = rng.normal(size=(30, 2))
    same(kernels.scan_switching(Z, V, W, backend="numba"), kernels.scan_switching(Z, V, W, backend="numpy"))


def test_value_iteration_same_fixed_point(di):
    R = 64
    spec = GridSpec(((-0.5, 0.5), (-0.5, 0.5)), R)
    x = np.linspace(-0.5, 0.5, R + 1)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    V = velocity_fields(di, np.column_stack((X1.ravel(), X2.ravel()))).reshape(-1, R + 1, R + 1, 2)
    h = 1.0 / R
    dt = 0.4 * h / np.max(np.linalg.norm(V, axis=-1))
    fixed = (np.abs(X1) <= h * (1 + 1e-9)) & (np.abs(X2) <= h * (1 + 1e-9))
    out = []
    for backend in ("numba", "numpy"):
        T = np.full((R + 1, R + 1), 1e6)
        kernels.value_iteration(T, V, h, h, dt, fixed, tol=spec.tol, big=1e6, backend=backend)
        out.append(T)
    reached = out[0] < 5e5
    assert np.array_equal(reached, out[1] < 5e5)
    assert np.max(np.abs(out[0] - out[1])[reached]) <= 1e-7


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.convexity_sweep(*cloud(0), 2.0, backend="cuda")


def test_env_flag_selects_numpy():
    code = (
        "import json, numpy as np\n"
        "from reachcert import _accel, kernels\n"
        "from reachcert.sysdef import load_builtin\n"
        "from reachcert.geometry import linear_convexity_certificate\n"
        "c = linear_convexity_certificate(load_builtin('double_integrator'), 1.0, 90)\n"
        "print(json.dumps([_accel.USE_NUMBA, kernels._backend(None), c.gamma_hat]))\n"
    )
    res = {}
    for flag in ("1", "0"):
        env = dict(os.environ, REACHCERT_DISABLE_NUMBA=flag)
        r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        res[flag] = json.loads(r.stdout)
    assert res["1"][:2] == [False, "numpy"] and res["0"][:2] == [True, "numba"]
    assert res["1"][2] == pytest.approx(res["0"][2], rel=1e-12)
