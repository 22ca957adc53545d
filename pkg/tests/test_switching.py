import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reachcert.switching import (
    SwitchingFunction,
    appendix_bounds_selftest,
    component_bounds,
    count_zeros_many,
    decompose_intervals,
    eval_g,
    find_zeros,
    sum_derivative_lower_bound,
    switch_count_bound,
)
from reachcert.sysdef import NotNormalError

DI_A = np.array([[0.0, 1.0], [0.0, 0.0]])
DI_B = np.array([0.0, 1.0])
ROT_A = np.array([[0.0, 1.0], [-1.0, 0.0]])

# root of s = exp(-s) / 2, i.e. the Lambert W function at 1/2
LAMBERT_HALF = 0.35173371124919584


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


@pytest.mark.parametrize("s", [0.0, 0.25, 0.9])
def test_eval_g_closed_forms(s):
    sf = SwitchingFunction(DI_A, DI_B, [1, 0], 1.0)
    assert eval_g(sf, 0, s) == pytest.approx(s, abs=1e-15)
    assert eval_g(sf, 1, s) == pytest.approx(1.0, abs=1e-15)
    assert eval_g(SwitchingFunction(DI_A, DI_B, [0, 1], 1.0), 0, s) == pytest.approx(1.0)
    assert eval_g(SwitchingFunction(ROT_A, DI_B, [1, 0], 1.0), 0, s) == pytest.approx(math.sin(s), abs=1e-14)


def test_eval_g_rejects_bad_order_and_time():
    sf = SwitchingFunction(DI_A, DI_B, [1, 0], 1.0)
    with pytest.raises(ValueError):
        eval_g(sf, 2, 0.1)
    with pytest.raises(ValueError):
        eval_g(sf, 0, 2.5)


def test_lower_bound_examples():
    for z in ([1, 0], [0, 1]):
        r = sum_derivative_lower_bound(SwitchingFunction(DI_A, DI_B, z, 1.0), 0.0)
        assert r.ok and r.lhs == pytest.approx(1.0) and r.rhs == pytest.approx(1.0)
    r = sum_derivative_lower_bound(SwitchingFunction(np.zeros((2, 2)), [1, 0], [1, 0], 1.0), 0.0)
    assert not r.applicable


@st.composite
def normal_pairs(draw, n):
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    while True:
        A = rng.normal(size=(n, n))
        A *= rng.uniform(0.1, 2.0) / np.linalg.norm(A, 2)
        b = rng.normal(size=n)
        sf = SwitchingFunction(A, b, rng.normal(size=n), 3.0)
        if sf.normal:
            return sf


@given(st.integers(2, 3).flatmap(normal_pairs), st.floats(0, 3), st.integers(0, 2**31))
def test_lemma_lower_bound_random(sf, s, seed):
    z = np.random.default_rng(seed).normal(size=sf.n)
    sf2 = SwitchingFunction(sf.A, sf.b, z, sf.T)
    assert sum_derivative_lower_bound(sf2, s).ok


@given(st.integers(2, 3).flatmap(normal_pairs), st.floats(0.05, 2.9))
def test_derivative_consistency(sf, s):
    h = 1e-6
    for i in range(sf.n - 1):
        fd = (eval_g(sf, i, s + h) - eval_g(sf, i, s - h)) / (2 * h)
        assert fd == pytest.approx(eval_g(sf, i + 1, s), abs=1e-5)


def test_decomposition_double_integrator():
    p = decompose_intervals(SwitchingFunction(DI_A, DI_B, [0, 1], 1.0))
    assert p.intervals[0] == [(0.0, 1.0)] and p.intervals[1] == []
    p = decompose_intervals(SwitchingFunction(DI_A, DI_B, [1, 0], 1.0))
    (a, b), = p.intervals[1]
    (c, d), = p.intervals[0]
    assert a == 0.0 and d == 1.0
    assert b == pytest.approx(LAMBERT_HALF, abs=1e-9) and c == pytest.approx(LAMBERT_HALF, abs=1e-9)


def test_decomposition_rotation_patches_zeros():
    p = decompose_intervals(SwitchingFunction(ROT_A, DI_B, [1, 0], math.pi))
    assert p.label(0.0) == 1 and p.label(math.pi) == 1
    assert p.label(math.pi / 2) == 0


@given(st.integers(2, 3).flatmap(normal_pairs))
def test_decomposition_soundness(sf):
    p = decompose_intervals(sf)
    total = sum(hi - lo for ivs in p.intervals for lo, hi in ivs)
    assert abs(total - sf.T) < 1e-8 * sf.T
    for i, ivs in enumerate(p.intervals[:-1]):
        for lo, hi in ivs:
            s = np.linspace(lo, hi, 200)
            assert np.all(np.abs(sf.derivatives(s)[:, i]) >= sf.threshold(s) - 1e-9)
    if all(b is not None for b in p.interval_bounds):
        assert all(c <= b for c, b in zip(p.counts, p.interval_bounds))


def test_find_zeros_examples():
    assert find_zeros(SwitchingFunction(DI_A, DI_B, [0, 1], 1.0)) == []
    z, = find_zeros(SwitchingFunction(DI_A, DI_B, [1, -0.5], 1.0))
    assert z.time == pytest.approx(0.5, abs=1e-10)
    assert (z.sign_before, z.sign_after) == (-1, 1)
    zs = find_zeros(SwitchingFunction(ROT_A, DI_B, [1, 0], 10.0))
    assert np.allclose([z.time for z in zs], [math.pi, 2 * math.pi, 3 * math.pi], atol=1e-10)


def test_not_normal_rejected():
    sf = SwitchingFunction(np.zeros((2, 2)), [1, 0], [1, 0], 1.0)
    with pytest.raises(NotNormalError):
        find_zeros(sf)
    with pytest.raises(NotNormalError):
        switch_count_bound(np.zeros((2, 2)), [1, 0], 1.0)


def test_switch_count_bound_values():
    # ||A^2 b|| = 0 for the double integrator, so the bound is the floor n - 1
    assert [switch_count_bound(DI_A, DI_B, T) for T in (1, 5, 10)] == [1, 1, 1]
    assert switch_count_bound(ROT_A, DI_B, 1.0) == 30
    assert switch_count_bound(ROT_A, DI_B, 10.0) >= 3
    assert component_bounds(ROT_A, DI_B, 1e-9)[0] == 1


@pytest.mark.parametrize("A, T", [(DI_A, 1.0), (ROT_A, 10.0)])
def test_observed_counts_below_bound(A, T):
    Z = np.random.default_rng(7).normal(size=(2000, 2))
    assert count_zeros_many(A, DI_B, Z, T).max() <= switch_count_bound(A, DI_B, T)


def test_appendix_selftest_small():
    r = appendix_bounds_selftest(trials=100, seed=3)
    assert r.ok and r.integral_checks == 200 and r.growth_checks > 0
