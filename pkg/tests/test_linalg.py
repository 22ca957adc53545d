import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from reachcert.linalg import (
    controllability_matrix,
    expm,
    expm_batch,
    min_singular_value,
    numerical_rank,
    opnorm,
)


def bounded(n, norm=2.0):
    """Random n x n matrices rescaled to operator norm at most ``norm``."""
    def cap(M):
        s = np.linalg.norm(M, 2)
        return M if s <= norm else M * (norm / s)
    return arrays(float, (n, n), elements=st.floats(-3, 3, allow_nan=False)).map(cap)


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 7.5])
def test_expm_closed_forms(t):
    assert np.allclose(expm(np.zeros((3, 3)), t), np.eye(3), atol=0)
    assert np.allclose(expm(np.array([[0.0, 1.0], [0.0, 0.0]]), t), [[1, t], [0, 1]], atol=1e-15)
    R = expm(np.array([[0.0, 1.0], [-1.0, 0.0]]), t)
    assert np.allclose(R, [[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]], atol=1e-13)


@given(bounded(4), st.floats(-3, 3))
def test_expm_matches_reference(A, t):
    ref = scipy.linalg.expm(A * t)
    assert np.linalg.norm(expm(A, t) - ref, 2) <= 1e-12 * max(1.0, np.linalg.norm(ref, 2))


@given(bounded(3), st.floats(-2, 2), st.floats(-2, 2))
def test_semigroup(A, s, t):
    assert np.allclose(expm(A, s) @ expm(A, t), expm(A, s + t), atol=1e-10, rtol=0)


@given(bounded(3), st.floats(-2, 2))
def test_derivative(A, t):
    h = 1e-6
    fd = (expm(A, t + h) - expm(A, t - h)) / (2 * h)
    assert np.allclose(fd, A @ expm(A, t), atol=1e-5)


def test_expm_batch_agrees():
    A = np.array([[0.1, 1.0, 0.0], [-1.0, 0.2, 0.5], [0.0, 0.0, -0.3]])
    ts = np.linspace(-2, 4, 31)
    B = expm_batch(A, ts)
    for t, E in zip(ts, B):
        assert np.allclose(E, expm(A, t), atol=1e-13)


def test_expm_overflow_and_shape():
    with pytest.raises(OverflowError):
        expm(np.eye(2) * 1e3, 100.0)
    with pytest.raises(ValueError):
        expm(np.ones((2, 3)))


@pytest.mark.parametrize("A, b, K", [
    ([[0, 1], [0, 0]], [0, 1], [[0, 1], [1, 0]]),
    ([[0, 0], [0, 0]], [1, 0], [[1, 0], [0, 0]]),
    ([[0, 1], [-1, 0]], [1, 0], [[1, 0], [0, -1]]),
])
def test_controllability_matrix(A, b, K):
    assert np.array_equal(controllability_matrix(np.array(A, float), np.array(b, float)), K)


@pytest.mark.parametrize("M, s", [(np.eye(2), 1.0), ([[1, 0], [0, 0]], 0.0), ([[2, 0], [0, 3]], 2.0)])
def test_min_singular_value(M, s):
    assert min_singular_value(np.array(M, float)) == pytest.approx(s, abs=1e-12)


@given(arrays(float, (3, 3), elements=st.floats(-2, 2, allow_nan=False)), st.integers(0, 2**31))
def test_min_singular_value_bounds_every_unit_vector(K, seed):
    Z = np.random.default_rng(seed).normal(size=(1000, 3))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    assert np.all(np.linalg.norm(Z @ K.T, axis=1) >= min_singular_value(K) - 1e-12)


def test_rank_threshold_is_relative():
    assert numerical_rank(np.diag([1.0, 1e-9])) == 2
    assert numerical_rank(np.diag([1.0, 1e-11])) == 1
    assert numerical_rank(np.diag([1e-20, 1e-29])) == 2
    assert numerical_rank(np.zeros((2, 2))) == 0
    assert opnorm(np.diag([3.0, -4.0])) == pytest.approx(4.0)
