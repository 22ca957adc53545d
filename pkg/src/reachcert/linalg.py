"""Small dense matrix kernels.

Matrices here are at most 6x6 (state dimension 5 plus one augmented
row/column), so a fixed-order Taylor series with scaling and squaring is
accurate and cheap.  With ``||X|| <= 1/2`` after scaling, the order-18
remainder is below ``0.5**19 / 19! ~ 1.6e-23`` relative, and the squaring
phase loses at most a few ulps per squaring.
"""
import math

import numpy as np

TAYLOR_ORDER = 18
SCALED_NORM = 0.5
MAX_NORM_TIME = 1.0e4
RANK_RTOL = 1.0e-10


def _squarings(norm):
    if norm <= SCALED_NORM:
        return 0
    return int(math.ceil(math.log2(norm / SCALED_NORM)))


def _taylor(X):
    n = X.shape[-1]
    eye = np.broadcast_to(np.eye(n), X.shape)
    out = eye.copy()
    # Horner form: I + X(I + X/2(I + X/3(...)))
    for k in range(TAYLOR_ORDER, 0, -1):
        out = eye + (X @ out) / k
    return out


def expm(A, t=1.0):
    """Return ``exp(A t)`` for a small square matrix ``A``.

    Raises ``OverflowError`` when ``|t| * ||A||`` exceeds 1e4.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {A.shape}")
    X = A * float(t)
    norm = np.linalg.norm(X, 2) if X.size else 0.0
    if not np.isfinite(norm) or norm > MAX_NORM_TIME:
        raise OverflowError(f"||A t|| = {norm:.3g} exceeds {MAX_NORM_TIME:g}")
    s = _squarings(norm)
    E = _taylor(X / 2.0**s)
    for _ in range(s):
        E = E @ E
    return E


def expm_batch(A, ts):
    """Stack of ``exp(A t)`` for every ``t`` in ``ts``; shape ``(len(ts), n, n)``.

    A single scaling exponent is shared by the batch (the one required by
    ``max|t|``), which keeps the kernel fully vectorized.
    """
    A = np.asarray(A, dtype=float)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    n = A.shape[0]
    if ts.size == 0:
        return np.empty((0, n, n))
    anorm = np.linalg.norm(A, 2)
    norm = anorm * float(np.max(np.abs(ts)))
    if not np.isfinite(norm) or norm > MAX_NORM_TIME:
        raise OverflowError(f"||A t|| = {norm:.3g} exceeds {MAX_NORM_TIME:g}")
    s = _squarings(norm)
    X = A[None, :, :] * (ts / 2.0**s)[:, None, None]
    E = _taylor(X)
    for _ in range(s):
        E = E @ E
    return E


def augmented(A, v):
    """The block matrix ``[[A, v], [0, 0]]``.

    ``expm(augmented(A, v), t)`` holds ``exp(A t)`` in its leading block and
    ``int_0^t exp(A s) v ds`` in its last column.
    """
    A = np.asarray(A, dtype=float)
    v = np.asarray(v, dtype=float).reshape(-1)
    n = A.shape[0]
    Z = np.zeros((n + 1, n + 1))
    Z[:n, :n] = A
    Z[:n, n] = v
    return Z


def controllability_matrix(A, b):
    """Columns ``b, A b, ..., A^(n-1) b``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    n = A.shape[0]
    if b.shape[0] != n:
        raise ValueError(f"b has length {b.shape[0]}, expected {n}")
    K = np.empty((n, n))
    col = b.copy()
    for j in range(n):
        K[:, j] = col
        col = A @ col
    return K


def singular_values(M):
    return np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)


def min_singular_value(M):
    """Smallest singular value of a square matrix."""
    sv = singular_values(M)
    return float(sv[-1]) if sv.size else 0.0


def numerical_rank(M, rtol=RANK_RTOL):
    """Count singular values above ``rtol`` times the largest one."""
    sv = singular_values(M)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def opnorm(A):
    """Operator 2-norm."""
    return float(np.linalg.norm(np.asarray(A, dtype=float), 2))
