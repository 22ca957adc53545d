"""Numba switch.

Hot kernels are written once in the numba-compatible subset of numpy and
wrapped with :func:`kernel`.  Setting ``REACHCERT_DISABLE_NUMBA=1`` (or
running without numba installed) leaves them as plain Python, and the
dispatchers in :mod:`reachcert.kernels` route to vectorized numpy
fallbacks where a pure-Python loop would be hopeless.
"""
import os

_FLAG = "REACHCERT_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def numba_enabled():
    if numba is None:
        return False
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


USE_NUMBA = numba_enabled()


def kernel(fn):
    """Compile ``fn`` with ``numba.njit(cache=True)`` when acceleration is on."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn
