"""Bang-bang synthesis, exact linear integration and support functions.

For ``x' = A x + B u`` with ``u`` in ``[-1, 1]^m`` the reachable set from the
origin at time ``T`` has support function

    h(zeta) = int_0^T sum_i |<zeta, exp(A s) b_i>| ds,

and the boundary point exposed by ``zeta`` is reached by
``u_i(t) = sign <zeta, exp(A (T - t)) b_i>``.
"""
from dataclasses import dataclass
import csv
import io
import math

import numpy as np
from scipy.optimize import minimize

from .linalg import augmented, expm, expm_batch
from .switching import sample_grid, zeros_many
from .sysdef import NotNormalError, is_normal

EXTREMALITY_TOL = 1e-7
GL_ORDER = 16
QUAD_TOL = 1e-13
SWEEP_DIRS_2D = 720
SWEEP_DIRS_3D_LEVEL = 4  # icosphere subdivisions, 2562 vertices
SWEEP_DIRS_HIGH = 4096

_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)


@dataclass(frozen=True)
class BangBangControl:
    """Piecewise constant control in ``{-1, 1}^m`` on ``[0, T]``."""

    T: float
    initial_signs: tuple
    switch_times: tuple  # one sorted tuple per channel

    def __post_init__(self):
        if len(self.initial_signs) != len(self.switch_times):
            raise ValueError("one initial sign per channel is required")
        for sgn in self.initial_signs:
            if sgn not in (-1, 1):
                raise ValueError(f"initial sign must be +-1, got {sgn}")
        for ts in self.switch_times:
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("switch times must be strictly increasing")
            if ts and (ts[0] <= 0.0 or ts[-1] >= self.T):
                raise ValueError("switch times must lie in (0, T)")

    @classmethod
    def constant(cls, T, signs):
        return cls(float(T), tuple(int(s) for s in signs), tuple(() for _ in signs))

    @property
    def m(self):
        return len(self.initial_signs)

    @property
    def n_switches(self):
        return tuple(len(ts) for ts in self.switch_times)

    def value(self, t):
        """Control vector at time ``t`` (right-continuous)."""
        return np.array([
            sgn * (-1) ** int(np.searchsorted(ts, t, side="right"))
            for sgn, ts in zip(self.initial_signs, self.switch_times)
        ], dtype=float)

    def breakpoints(self):
        pts = sorted({0.0, self.T, *(t for ts in self.switch_times for t in ts)})
        return pts

    def segments(self):
        """``(t0, t1, u)`` triples with constant ``u`` on each ``[t0, t1)``."""
        pts = self.breakpoints()
        return [(a, b, self.value(0.5 * (a + b))) for a, b in zip(pts, pts[1:])]

    def reversed(self):
        """The control ``t -> u(T - t)``."""
        final = [sgn * (-1) ** len(ts) for sgn, ts in zip(self.initial_signs, self.switch_times)]
        return BangBangControl(
            self.T, tuple(int(s) for s in final),
            tuple(tuple(sorted(self.T - t for t in ts)) for ts in self.switch_times),
        )

    def truncate(self, t_end):
        """Restriction to ``[0, t_end]``."""
        return BangBangControl(
            float(t_end), self.initial_signs,
            tuple(tuple(t for t in ts if t < t_end) for ts in self.switch_times),
        )

    def to_dict(self):
        return {
            "T": self.T,
            "initial_signs": list(self.initial_signs),
            "switch_times": [list(ts) for ts in self.switch_times],
        }


@dataclass(frozen=True)
class BoundaryPoint:
    zeta: np.ndarray
    x: np.ndarray
    control: BangBangControl
    T: float
    residual: float  # |<zeta, x> - h(zeta)|

    @property
    def extremal(self):
        return self.residual <= EXTREMALITY_TOL


def _require_normal(sys):
    if not is_normal(sys):
        raise NotNormalError(f"system {sys.name or '<anonymous>'} is not normal")


def _unit(zeta, n):
    z = np.asarray(zeta, dtype=float).reshape(-1)
    if z.shape[0] != n:
        raise ValueError(f"covector has length {z.shape[0]}, expected {n}")
    nz = np.linalg.norm(z)
    if nz == 0.0 or not np.isfinite(nz):
        raise ValueError("covector must be nonzero and finite")
    return z / nz


def synthesize_control(sys, zeta, T):
    """Extremal control for the terminal covector ``zeta`` on ``[0, T]``."""
    _require_normal(sys)
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    z = _unit(zeta, sys.n)
    signs, switches = [], []
    for i in range(sys.m):
        b = sys.column(i)
        times, sb, sa = zeros_many(sys.A, b, z[None, :], T)[0]
        crossing = sb != sa
        times, sb, sa = times[crossing], sb[crossing], sa[crossing]
        # sign of g on the last piece (s near T) is the sign of u near t = 0
        lo = times[-1] if times.size else 0.0
        E = expm(sys.A, 0.5 * (lo + T))
        g_mid = float(z @ E @ b)
        if abs(g_mid) < 1e-12:
            s_probe = np.linspace(lo, T, 65)[1:-1]
            vals = np.einsum("d,kd->k", z, expm_batch(sys.A, s_probe) @ b)
            g_mid = float(vals[np.argmax(np.abs(vals))])
            if abs(g_mid) < 1e-12:
                raise RuntimeError("switching function vanishes identically on a normal system")
        signs.append(1 if g_mid > 0 else -1)
        switches.append(tuple(sorted(float(T - t) for t in times)))
    return BangBangControl(float(T), tuple(signs), tuple(switches))


def integrate_linear(sys, u, x0=None):
    """Endpoint of ``x' = A x + B u`` under a bang-bang control, segment by segment."""
    n = sys.n
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n).copy()
    for t0, t1, uval in u.segments():
        if t1 <= t0:
            continue
        E = expm(augmented(sys.A, sys.B @ uval), t1 - t0)
        x = E[:n, :n] @ x + E[:n, n]
    return x


def _gl(f, a, b):
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return half * float(np.dot(_GL_W, f(mid + half * _GL_X)))


def _adaptive(f, a, b, whole, depth=0):
    m = 0.5 * (a + b)
    left, right = _gl(f, a, m), _gl(f, m, b)
    if abs(left + right - whole) <= QUAD_TOL * max(1.0, abs(whole)) or depth > 30:
        return left + right
    return _adaptive(f, a, m, left, depth + 1) + _adaptive(f, m, b, right, depth + 1)


def support_function(sys, zeta, T):
    """``h(zeta) = int_0^T sum_i |<zeta, exp(A s) b_i>| ds`` by adaptive Gauss-Legendre.

    Each channel's integrand is split at the zeros of its switching function,
    so the quadrature only ever sees smooth pieces.
    """
    z = np.asarray(zeta, dtype=float).reshape(-1)
    if z.shape[0] != sys.n:
        raise ValueError(f"covector has length {z.shape[0]}, expected {sys.n}")
    if not np.any(z) or T == 0:
        return 0.0
    total = 0.0
    for i in range(sys.m):
        b = sys.column(i)

        def g(s, b=b):
            return np.abs(np.einsum("d,kd->k", z, expm_batch(sys.A, s) @ b))

        times = zeros_many(sys.A, b, z[None, :], T)[0][0]
        pts = np.concatenate(([0.0], times, [T]))
        for a, c in zip(pts[:-1], pts[1:]):
            if c > a:
                total += _adaptive(g, a, c, _gl(g, a, c))
    return total


def _primitive(A, b, s):
    """``int_0^s exp(A r) b dr`` for each ``s``; shape ``(len(s), n)``."""
    n = A.shape[0]
    E = expm_batch(augmented(A, b), s)
    return E[:, :n, n]


def extremal_many(sys, Z, T):
    """Extremal endpoints for every row of ``Z``; returns ``(X, h, n_switches)``.

    Uses the closed-form primitive of ``exp(A s) b`` between consecutive zeros
    of the switching function, so the cost per covector is one batch of small
    exponentials.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    k, n = Z.shape
    X = np.zeros((k, n))
    nsw = np.zeros((k, sys.m), dtype=np.int64)
    for i in range(sys.m):
        b = sys.column(i)
        zq, zt, zsb, zsa = zeros_many(sys.A, b, Z, T, flat_output=True)
        s, V, _ = sample_grid(sys.A, b, T)
        # without interior zeros the sign is that of the largest interior sample
        inner = Z @ V[1:-1].T
        base = np.sign(inner[np.arange(k), np.argmax(np.abs(inner), axis=1)])
        cnt = np.bincount(zq, minlength=k)
        zstart = np.concatenate(([0], np.cumsum(cnt)[:-1]))
        np.add.at(nsw[:, i], zq, (zsb != zsa).astype(np.int64))
        # piece j of row q runs between zero j-1 and zero j of that row
        prow = np.repeat(np.arange(k), cnt + 1)
        pstart = zstart + np.arange(k)
        j = np.arange(prow.size) - pstart[prow]
        zi = zstart[prow] + j
        has_lo = j > 0
        has_hi = j < cnt[prow]
        zt_pad = np.append(zt, T)
        sb_pad = np.append(zsb, 0)
        sa_pad = np.append(zsa, 0)
        lo_idx = np.maximum(zi - 1, 0)
        plo = np.where(has_lo, zt_pad[lo_idx], 0.0)
        phi = np.where(has_hi, zt_pad[zi], T)
        sgn = np.where(has_lo, sa_pad[lo_idx], np.where(has_hi, sb_pad[zi], base[prow]))
        sgn = sgn.astype(float)
        uniq, inv = np.unique(np.concatenate((plo, phi)), return_inverse=True)
        P = _primitive(sys.A, b, uniq)
        Plo, Phi = P[inv[: plo.size]], P[inv[plo.size:]]
        np.add.at(X, prow, sgn[:, None] * (Phi - Plo))
    h = np.einsum("qd,qd->q", Z, X)
    return X, h, nsw


def support_many(sys, Z, T):
    return extremal_many(sys, Z, T)[1]


def extremal_derivatives(sys, zeta, T):
    """Endpoint exposed by ``zeta`` and its derivatives in ``zeta`` and in ``T``.

    Moving a sign change ``s_j`` of ``g(s) = <zeta, exp(A s) b>`` flips the
    integrand ``v_j = exp(A s_j) b`` there, so ``dx/dzeta`` (tangent
    variations of a unit ``zeta``) is ``sum_j 2 v_j v_j^T / |g'(s_j)|``.
    The horizon enters only through the upper limit of the integral.
    """
    z = _unit(zeta, sys.n)
    X, _, _ = extremal_many(sys, z[None, :], T)
    H = np.zeros((sys.n, sys.n))
    xdot = np.zeros(sys.n)
    ET = expm(sys.A, T)
    for i in range(sys.m):
        b = sys.column(i)
        times, sb, sa = zeros_many(sys.A, b, z[None, :], T)[0]
        for s in times[sb != sa]:
            v = expm(sys.A, s) @ b
            slope = abs(float(z @ sys.A @ v))
            if slope > 0.0:
                H += 2.0 * np.outer(v, v) / slope
        vT = ET @ b
        xdot += np.sign(z @ vT) * vT
    return X[0], H, xdot


# ---------------------------------------------------------------------------
# direction sets


def circle_directions(n_dirs, offset=0.0):
    ang = offset + 2.0 * np.pi * np.arange(n_dirs) / n_dirs
    return np.column_stack((np.cos(ang), np.sin(ang)))


def icosphere(level):
    """Vertices of a subdivided icosahedron on the unit sphere (``10*4^level + 2``)."""
    p = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0), (0, -1, p), (0, 1, p),
             (0, -1, -p), (0, 1, -p), (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    V = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = V[a] + V[b]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(V)


def fibonacci_sphere(k):
    i = np.arange(k) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / k)
    theta = np.pi * (1.0 + 5**0.5) * i
    return np.column_stack((np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)))


def random_directions(n, k, seed=0):
    D = np.random.default_rng(seed).normal(size=(k, n))
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def sweep_directions(n, seed=0):
    """Coarse direction set used by the membership test."""
    if n == 2:
        return circle_directions(SWEEP_DIRS_2D)
    if n == 3:
        return icosphere(SWEEP_DIRS_3D_LEVEL)
    return random_directions(n, SWEEP_DIRS_HIGH, seed)


def boundary_directions(n, n_dirs, seed=0):
    """Quasi-uniform unit covectors, closed under negation when ``n_dirs`` is even."""
    if n == 2:
        return circle_directions(n_dirs)
    half = (n_dirs + 1) // 2
    D = fibonacci_sphere(half) if n == 3 else random_directions(n, half, seed)
    return np.vstack((D, -D))[:n_dirs]


# ---------------------------------------------------------------------------
# membership


@dataclass(frozen=True)
class Membership:
    status: str  # "inside" | "boundary" | "outside"
    margin: float
    zeta: np.ndarray
    tol: float


def sweep_spacing(n):
    """Angular covering radius of the coarse sweep (``inf`` when unknown)."""
    if n == 2:
        return math.pi / SWEEP_DIRS_2D
    if n == 3:
        return 0.04  # icosphere level 4: longest half-edge is ~0.0345 rad
    return math.inf


def coarse_margin_bounds(sys, x, T, seed=0):
    """Cheap ``(lower, upper)`` bounds on the support margin from the sweep alone.

    The lower bound is attained.  The upper bound uses convexity of ``h``:
    ``f(z*) - f(z_j) <= <z* - z_j, x - x(z_j)>`` with ``|z* - z_j|`` at most
    the sweep's covering radius.
    """
    x = np.asarray(x, dtype=float).reshape(sys.n)
    D = sweep_directions(sys.n, seed)
    X, h, _ = extremal_many(sys, D, T)
    vals = D @ x - h
    j = int(np.argmax(vals))
    delta = 2.0 * math.sin(0.5 * min(sweep_spacing(sys.n), math.pi))
    upper = float(np.max(vals + delta * np.linalg.norm(x[None, :] - X, axis=1)))
    return float(vals[j]), upper, D[j]


def support_rate(sys, zeta, T):
    """``d h_T(zeta) / dT = sum_i |<zeta, exp(A T) b_i>|``."""
    z = np.asarray(zeta, dtype=float).reshape(sys.n)
    return float(np.sum(np.abs(z @ expm(sys.A, T) @ sys.B)))


def support_margin(sys, x, T, seed=0, hint=None, sweep=True):
    """``max_{|zeta|=1} <zeta, x> - h(zeta)`` and its maximizer.

    A coarse sweep picks the start; BFGS on ``v -> f(v/|v|)`` with the exact
    gradient ``x - x(zeta)`` polishes it.  ``hint`` adds a warm start.
    """
    x = np.asarray(x, dtype=float).reshape(sys.n)
    starts = []
    best_val, best_z = -math.inf, None
    if sweep or hint is None:
        D = sweep_directions(sys.n, seed)
        _, h, _ = extremal_many(sys, D, T)
        vals = D @ x - h
        j = int(np.argmax(vals))
        starts.append(D[j])
        best_val, best_z = float(vals[j]), D[j]
    if hint is not None:
        starts.append(_unit(hint, sys.n))

    def neg(v):
        nv = np.linalg.norm(v)
        z = v / nv
        X, hz, _ = extremal_many(sys, z[None, :], T)
        f = float(z @ x - hz[0])
        grad = x - X[0]
        grad = grad - (grad @ z) * z
        return -f, -grad / nv

    for z0 in starts:
        res = minimize(neg, z0, jac=True, method="BFGS", options={"gtol": 1e-11, "maxiter": 100})
        if -res.fun > best_val:
            best_val, best_z = float(-res.fun), res.x / np.linalg.norm(res.x)
    return best_val, best_z


def membership(sys, x, T, seed=0, hint=None):
    """Classify ``x`` against the reachable set at time ``T``."""
    _require_normal(sys)
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    x = np.asarray(x, dtype=float).reshape(sys.n)
    tol = 1e-7 * (1.0 + float(np.linalg.norm(x)))
    margin, z = support_margin(sys, x, T, seed, hint)
    if margin < -tol:
        status = "inside"
    elif margin <= tol:
        status = "boundary"
    else:
        status = "outside"
    return Membership(status, margin, z, tol)


# ---------------------------------------------------------------------------
# boundary sampling


def boundary_point(sys, zeta, T):
    z = _unit(zeta, sys.n)
    u = synthesize_control(sys, z, T)
    x = integrate_linear(sys, u)
    res = abs(float(z @ x) - support_function(sys, z, T))
    return BoundaryPoint(z, x, u, float(T), res)


def sample_boundary(sys, T, n_dirs, seed=0):
    """Boundary points exposed by ``n_dirs`` quasi-uniform covectors."""
    _require_normal(sys)
    if n_dirs < 8:
        raise ValueError("n_dirs must be at least 8")
    return [boundary_point(sys, z, T) for z in boundary_directions(sys.n, n_dirs, seed)]


def boundary_csv(points):
    """CSV text with columns zeta_*, x_*, n_switches_*, T."""
    if not points:
        return ""
    n = points[0].x.size
    m = points[0].control.m
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"zeta_{i + 1}" for i in range(n)] + [f"x_{i + 1}" for i in range(n)]
               + [f"n_switches_{i + 1}" for i in range(m)] + ["T"])
    for p in points:
        w.writerow([repr(float(v)) for v in p.zeta] + [repr(float(v)) for v in p.x]
                   + list(p.control.n_switches) + [repr(p.T)])
    return buf.getvalue()
