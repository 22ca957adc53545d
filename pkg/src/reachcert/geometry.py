"""Sample-based convexity-type certificates for planar and low-dimensional sets.

None of these are proofs: each certificate is the extremal ratio over every
tested pair of samples, so it bounds the true constant only at the sampled
resolution.  Refinement trends (the same quantity at twice as many
directions) are how the callers judge whether the value has settled.
"""
from dataclasses import dataclass
import json
import math

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from . import kernels
from .bangbang import (
    BangBangControl,
    circle_directions,
    extremal_many,
    fibonacci_sphere,
    integrate_linear,
    random_directions,
    support_many,
    synthesize_control,
)
from .linalg import controllability_matrix, numerical_rank
from .sysdef import LinearSystem, NotNormalError, is_normal

PAIR_EXCLUSION = 1e-9
LOG_FLOOR = 1e-12
EPIGRAPH_EXCLUSION = 1e-12
REFINEMENT_BAND = 0.10
INRADIUS_DIRS_2D = 3600


def _worst(j, k):
    return None if j < 0 else (int(j), int(k))


@dataclass(frozen=True)
class ConvexityCertificate:
    exponent: float
    gamma_hat: float  # negative means the certificate fails
    worst_pair: tuple  # (sample index, other index)
    n_pairs: int
    refinement_ratio: float = None  # gamma_hat(n) / gamma_hat(2n) when measured

    @property
    def positive(self):
        return self.gamma_hat > 0.0

    @property
    def stable(self):
        r = self.refinement_ratio
        return r is not None and math.isfinite(r) and abs(r - 1.0) <= REFINEMENT_BAND

    def to_dict(self):
        return {
            "exponent": self.exponent,
            "gamma_hat": self.gamma_hat,
            "n_pairs": self.n_pairs,
            "worst_pair": None if self.worst_pair is None else list(self.worst_pair),
            "refinement_ratio": self.refinement_ratio,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class ReachCertificate:
    phi_hat: float  # >= 0
    worst_pair: tuple
    n_pairs: int
    raw_max: float  # the unclamped maximum ratio

    def to_dict(self):
        return {
            "phi_hat": self.phi_hat,
            "raw_max": self.raw_max,
            "n_pairs": self.n_pairs,
            "worst_pair": None if self.worst_pair is None else list(self.worst_pair),
        }


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    n_used: int
    n_excluded: int  # pairs whose inner product was not below -1e-12
    decades: float  # log10 span of |y - x| over the pairs used

    def __float__(self):
        return self.slope


@dataclass(frozen=True)
class EpigraphCheck:
    sigma_hat: float  # >= 0
    violations: int
    n_pairs: int
    skipped: int
    worst_pair: tuple
    cap: float

    def to_dict(self):
        return {
            "sigma_hat": self.sigma_hat,
            "violations": self.violations,
            "n_pairs": self.n_pairs,
            "skipped": self.skipped,
            "worst_pair": None if self.worst_pair is None else list(self.worst_pair),
            "cap": self.cap,
        }


def _split(samples, names=("x", "zeta")):
    """Accept ``(x, zeta)`` tuples or objects exposing matching attributes."""
    cols = [[] for _ in names]
    for s in samples:
        for c, name in zip(cols, names):
            c.append(getattr(s, name) if hasattr(s, name) else s[names.index(name)])
    return [np.atleast_2d(np.asarray(c, dtype=float)) for c in cols]


def _points(others):
    Y = np.asarray([getattr(y, "x", y) for y in others], dtype=float)
    return np.atleast_2d(Y)


def _check_samples(X, Z, Y):
    # a single sample is enough when the comparison points supply the pairs
    if X.shape[0] < 1 or X.shape[0] + Y.shape[0] < 2:
        raise ValueError("at least two points are needed")
    if Z.shape != X.shape or Y.shape[1] != X.shape[1]:
        raise ValueError("samples, covectors and points must share one dimension")
    if np.any(np.linalg.norm(Z, axis=1) == 0.0):
        raise ValueError("covectors must be nonzero")


def convexity_violation(X, Z, Y, gamma, p, excl=PAIR_EXCLUSION, chunk=256):
    """Largest ``<z, y-x> + gamma |z| |y-x|^p`` over admissible pairs (should be <= 0)."""
    zn = np.linalg.norm(Z, axis=1)
    worst = -np.inf
    for lo in range(0, X.shape[0], chunk):
        D = Y[None, :, :] - X[lo:lo + chunk, None, :]
        r = np.linalg.norm(D, axis=2)
        val = np.einsum("jd,jkd->jk", Z[lo:lo + chunk], D) + gamma * zn[lo:lo + chunk, None] * r**p
        val = np.where(r >= excl, val, -np.inf)
        worst = max(worst, float(val.max()))
    return worst


def fit_convexity_constant(samples, others, p, backend=None):
    """Empirical ``gamma`` with ``<zeta, y-x> <= -gamma |zeta| |y-x|^p`` on every pair.

    ``samples`` are ``(x, zeta)`` pairs (or boundary points), ``others`` the
    points ``y`` each sample is tested against.
    """
    X, Z = _split(samples)
    Y = _points(others)
    _check_samples(X, Z, Y)
    if p < 1.0:
        raise ValueError("the exponent must be at least 1")
    g, j, k, count = kernels.convexity_sweep(X, Z, Y, p, PAIR_EXCLUSION, backend=backend)
    if count == 0:
        raise ValueError("degenerate input: every pair coincides")
    # the inequality form is checked independently of the ratio sweep
    scale = np.max(np.linalg.norm(Z, axis=1)) * max(1.0, np.ptp(np.vstack((X, Y)), axis=0).max() ** p)
    excess = convexity_violation(X, Z, Y, g, p)
    if excess > 1e-12 * scale:
        raise AssertionError(f"certificate post-check failed by {excess:.3g}")
    return ConvexityCertificate(float(p), g, _worst(j, k), count)


def fit_exponent(triples):
    """Least-squares slope of ``log(-<zeta, y-x>/|zeta|)`` against ``log |y-x|``.

    ``triples`` are ``(x, zeta, y)`` with ``y`` accumulating at ``x``.  Pairs
    whose inner product is not below ``-1e-12`` are left out and counted.
    """
    xs, zs, ys = _split(triples, ("x", "zeta", "y"))
    D = ys - xs
    r = np.linalg.norm(D, axis=1)
    ip = -np.einsum("jd,jd->j", zs, D) / np.linalg.norm(zs, axis=1)
    use = (ip > LOG_FLOOR) & (r > 0.0)
    if use.sum() < 10:
        raise ValueError(f"need at least 10 admissible pairs, got {int(use.sum())}")
    lr, li = np.log(r[use]), np.log(ip[use])
    slope, intercept = np.polyfit(lr, li, 1)
    return ExponentFit(
        float(slope), float(intercept), int(use.sum()), int((~use).sum()),
        float((lr.max() - lr.min()) / math.log(10.0)),
    )


def positive_reach_estimate(samples, others, backend=None):
    """``phi_hat = max <v, y-x> / (|v| |y-x|^2)`` over pairs, clamped at 0."""
    X, V = _split(samples, ("x", "zeta"))
    Y = _points(others)
    _check_samples(X, V, Y)
    best, j, k, count = kernels.reach_sweep(X, V, Y, PAIR_EXCLUSION, backend=backend)
    if count == 0:
        raise ValueError("degenerate input: every pair coincides")
    return ReachCertificate(max(best, 0.0), _worst(j, k), count, best)


def epigraph_proximal_check(points, others, cap=math.inf, backend=None):
    """Proximal-normal ratio of ``(zeta, theta)`` at ``(x, T(x))`` on the epigraph of ``T``.

    ``points`` are ``(x, T(x), zeta, theta)``; ``others`` are ``(y, beta)``
    with ``beta >= T(y)``.  Pairs with ``|y-x|^2 + |beta - T(x)| < 1e-12`` are
    skipped.
    """
    points, others = list(points), list(others)
    if not points or not others:
        raise ValueError("need at least one point and one comparison pair")
    X = np.array([p[0] for p in points], dtype=float)
    TX = np.array([p[1] for p in points], dtype=float)
    Z = np.array([p[2] for p in points], dtype=float)
    TH = np.array([p[3] for p in points], dtype=float)
    Y = np.array([o[0] for o in others], dtype=float)
    B = np.array([o[1] for o in others], dtype=float)
    best, j, k, viol, count = kernels.epigraph_sweep(X, TX, Z, TH, Y, B, cap, EPIGRAPH_EXCLUSION, backend=backend)
    skipped = X.shape[0] * Y.shape[0] - count
    sigma = max(best, 0.0) if count else 0.0
    return EpigraphCheck(sigma, viol, count, skipped, _worst(j, k), float(cap))


# ---------------------------------------------------------------------------
# linear reachable sets


def _require_normal(sys):
    if not isinstance(sys, LinearSystem):
        raise TypeError("a LinearSystem is required")
    if not is_normal(sys):
        raise NotNormalError("the system is not normal")


def _require_controllable(sys):
    if not isinstance(sys, LinearSystem):
        raise TypeError("a LinearSystem is required")
    blocks = [np.linalg.matrix_power(sys.A, k) @ sys.B for k in range(sys.n)]
    if numerical_rank(np.hstack(blocks)) < sys.n:
        raise NotNormalError("the system is not controllable, so 0 is not interior")


def _sphere(n, k, seed=0):
    if n == 2:
        return circle_directions(k)
    if n == 3:
        return fibonacci_sphere(k)
    return random_directions(n, k, seed)


def inscribed_ball_radius(sys, T, n_dirs=INRADIUS_DIRS_2D, seed=0, polish=True):
    """Radius of a ball about 0 inside the reachable set at time ``T``.

    The set is convex and centrally symmetric, so its inradius about the
    origin is the minimum of the support function over unit covectors.  The
    sampled minimum is refined by a local descent on the sphere.  Only
    controllability is needed; the support function does not use normality.
    """
    _require_controllable(sys)
    Z = _sphere(sys.n, n_dirs, seed)
    h = support_many(sys, Z, T)
    i = int(np.argmin(h))
    best = float(h[i])
    if not polish:
        return best

    def f(v):
        nv = np.linalg.norm(v)
        z = v / nv
        X, hz, _ = extremal_many(sys, z[None, :], T)
        x = X[0]
        return float(hz[0]), (x - z * (z @ x)) / nv

    res = minimize(f, Z[i], jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": 100})
    return min(best, float(res.fun))


def _cone_edges(sys, T, X, Z, knn=8, iters=45):
    """Covectors on the edges of normal cones at sampled vertices.

    A vertex is an endpoint shared by neighbouring covectors.  Its normal
    cone is solid, and uniform covector samples only reach its edge to
    within the sampling spacing.  Each arc from a covector at a vertex to a
    neighbour exposing a different point is bisected, and the last covector
    still exposing the vertex is added.
    """
    same = 1e-10 * max(np.abs(X).max(), 1e-300)
    k = min(knn + 1, len(Z))
    _, nb = cKDTree(Z).query(Z, k)
    nb = nb[:, 1:]
    dist = np.linalg.norm(X[nb] - X[:, None, :], axis=2)
    vertex = np.any(dist <= same, axis=1)
    I, J = np.nonzero(vertex[:, None] & (dist > same))
    if I.size == 0:
        return X, Z
    J = nb[I, J]
    Zi, Zj, Xi = Z[I], Z[J], X[I]

    def arc(t):
        W = (1.0 - t)[:, None] * Zi + t[:, None] * Zj
        return W / np.linalg.norm(W, axis=1)[:, None]

    lo, hi = np.zeros(I.size), np.ones(I.size)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        Xm, _, _ = extremal_many(sys, arc(mid), T)
        inside = np.linalg.norm(Xm - Xi, axis=1) <= same
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return np.vstack((X, Xi)), np.vstack((Z, arc(lo)))


def boundary_samples(sys, T, n_dirs, seed=0, edges=True):
    """``(X, Z)``: extremal endpoints and unit covectors exposing them.

    With ``edges`` the quasi-uniform covectors are supplemented by the
    normal-cone edges at vertices (see :func:`_cone_edges`).
    """
    _require_normal(sys)
    Z = _sphere(sys.n, n_dirs, seed)
    X, _, _ = extremal_many(sys, Z, T)
    if edges:
        X, Z = _cone_edges(sys, T, X, Z)
    return X, Z


def linear_convexity_certificate(sys, T, n_dirs, p=None, seed=0, backend=None):
    """Convexity certificate of the reachable set from ``n_dirs`` boundary samples.

    ``p`` defaults to the state dimension.  The refinement ratio compares
    against the same fit at ``2 * n_dirs`` directions.
    """
    p = float(sys.n if p is None else p)
    fits = []
    for k in (n_dirs, 2 * n_dirs):
        X, Z = boundary_samples(sys, T, k, seed)
        fits.append(fit_convexity_constant(list(zip(X, Z)), X, p, backend=backend))
    g0, g1 = fits[0].gamma_hat, fits[1].gamma_hat
    ratio = g0 / g1 if g1 != 0.0 else math.inf
    c = fits[0]
    return ConvexityCertificate(c.exponent, c.gamma_hat, c.worst_pair, c.n_pairs, ratio)


def midpoint_outside_count(sys, T, X, tol=1e-7):
    """Midpoints of sample pairs lying outside the reachable set (convexity echo).

    Membership is tested against the support function over the covectors of
    the sampled boundary itself, which is exact for the sampled hull.
    """
    _require_normal(sys)
    X = np.asarray(X, dtype=float)
    Z = _sphere(sys.n, max(4 * X.shape[0], 64))
    h = support_many(sys, Z, T)
    i, j = np.triu_indices(X.shape[0], 1)
    M = 0.5 * (X[i] + X[j])
    excess = (M @ Z.T - h[None, :]).max(axis=1)
    return int(np.sum(excess > tol * (1.0 + np.linalg.norm(M, axis=1))))


def flat_covector(sys):
    """Unit ``zeta`` orthogonal to ``b, Ab, ..., A^(n-2) b`` with ``<zeta, A^(n-1) b> > 0``.

    Its switching function ``<zeta, exp(A s) b>`` has a zero of order
    ``n - 1`` at ``s = 0``, the flattest contact a normal single-input
    system allows.
    """
    _require_normal(sys)
    if sys.m != 1:
        raise ValueError("a single-input system is required")
    K = controllability_matrix(sys.A, sys.B[:, 0])
    U, _, _ = np.linalg.svd(K[:, :-1], full_matrices=True)
    z = U[:, -1]
    return z if z @ K[:, -1] > 0.0 else -z


def contact_family(sys, T, s_grid, zeta=None):
    """Endpoint ``x`` exposed by ``zeta`` and endpoints ``y_s`` of its control flipped on ``[s, T]``.

    Every ``s`` must lie after the last switch of the extremal control.
    Returns ``(x, zeta, Y)``; the triples feed :func:`fit_exponent`.
    """
    z = flat_covector(sys) if zeta is None else np.asarray(zeta, dtype=float)
    z = z / np.linalg.norm(z)
    u = synthesize_control(sys, z, T)
    x = integrate_linear(sys, u)
    ts = u.switch_times[0]
    last = ts[-1] if ts else 0.0
    Y = []
    for s in s_grid:
        s = float(s)
        if not last < s < T:
            raise ValueError(f"s = {s} must lie in ({last}, {T})")
        Y.append(integrate_linear(sys, BangBangControl(u.T, u.initial_signs, (ts + (s,),))))
    return x, z, np.array(Y)
