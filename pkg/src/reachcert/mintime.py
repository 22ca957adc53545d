"""Minimum time to reach the origin.

``T(x)`` is the least time in which some admissible control steers ``x`` to
the origin.  Its sublevel set ``{T <= tau}`` is the reachable set at time
``tau`` of the reversed dynamics ``x' = -F(x) - G(x) u``, which gives the
first solver: root-finding in ``tau`` on support-function membership.  The
second solver is an independent semi-Lagrangian value iteration on a grid.
Both compute the same function; the sign flip lives only here.
"""
from dataclasses import dataclass, field
import csv
import io
import itertools
import json
import math

import numpy as np

from . import kernels
from .bangbang import extremal_derivatives, extremal_many, support_margin, support_rate, synthesize_control
from .sysdef import LinearSystem, NotNormalError, eval_field_many, is_normal, reversed_system

HORIZON_CAP = 1.0e3
GROWTH = 8.0
CFL = 0.4
GRID_TOL = 1e-9
UNREACHED_FACTOR = 1e4
NEWTON_ITERS = 40
NEWTON_RESIDUAL = 1e-12


@dataclass(frozen=True)
class MinTimeResult:
    T: float  # math.inf when the horizon cap was exceeded
    control: object  # BangBangControl steering x to 0, or None
    iterations: int
    tol: float
    zeta: np.ndarray = None  # covector exposing x in the reversed reachable set

    @property
    def finite(self):
        return math.isfinite(self.T)


def _margin(rev, x, tau, hint, sweep=True):
    """Support margin of ``x`` at horizon ``tau`` and its derivative in ``tau``."""
    m, z = support_margin(rev, x, tau, hint=hint, sweep=sweep)
    return m, z, -support_rate(rev, z, tau)


def _outside_by(rev, x, tau, z):
    """Margin along the single covector ``z`` (a lower bound on the margin)."""
    _, h, _ = extremal_many(rev, z[None, :], tau)
    return float(z @ x - h[0])


def _fixed_covector_time(rev, x, z, tau, cap, iters=40):
    """Horizon at which ``z`` stops separating ``x``: a lower bound on ``T(x)``.

    ``None`` when the iteration fails or passes ``cap``.
    """
    for _ in range(iters):
        if not tau <= cap:
            return None
        m = _outside_by(rev, x, tau, z)
        rate = support_rate(rev, z, tau)
        if rate <= 0.0:
            return None
        step = m / rate
        tau = max(0.5 * tau, tau + step)
        if abs(step) <= 1e-13 * (1.0 + tau):
            return tau
    return tau


def _newton_boundary(rev, x, z, tau, cap, iters=NEWTON_ITERS):
    """Solve ``x(zeta, tau) = x`` for a unit ``zeta`` and a horizon ``tau``.

    Tangent steps in ``zeta`` and steps in ``tau`` come from the exact
    derivatives of the extremal endpoint, with step halving on the residual.
    The solution is unique: ``x`` lies on the boundary of exactly one
    reachable set, the one at ``T(x)``.  Returns ``None`` without
    convergence.
    """
    scale = 1.0 + float(np.linalg.norm(x))
    X, H, xd = extremal_derivatives(rev, z, tau)
    F = X - x
    for k in range(iters):
        if np.linalg.norm(F) <= NEWTON_RESIDUAL * scale:
            return z, tau, k
        Q = np.linalg.svd(z[None, :])[2][1:].T  # tangent basis at z
        J = np.column_stack((H @ Q, xd))
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            zn = z + lam * (Q @ step[:-1])
            zn /= np.linalg.norm(zn)
            tn = tau + lam * step[-1]
            if 0.0 < tn <= cap:
                Xn, Hn, xdn = extremal_derivatives(rev, zn, tn)
                if np.linalg.norm(Xn - x) < np.linalg.norm(F):
                    break
            lam *= 0.5
        else:
            return None
        z, tau, H, xd, F = zn, tn, Hn, xdn, Xn - x
    return (z, tau, iters) if np.linalg.norm(F) <= NEWTON_RESIDUAL * scale else None


def _predict(rev, x, tol, cap):
    """Certified ``(T, zeta, steps)`` from the Newton predictor, or ``None``.

    The prediction is accepted when one covector shows ``x`` outside the
    set at ``T - tol/2`` and a full margin evaluation shows it inside at
    ``T + tol/2``.
    """
    z = x / np.linalg.norm(x)
    tau = _fixed_covector_time(rev, x, z, min(1.0, cap), cap)
    if tau is None:
        return None
    # x / |x| often exposes a vertex, where the endpoint does not move with
    # zeta; the margin maximizer exposes a point next to x instead
    _, z = support_margin(rev, x, tau, hint=z)
    tau = _fixed_covector_time(rev, x, z, tau, cap)
    if tau is None:
        return None
    sol = _newton_boundary(rev, x, z, tau, cap)
    if sol is None:
        return None
    z, tau, steps = sol
    lo, hi = tau - 0.5 * tol, tau + 0.5 * tol
    if lo <= 0.0 or _outside_by(rev, x, lo, z) <= 0.0:
        return None
    m, _, _ = _margin(rev, x, hi, z)
    if m > 0.0:
        return None
    # the Newton covector exposes x itself at tau, so its control is exact
    return tau, z, steps + 2


def min_time_linear(sys, x, tol=1e-6, cap=HORIZON_CAP):
    """``T(x)`` to within ``tol`` for a normal linear system.

    The bracket ``[lo, hi]`` (positive support margin at ``lo``, nonpositive
    at ``hi``, i.e. ``x`` outside / not outside the reversed reachable set)
    is grown geometrically from ``tol`` and then shrunk to width ``tol``.
    Growth steps are settled by a single covector when it already certifies
    ``x`` outside.  Inside the bracket the trial points are Newton steps on
    the margin, whose horizon derivative is ``-sum_i |<zeta, exp(A tau) b_i>|``,
    with bisection whenever a step leaves the bracket.

    A Newton solve of ``x(zeta, tau) = x`` runs first and is accepted when
    the bracket test certifies it; the same solve polishes the bracket's
    covector at the end, so the returned control steers ``x`` to 0 exactly.
    """
    if not isinstance(sys, LinearSystem):
        raise TypeError("min_time_linear needs a LinearSystem")
    if not is_normal(sys):
        raise NotNormalError("min_time_linear needs a normal system")
    if tol < 1e-9:
        raise ValueError("tol must be at least 1e-9")
    x = np.asarray(x, dtype=float).reshape(sys.n)
    if not np.any(x):
        return MinTimeResult(0.0, None, 0, tol, None)
    rev = reversed_system(sys)
    try:
        pred = _predict(rev, x, tol, cap)
    except OverflowError:
        pred = None
    if pred is not None and pred[0] <= cap:
        T, zeta_hi, steps = pred
        u_rev = synthesize_control(rev, zeta_hi, T)
        return MinTimeResult(float(T), u_rev.reversed(), steps, tol, zeta_hi)
    iters = 0
    z = x / np.linalg.norm(x)
    lo, hi = 0.0, tol
    while True:
        iters += 1
        if _outside_by(rev, x, hi, z) <= 0.0:
            m, z, slope = _margin(rev, x, hi, z)
            if m <= 0.0:
                break
        lo = hi
        if hi >= cap:
            return MinTimeResult(math.inf, None, iters, tol, None)
        hi = min(hi * GROWTH, cap)
    zeta_hi, tau = z, hi
    for _ in range(200):
        if hi - lo <= tol:
            break
        step = tau - m / slope if slope < 0.0 else math.nan
        if abs(step - tau) < 0.25 * tol:
            # converged: close the bracket symmetrically around the root
            probes = (max(lo, step - 0.5 * tol), min(hi, step + 0.5 * tol))
            for p in probes:
                mp, zp, _ = _margin(rev, x, p, z)
                iters += 1
                if mp > 0.0:
                    lo = max(lo, p)
                else:
                    hi, zeta_hi = min(hi, p), zp
            if hi - lo <= tol:
                break
            step = math.nan
        tau = step if lo < step < hi else 0.5 * (lo + hi)
        m, z, slope = _margin(rev, x, tau, z, sweep=False)
        iters += 1
        if m <= 0.0:
            # a warm-started local maximum only bounds the margin from below
            m, z, slope = _margin(rev, x, tau, z)
        if m > 0.0:
            lo = tau
        else:
            hi, zeta_hi = tau, z
    T = 0.5 * (lo + hi)
    # polish from the bracket so that the control hits x, not a neighbour
    try:
        sol = _newton_boundary(rev, x, zeta_hi, T, cap)
    except OverflowError:
        sol = None
    if sol is not None and lo - tol <= sol[1] <= hi + tol:
        zeta_hi, T = sol[0], sol[1]
        iters += sol[2]
    u_rev = synthesize_control(rev, zeta_hi, T)
    return MinTimeResult(float(T), u_rev.reversed(), iters, tol, zeta_hi)


# ---------------------------------------------------------------------------
# grid oracle


@dataclass(frozen=True)
class GridSpec:
    bounds: tuple  # ((x1_lo, x1_hi), (x2_lo, x2_hi))
    resolution: int = 256  # cells per axis
    cfl: float = CFL
    tol: float = GRID_TOL
    dt: float = None  # explicit step; checked against the CFL limit
    max_sweeps: int = 200000

    def __post_init__(self):
        (a0, b0), (a1, b1) = self.bounds
        object.__setattr__(self, "bounds", ((float(a0), float(b0)), (float(a1), float(b1))))
        if not (a0 < 0.0 < b0 and a1 < 0.0 < b1):
            raise ValueError("the origin must lie strictly inside the grid bounds")
        if self.resolution < 64:
            raise ValueError("resolution must be at least 64")


@dataclass
class TimeGrid:
    bounds: tuple
    resolution: int
    values: np.ndarray  # (R+1, R+1) node values, indexed [i1, i2]
    dt: float
    iterations: int
    last_change: float
    origin: tuple
    meta: dict = field(default_factory=dict)

    @property
    def axes(self):
        (a0, b0), (a1, b1) = self.bounds
        R = self.resolution
        return np.linspace(a0, b0, R + 1), np.linspace(a1, b1, R + 1)

    @property
    def cell(self):
        (a0, b0), (a1, b1) = self.bounds
        return (b0 - a0) / self.resolution, (b1 - a1) / self.resolution

    def interpolate(self, pts):
        """Bilinear interpolation; ``inf`` when any contributing node is unreached."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        (a0, _), (a1, _) = self.bounds
        h0, h1 = self.cell
        R = self.resolution
        f0 = (pts[:, 0] - a0) / h0
        f1 = (pts[:, 1] - a1) / h1
        out_box = (f0 < 0) | (f1 < 0) | (f0 > R) | (f1 > R)
        i0 = np.clip(np.floor(f0).astype(int), 0, R - 1)
        i1 = np.clip(np.floor(f1).astype(int), 0, R - 1)
        a = np.clip(f0 - i0, 0.0, 1.0)
        b = np.clip(f1 - i1, 0.0, 1.0)
        V = self.values
        acc = np.zeros(pts.shape[0])
        bad = out_box.copy()
        for di, dj in itertools.product((0, 1), (0, 1)):
            w = (a if di else 1 - a) * (b if dj else 1 - b)
            v = V[i0 + di, i1 + dj]
            pos = w > 0
            bad |= pos & ~np.isfinite(v)
            acc += np.where(pos, w * np.where(np.isfinite(v), v, 0.0), 0.0)
        return np.where(bad, np.inf, acc)

    def header(self):
        return {
            "bounds": [list(b) for b in self.bounds],
            "resolution": self.resolution,
            "dt": self.dt,
            "iterations": self.iterations,
            "last_change": self.last_change,
            **self.meta,
        }

    def to_csv(self):
        x1, x2 = self.axes
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x1", "x2", "T"])
        for i, a in enumerate(x1):
            for j, b in enumerate(x2):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(self.values[i, j]))])
        return buf.getvalue()

    def header_json(self):
        return json.dumps(self.header(), sort_keys=True)


def vertex_controls(m):
    return np.array(list(itertools.product((-1.0, 1.0), repeat=m)))


def velocity_fields(sys, pts):
    """``F(x) + G(x) u`` at each point for every vertex control; ``(nv, k, 2)``."""
    U = vertex_controls(sys.m)
    if isinstance(sys, LinearSystem):
        drift = pts @ sys.A.T
        cols = [np.broadcast_to(sys.B[:, i], pts.shape) for i in range(sys.m)]
    else:
        drift = eval_field_many(sys.F, pts)
        cols = [eval_field_many(g, pts) for g in sys.G_cols]
    return np.stack([drift + sum(u[i] * cols[i] for i in range(sys.m)) for u in U])


def grid_value_iteration(sys, spec, backend=None):
    """Semi-Lagrangian fixed point ``T(x) = min_u dt + T(x + dt f(x, u))``, ``T(0) = 0``.

    Feet leaving the box are unreachable.  The target is the union of the
    closed cells containing the origin, i.e. nodes within one cell of it on
    both axes; a single node is a poor target because the interpolation
    walk in the plane hits a point only after a long diffusive excursion.
    """
    if sys.n != 2:
        raise ValueError("the grid oracle is planar")
    (a0, b0), (a1, b1) = spec.bounds
    R = spec.resolution
    x1 = np.linspace(a0, b0, R + 1)
    x2 = np.linspace(a1, b1, R + 1)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    pts = np.column_stack((X1.ravel(), X2.ravel()))
    V = velocity_fields(sys, pts).reshape(-1, R + 1, R + 1, 2)
    hx, hy = (b0 - a0) / R, (b1 - a1) / R
    vmax = float(np.max(np.abs(V[..., 0]) / hx + np.abs(V[..., 1]) / hy))  # cells per second
    speed = float(np.max(np.linalg.norm(V, axis=-1)))
    cell = min(hx, hy)
    dt = spec.cfl * cell / speed if spec.dt is None else float(spec.dt)
    if dt * speed > cell:
        raise ValueError(f"CFL violation: dt*speed = {dt * speed:.3g} exceeds cell {cell:.3g}")
    origin = (int(round(-a0 / hx)), int(round(-a1 / hy)))
    # target: every node of a closed cell containing the origin
    fixed = (np.abs(X1) <= hx * (1 + 1e-9)) & (np.abs(X2) <= hy * (1 + 1e-9))
    big = UNREACHED_FACTOR * (max(b0 - a0, b1 - a1) / max(speed, 1e-300) + 1.0)
    T = np.full((R + 1, R + 1), big)
    sweeps, change = kernels.value_iteration(
        T, V, hx, hy, dt, fixed, tol=spec.tol, max_sweeps=spec.max_sweeps, big=big, backend=backend
    )
    T[T >= 0.5 * big] = np.inf
    return TimeGrid(
        bounds=spec.bounds, resolution=R, values=T, dt=dt, iterations=sweeps,
        last_change=change, origin=origin,
        meta={"cells_per_step": vmax * dt, "backend": kernels._backend(backend)},
    )


# ---------------------------------------------------------------------------
# cross-check


@dataclass(frozen=True)
class OracleComparison:
    max_abs_gap: float
    table: list  # rows (x, T_bisect, T_grid, gap)


def compare_oracle(sys, points, grid=None, spec=None, tol=1e-6, backend=None):
    """Tabulate the root-finding and grid values at each point."""
    pts = [np.asarray(p, dtype=float) for p in points]
    if not pts:
        return OracleComparison(0.0, [])
    if grid is None:
        if spec is None:
            raise ValueError("either a grid or a grid spec is needed")
        grid = grid_value_iteration(sys, spec, backend=backend)
    Tg = grid.interpolate(np.array(pts))
    rows = []
    for p, tg in zip(pts, Tg):
        tb = min_time_linear(sys, p, tol=tol).T
        rows.append((p, tb, float(tg), float(abs(tb - float(tg)))))
    return OracleComparison(max(r[3] for r in rows), rows)
