"""Extremals of planar control-affine systems ``x' = F(x) + G(x) u``, ``u`` in ``[-1, 1]^m``.

The state, the adjoint ``l' = -l (DF + DG u)`` and the fundamental matrix of
the variational equation are integrated together by RK4, with
``u_i = sign <l, G_i(y)>`` held over each step and switch instants refined
by bisection.  Boundary samples of the reachable set come from sweeping the
initial adjoint over the unit circle.
"""
from dataclasses import dataclass
import csv
import io
import math

import numpy as np

from . import kernels
from .bangbang import BangBangControl
from .linalg import expm_batch
from .sysdef import (
    LinearSystem,
    NonlinearSystem2D,
    as_nonlinear,
    eval_field_many,
    eval_jacobian,
    linearize_at_origin,
    load_builtin,
    reversed_system,
)

SMALL_TIME_CAP = 1.0
MIN_STEPS = 256
DEFAULT_STEPS = 1024
EVENT_TOL = 1e-10
FLAT_TOL = 1e-12
LAMBDA_FLOOR = 1e-8
EXTEND_TOL = 1e-9
CLOSED_GAP = 0.1  # largest allowed gap between consecutive samples, as a fraction of the perimeter
REFINE_BAND = 0.10
FLAG_VANISHING = 4

FLAG_NAMES = {
    kernels.FLAG_SINGULAR: "singular-arc suspicion",
    kernels.FLAG_TOO_MANY_SWITCHES: "too many switches",
    FLAG_VANISHING: "vanishing adjoint",
}


class NotCertifiableError(ValueError):
    """Certified mode was requested for a system failing the small-time hypotheses."""

    def __init__(self, flags):
        self.flags = flags
        failed = [
            name for name, ok in zip(
                ("F(0) = 0", "per-column rank condition", "DG(0) = 0"), flags.as_tuple()
            ) if not ok
        ]
        super().__init__("certified mode refused; failing hypotheses: " + ", ".join(failed))


_ARRAYS = {}


def _arrays(sys):
    hit = _ARRAYS.get(id(sys))
    if hit is not None and hit[0] is sys:
        return hit[1]
    arr = kernels.poly_arrays([sys.F, *sys.G_cols])
    if len(_ARRAYS) > 64:
        _ARRAYS.clear()
    _ARRAYS[id(sys)] = (sys, arr)
    return arr


def _coerce(sys):
    if isinstance(sys, LinearSystem):
        return as_nonlinear(sys)
    if not isinstance(sys, NonlinearSystem2D):
        raise TypeError("a planar system is required")
    return sys


def hamiltonian(sys, Y, L):
    """Maximized Hamiltonian ``<l, F(y)> + sum_i |<l, G_i(y)>|`` row by row."""
    Y, L = np.atleast_2d(Y), np.atleast_2d(L)
    H = np.einsum("kd,kd->k", L, eval_field_many(sys.F, Y))
    for g in sys.G_cols:
        H += np.abs(np.einsum("kd,kd->k", L, eval_field_many(g, Y)))
    return H


def minimized_hamiltonian(sys, x, zeta):
    """``h(x, zeta) = <zeta, F(x)> - sum_i |<zeta, G_i(x)>|``."""
    sys = _coerce(sys)
    x = np.asarray(x, dtype=float).reshape(1, 2)
    z = np.asarray(zeta, dtype=float).reshape(1, 2)
    h = float(z[0] @ eval_field_many(sys.F, x)[0])
    for g in sys.G_cols:
        h -= abs(float(z[0] @ eval_field_many(g, x)[0]))
    return h


@dataclass(frozen=True, eq=False)
class ExtremalTrajectory:
    sys: NonlinearSystem2D
    lambda0: np.ndarray
    tau: float
    dt: float
    times: np.ndarray
    states: np.ndarray  # (k, 2)
    adjoints: np.ndarray  # (k, 2)
    controls: np.ndarray  # (k, m) control held on the step starting at each sample
    control: BangBangControl
    hamiltonians: np.ndarray
    fundamental: np.ndarray  # (k, 2, 2) solution of P' = (DF + DG u) P, P(0) = I
    flags: int

    @property
    def endpoint(self):
        return self.states[-1]

    @property
    def terminal_covector(self):
        lam = self.adjoints[-1]
        return lam / np.linalg.norm(lam)

    @property
    def certified(self):
        return self.flags == 0

    @property
    def flag_names(self):
        return [name for bit, name in FLAG_NAMES.items() if self.flags & bit]

    @property
    def n_switches(self):
        return sum(self.control.n_switches)

    @property
    def M(self):
        """``M(tau, t) = P(tau) P(t)^-1`` at every sample."""
        return self.fundamental[-1][None, :, :] @ np.linalg.inv(self.fundamental)

    @property
    def M0(self):
        """Linearized transition ``exp(DF(0) (tau - t))`` at every sample."""
        return expm_batch(self.sys.F.linear_part(), self.tau - self.times)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        m = self.controls.shape[1]
        w.writerow(["t", "y1", "y2", "lambda1", "lambda2", *[f"u_{i + 1}" for i in range(m)], "H"])
        for t, y, lam, u, H in zip(self.times, self.states, self.adjoints, self.controls, self.hamiltonians):
            w.writerow([repr(float(t)), *map(repr, map(float, y)), *map(repr, map(float, lam)),
                        *map(repr, map(float, u)), repr(float(H))])
        return buf.getvalue()


def _control_from(u0, sw_t, sw_c, T):
    per = [[] for _ in range(len(u0))]
    for t, c in zip(sw_t, sw_c):
        if 0.0 < t < T:
            per[int(c)].append(float(t))
    signs = tuple(1 if s > 0 else -1 for s in u0)
    return BangBangControl(float(T), signs, tuple(tuple(ts) for ts in per))


def _assemble(sys, lambda0, tau, dt, times, Z, U, control, flags):
    lam = Z[:, 2:4]
    if np.min(np.linalg.norm(lam, axis=1)) < LAMBDA_FLOOR:
        flags |= FLAG_VANISHING
    return ExtremalTrajectory(
        sys=sys, lambda0=np.asarray(lambda0, dtype=float), tau=float(tau), dt=float(dt),
        times=times, states=Z[:, :2].copy(), adjoints=lam.copy(), controls=U.copy(),
        control=control, hamiltonians=hamiltonian(sys, Z[:, :2], lam),
        fundamental=Z[:, 4:].reshape(-1, 2, 2).copy(), flags=int(flags),
    )


def integrate_extremal(sys, lambda0, tau, dt=None, cap=SMALL_TIME_CAP):
    """Extremal from ``y(0) = 0``, ``l(0) = lambda0`` over ``[0, tau]``.

    ``dt`` defaults to ``tau / 1024`` and may not exceed ``tau / 256``.
    Singular-arc suspicion (switching function flat below 1e-12 over a whole
    step) and a vanishing adjoint mark the trajectory uncertified.
    """
    sys = _coerce(sys)
    lam0 = np.asarray(lambda0, dtype=float).reshape(2)
    nrm = np.linalg.norm(lam0)
    if not nrm > 0.0:
        raise ValueError("lambda0 must be nonzero")
    lam0 = lam0 / nrm
    if not 0.0 < tau <= cap:
        raise ValueError(f"tau must lie in (0, {cap}]")
    dt = tau / DEFAULT_STEPS if dt is None else float(dt)
    if not 0.0 < dt <= tau / MIN_STEPS * (1 + 1e-12):
        raise ValueError(f"dt must lie in (0, tau/{MIN_STEPS}]")
    z0 = np.array([0.0, 0.0, lam0[0], lam0[1], 1.0, 0.0, 0.0, 1.0])
    times, Z, U, sw_t, sw_c, flags = kernels.integrate_extremal_kernel(
        z0, 0.0, tau, dt, np.zeros(sys.m), _arrays(sys), EVENT_TOL, FLAT_TOL
    )
    control = _control_from(U[0], sw_t, sw_c, tau)
    return _assemble(sys, lam0, tau, dt, times, Z, U, control, flags)


def integrate_control(sys, control, dt):
    """State trajectory under a prescribed bang-bang control, from the origin.

    Returns ``(times, states)``.
    """
    sys = _coerce(sys)
    pts = control.breakpoints()
    U = np.array([control.value(0.5 * (a + b)) for a, b in zip(pts, pts[1:])])
    z0 = np.array([0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0])
    times, Z = kernels.integrate_fixed_kernel(z0, np.array(pts), U, dt, _arrays(sys))
    return times, Z[:, :2].copy()


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class HamiltonianReport:
    max_dev: float
    C: float


def hamiltonian_constancy(traj):
    """Spread of ``H(y(t), l(t))`` about its median."""
    H = traj.hamiltonians
    C = float(np.median(H))
    return HamiltonianReport(float(np.max(np.abs(H - C))), C)


@dataclass(frozen=True)
class ResidualReport:
    state: float
    adjoint: float
    hamiltonian_ledger: float  # max |<l, y'> - H|
    control_mismatches: int
    n_probes: int


def _fields(sys, Y):
    return eval_field_many(sys.F, Y), [eval_field_many(g, Y) for g in sys.G_cols]


def pmp_residuals(traj, guard=2.0):
    """ODE residuals of the sampled extremal at probes away from switches.

    Derivatives come from a five-point stencil on runs of equally spaced
    samples sharing one control, so their truncation error is O(dt^4).
    """
    sys, t, Y, L, U = traj.sys, traj.times, traj.states, traj.adjoints, traj.controls
    h = np.diff(t)
    k = np.arange(2, len(t) - 2)
    if k.size:
        even = np.all([np.abs(h[k + d] - traj.dt) <= 1e-12 * traj.dt for d in (-2, -1, 0, 1)], axis=0)
        same = np.all([np.all(U[k + d] == U[k], axis=1) for d in (-2, -1, 1)], axis=0)
        k = k[even & same]
    sw = np.array([s for ts in traj.control.switch_times for s in ts])
    if k.size and sw.size:
        k = k[np.min(np.abs(t[k, None] - sw[None, :]), axis=1) > guard * traj.dt]
    if k.size == 0:
        return ResidualReport(0.0, 0.0, 0.0, 0, 0)

    def d5(A):
        return (A[k - 2] - 8 * A[k - 1] + 8 * A[k + 1] - A[k + 2]) / (12.0 * traj.dt)

    Yk, Lk, Uk = Y[k], L[k], U[k]
    F, Gs = _fields(sys, Yk)
    v = F + sum(Uk[:, [i]] * G for i, G in enumerate(Gs))
    res_y = np.linalg.norm(d5(Y) - v, axis=1)
    J = np.array([eval_jacobian(sys.F, y) for y in Yk])
    for i, g in enumerate(sys.G_cols):
        J += Uk[:, i, None, None] * np.array([eval_jacobian(g, y) for y in Yk])
    res_l = np.linalg.norm(d5(L) + np.einsum("kd,kde->ke", Lk, J), axis=1)
    H = traj.hamiltonians[k]
    ledger = np.abs(np.einsum("kd,kd->k", Lk, d5(Y)) - H)
    g = np.column_stack([np.einsum("kd,kd->k", Lk, G) for G in Gs])
    mism = int(np.sum((g * Uk < 0.0) & (np.abs(g) > FLAT_TOL)))
    return ResidualReport(float(res_y.max()), float(res_l.max()), float(ledger.max()), mism, int(k.size))


def _switching_derivative(sys, y, lam, u, i):
    """``d/dt <l, G_i(y)> = <l, [F, G_i]> + sum_j u_j <l, [G_j, G_i]>`` with ``[f, g] = Dg f - Df g``."""
    from .sysdef import eval_field

    def bracket(f, g):
        return eval_jacobian(g, y) @ eval_field(f, y) - eval_jacobian(f, y) @ eval_field(g, y)

    gi = sys.G_cols[i]
    val = lam @ bracket(sys.F, gi)
    for j, gj in enumerate(sys.G_cols):
        if j != i:
            val += u[j] * (lam @ bracket(gj, gi))
    return float(val)


@dataclass(frozen=True)
class SwitchingComparison:
    K_hat: float
    K_by_order: tuple  # (order 0, order 1)
    K_refined: float  # the same at dt / 2, or None
    ok: bool


def _k_hat(traj):
    sys = traj.sys
    t = traj.times
    use = t >= 10.0 * traj.dt
    if not np.any(use):
        return math.nan, (math.nan, math.nan)
    zeta = traj.adjoints[-1]
    A0 = sys.F.linear_part()
    M, M0 = traj.M[use], traj.M0[use]
    lam = np.einsum("d,kde->ke", zeta, M)  # zeta M(tau, t)
    lam0 = np.einsum("d,kde->ke", zeta, M0)
    Y, U = traj.states[use], traj.controls[use]
    k0 = k1 = 0.0
    for i, g in enumerate(sys.G_cols):
        b = eval_field_many(g, Y)
        b0 = g.constant_term()
        d0 = np.abs(np.einsum("kd,kd->k", lam, b) - lam0 @ b0)
        gd = np.array([_switching_derivative(sys, y, l, u, i) for y, l, u in zip(Y, lam, U)])
        gd0 = -(lam0 @ (A0 @ b0))
        k0 = max(k0, float(np.max(d0)) / traj.tau)
        k1 = max(k1, float(np.max(np.abs(gd - gd0))) / traj.tau)
    return max(k0, k1), (k0, k1)


def switching_comparison(traj, refine=True):
    """Largest ``|g^(i)(t) - g_0^(i)(t)| / tau`` for ``i`` in ``{0, 1}``.

    ``g`` uses the transition of the full variational equation and
    ``b(t) = G(y(t))``; ``g_0`` the linearization at the origin.  Both
    transitions are anchored at ``tau``, so the difference need not vanish
    as ``t -> 0``; the ratio is taken against the horizon, which is the
    uniform form of the bound ``|g - g_0| <= K t`` for ``t <= tau``.  With
    ``refine`` the extremal is recomputed at half the step and the two
    values must agree within 10% (or both be below 1e-6).
    """
    K, parts = _k_hat(traj)
    K2 = None
    ok = math.isfinite(K)
    if refine:
        fine = integrate_extremal(traj.sys, traj.lambda0, traj.tau, traj.dt / 2, cap=math.inf)
        K2, _ = _k_hat(fine)
        ok = ok and math.isfinite(K2) and (
            max(K, K2) <= 1e-6 or abs(K - K2) <= REFINE_BAND * max(K, K2)
        )
    return SwitchingComparison(K, parts, K2, bool(ok))


def extend_optimal(traj, delta):
    """Continue an extremal past ``tau`` by the sign of the switching function.

    Each channel takes ``u = +1`` if ``g(tau) > 1e-9``, ``-1`` if
    ``g(tau) < -1e-9``, and ``sign g'(tau)`` otherwise; the extremal is then
    integrated on to ``tau + delta``.
    """
    if not traj.certified:
        raise ValueError("only certified trajectories can be extended")
    if not 0.0 < delta <= traj.tau / 4:
        raise ValueError("delta must lie in (0, tau/4]")
    sys = traj.sys
    y, lam, uend = traj.states[-1], traj.adjoints[-1], traj.controls[-1]
    u_next = np.empty(sys.m)
    for i, g in enumerate(sys.G_cols):
        gv = float(lam @ eval_field_many(g, y[None, :])[0])
        if gv > EXTEND_TOL:
            u_next[i] = 1.0
        elif gv < -EXTEND_TOL:
            u_next[i] = -1.0
        else:
            gd = _switching_derivative(sys, y, lam, uend, i)
            if abs(gd) <= EXTEND_TOL:
                raise ValueError("switching function and its derivative both vanish at tau")
            u_next[i] = 1.0 if gd > 0.0 else -1.0
    z = np.concatenate((y, lam, traj.fundamental[-1].ravel()))
    T = traj.tau + delta
    times, Z, U, sw_t, sw_c, flags = kernels.integrate_extremal_kernel(
        z, traj.tau, T, traj.dt, u_next, _arrays(sys), EVENT_TOL, FLAT_TOL
    )
    old = traj.control
    per = [list(ts) for ts in old.switch_times]
    last = [s * (-1) ** len(ts) for s, ts in zip(old.initial_signs, old.switch_times)]
    for i in range(sys.m):
        if last[i] != int(u_next[i]):
            per[i].append(traj.tau)
    for t, c in zip(sw_t, sw_c):
        if traj.tau < t < T:
            per[int(c)].append(float(t))
    control = BangBangControl(float(T), old.initial_signs, tuple(tuple(ts) for ts in per))
    Zall = np.vstack((
        np.column_stack((traj.states, traj.adjoints, traj.fundamental.reshape(-1, 4))), Z[1:],
    ))
    Uall = np.vstack((traj.controls[:-1], U))
    return _assemble(
        sys, traj.lambda0, T, traj.dt, np.concatenate((traj.times, times[1:])),
        Zall, Uall, control, traj.flags | flags,
    )


# ---------------------------------------------------------------------------
# boundary sampling


def _segments_cross(P):
    """True when the closed polygon ``P`` has two non-adjacent edges meeting."""
    n = len(P)
    if n < 4:
        return False
    A, B = P, np.roll(P, -1, axis=0)

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    scale = np.abs(P).max()
    eps = 1e-14 * scale * scale
    for i in range(n):
        j = np.arange(i + 2, n if i > 0 else n - 1)
        if j.size == 0:
            continue
        a, b, c, d = A[i], B[i], A[j], B[j]
        o1, o2 = orient(a, b, c), orient(a, b, d)
        o3, o4 = orient(c, d, a[None, :]), orient(c, d, b[None, :])
        if np.any((o1 * o2 < -eps * eps) & (o3 * o4 < -eps * eps)):
            return True
    return False


@dataclass(frozen=True, eq=False)
class NonlinearBoundary:
    tau: float
    mode: str  # "certified" | "exploratory"
    lambda0s: np.ndarray  # (n, 2) unit initial adjoints
    endpoints: np.ndarray  # (n, 2)
    covectors: np.ndarray  # (n, 2) unit terminal adjoints
    n_switches: np.ndarray
    trajectories: list
    uncertified: list  # indices of flagged trajectories
    closed: bool
    simple: bool

    @property
    def certified(self):
        return self.mode == "certified" and not self.uncertified and self.closed and self.simple

    def samples(self):
        """``(x, zeta)`` pairs of the certified trajectories."""
        bad = set(self.uncertified)
        return [(x, z) for q, (x, z) in enumerate(zip(self.endpoints, self.covectors)) if q not in bad]

    def polygon(self):
        """Endpoints in adjoint-angle order with repeated consecutive points dropped."""
        P = self.endpoints
        scale = max(np.abs(P).max(), 1e-300)
        keep = np.linalg.norm(P - np.roll(P, 1, axis=0), axis=1) > 1e-12 * scale
        if not np.any(keep):
            return P[:1]
        return P[keep]

    def inscribed_radius(self):
        """Distance from the origin to the sampled boundary polygon."""
        P = self.polygon()
        Q = np.roll(P, -1, axis=0)
        D = Q - P
        t = np.clip(-np.einsum("kd,kd->k", P, D) / np.maximum(np.einsum("kd,kd->k", D, D), 1e-300), 0.0, 1.0)
        return float(np.min(np.linalg.norm(P + t[:, None] * D, axis=1)))

    def distinct_endpoints(self, tol=1e-9):
        """Endpoints of different controls never coincide (uniqueness probe)."""
        P = self.endpoints
        scale = max(np.abs(P).max(), 1e-300)
        sig = [
            (tr.control.initial_signs, tuple(np.round(np.concatenate([np.array(ts) for ts in tr.control.switch_times] or [np.empty(0)]), 7)))
            for tr in self.trajectories
        ]
        D = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
        i, j = np.nonzero(np.triu(D <= tol * scale, 1))
        return all(sig[a] == sig[b] for a, b in zip(i, j))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["angle", "x1", "x2", "n_switches"])
        for lam, x, k in zip(self.lambda0s, self.endpoints, self.n_switches):
            w.writerow([repr(float(math.atan2(lam[1], lam[0]))), repr(float(x[0])), repr(float(x[1])), int(k)])
        return buf.getvalue()


def _adaptive_angles(run, n_dirs):
    """Initial-adjoint angles refined where consecutive endpoints are far apart.

    Starts from ``n_dirs // 4`` uniform angles and bisects the angular
    intervals with the widest endpoint gaps, a batch at a time, until
    ``n_dirs`` adjoints have been integrated.  Uniform angles alone waste
    most samples on the corners: for small horizons the adjoint hardly
    turns, so only a narrow angular window produces a switch.
    """
    k0 = max(8, n_dirs // 4)
    angles = list(2.0 * np.pi * np.arange(k0) / k0)
    trajs = [run(a) for a in angles]
    while len(angles) < n_dirs:
        P = np.array([tr.endpoint for tr in trajs])
        gaps = np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1)
        batch = min(n_dirs - len(angles), max(1, len(angles) // 2))
        pick = np.argsort(-gaps, kind="stable")[:batch]
        new = []
        for i in pick:
            a = angles[i]
            b = angles[(i + 1) % len(angles)] + (2.0 * np.pi if i + 1 == len(angles) else 0.0)
            new.append(0.5 * (a + b) % (2.0 * np.pi))
        angles += new
        trajs += [run(a) for a in new]
        order = np.argsort(angles, kind="stable")
        angles = [angles[i] for i in order]
        trajs = [trajs[i] for i in order]
    return np.array(angles), trajs


def sample_nonlinear_boundary(sys, tau, n_dirs, dt=None, mode="certified", cap=SMALL_TIME_CAP):
    """Endpoints at time ``tau`` of the extremals for ``n_dirs`` initial adjoints.

    The adjoints are spread adaptively over the circle (see
    :func:`_adaptive_angles`) and returned in angular order.  Certified mode
    needs ``F(0) = 0``, the rank condition on the linearization and
    ``DG(0) = 0``; otherwise :class:`NotCertifiableError` is raised.
    Exploratory mode skips the gate.
    """
    sys = _coerce(sys)
    if mode not in ("certified", "exploratory"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "certified" and not sys.hypothesis_flags.all:
        raise NotCertifiableError(sys.hypothesis_flags)
    if n_dirs < 8:
        raise ValueError("n_dirs must be at least 8")
    angles, trajs = _adaptive_angles(
        lambda a: integrate_extremal(sys, (math.cos(a), math.sin(a)), tau, dt, cap=cap), n_dirs
    )
    lams = np.column_stack((np.cos(angles), np.sin(angles)))
    X = np.array([tr.endpoint for tr in trajs])
    Zc = np.array([tr.terminal_covector for tr in trajs])
    nsw = np.array([tr.n_switches for tr in trajs])
    bad = [q for q, tr in enumerate(trajs) if not tr.certified]
    b = NonlinearBoundary(float(tau), mode, lams, X, Zc, nsw, trajs, bad, False, False)
    P = b.polygon()
    gaps = np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1)
    closed = len(P) >= 3 and float(gaps.max()) <= CLOSED_GAP * float(gaps.sum())
    simple = closed and not _segments_cross(P)
    return NonlinearBoundary(float(tau), mode, lams, X, Zc, nsw, trajs, bad, bool(closed), bool(simple))


def sublevel_boundary(sys, tau, n_dirs, dt=None, mode="certified", cap=SMALL_TIME_CAP):
    """Boundary of ``{x : T(x) <= tau}`` for the time to reach the origin under ``sys``.

    This is the reachable set at ``tau`` of the reversed dynamics; the
    covectors are outward normals of the sublevel set.
    """
    return sample_nonlinear_boundary(reversed_system(_coerce(sys)), tau, n_dirs, dt, mode, cap)


def epigraph_samples(sys, taus, n_dirs, dt=None, mode="certified"):
    """Inputs for :func:`reachcert.geometry.epigraph_proximal_check`.

    Boundary points of several sublevel sets carry ``T(x) = tau`` and the
    epigraph normal ``(zeta, h(x, zeta))``; every point is also offered as a
    comparison pair at its own level and at each larger level.
    """
    sys = _coerce(sys)
    taus = sorted(float(t) for t in taus)
    points, others = [], []
    for tau in taus:
        b = sublevel_boundary(sys, tau, n_dirs, dt, mode)
        for x, z in b.samples():
            points.append((x, tau, z, minimized_hamiltonian(sys, x, z)))
            for beta in taus:
                if beta >= tau:
                    others.append((x, beta))
    return points, others


def linearization_switch_bound(sys, tau):
    """Switch-count bound of the linearization at the origin over ``[0, tau]``."""
    from .switching import switch_count_bound

    lin = linearize_at_origin(_coerce(sys))
    return max(switch_count_bound(lin.A, lin.B[:, i], tau) for i in range(lin.m))


# ---------------------------------------------------------------------------
# counterexample with a nonconvex reachable set


@dataclass(frozen=True)
class CounterexampleRow:
    s: float
    endpoint: np.ndarray
    expected: np.ndarray
    endpoint_error: float
    inner_product: float  # <zeta, gamma(s) - gamma(1/2)>
    closed_form: float
    reach_ratio: float  # inner product / |gamma(s) - gamma(1/2)|^2, nan at s = 1/2


@dataclass(frozen=True)
class CounterexampleTable:
    tau: float
    zeta: np.ndarray
    rows: list
    reach_bound: float  # 8 / ((16 + tau^4) sqrt(4 + tau^2))

    @property
    def max_endpoint_error(self):
        return max(r.endpoint_error for r in self.rows)

    @property
    def max_inner_product_error(self):
        return max(abs(r.inner_product - r.closed_form) for r in self.rows)

    @property
    def max_reach_ratio(self):
        vals = [r.reach_ratio for r in self.rows if math.isfinite(r.reach_ratio)]
        return max(vals) if vals else math.nan


def reproduce_counterexample(tau, s_grid, dt=None):
    """Endpoints of the one-switch controls ``+1`` on ``(0, s tau)``, ``-1`` after.

    The system is ``x1' = x2 (1 + u)``, ``x2' = u``.  Its endpoints trace
    ``gamma(s) = (s^2 tau^2, tau (2s - 1))``, and the covector
    ``zeta = (2, -tau) / sqrt(4 + tau^2)`` supports ``gamma(1/2)`` from the
    wrong side.
    """
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    sys = load_builtin("sysexample")
    dt = tau / DEFAULT_STEPS if dt is None else float(dt)

    def endpoint(s):
        u = BangBangControl(float(tau), (1,), ((s * tau,),)) if 0.0 < s < 1.0 else BangBangControl.constant(tau, [1 if s >= 1 else -1])
        return integrate_control(sys, u, dt)[1][-1]

    zeta = np.array([2.0, -tau]) / math.sqrt(4.0 + tau * tau)
    mid = endpoint(0.5)
    rows = []
    for s in s_grid:
        s = float(s)
        x = endpoint(s)
        expected = np.array([s * s * tau * tau, tau * (2 * s - 1)])
        d = x - mid
        ip = float(zeta @ d)
        r2 = float(d @ d)
        rows.append(CounterexampleRow(
            s, x, expected, float(np.max(np.abs(x - expected))), ip,
            2 * tau * tau * (s - 0.5) ** 2 / math.sqrt(4 + tau * tau),
            ip / r2 if r2 > 1e-24 else math.nan,
        ))
    bound = 8.0 / ((16.0 + tau**4) * math.sqrt(4.0 + tau * tau))
    return CounterexampleTable(float(tau), zeta, rows, bound)
