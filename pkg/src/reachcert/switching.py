"""Switching functions of linear systems.

For a pair ``(A, b)`` and a unit covector ``zeta`` the switching function is
``g(s) = <exp(A s) b, zeta>`` with derivatives ``g^(i)(s) = <exp(A s) A^i b, zeta>``.
Its sign on ``[0, T]`` is the reversed-time bang-bang control.
"""
from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from scipy.optimize import brentq

from .linalg import controllability_matrix, expm_batch, min_singular_value, numerical_rank, opnorm
from .kernels import scan_switching
from .sysdef import NotNormalError

SAMPLES = 4096
TIME_TOL = 1e-10
MERGE_LEN = 1e-9
BOUND_SLACK = 1e-9
TANGENT_TOL = 1e-11


def _pair(A, b):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or b.shape[0] != A.shape[0]:
        raise ValueError(f"incompatible shapes A{A.shape}, b{b.shape}")
    return A, b


def pair_constants(A, b):
    """``(normal, L, ||A||)`` for a single column."""
    A, b = _pair(A, b)
    K = controllability_matrix(A, b)
    return numerical_rank(K) == A.shape[0], min_singular_value(K), opnorm(A)


@dataclass(frozen=True, eq=False)
class SwitchingFunction:
    A: np.ndarray
    b: np.ndarray
    zeta: np.ndarray
    T: float
    normal: bool = field(init=False)
    L_const: float = field(init=False)
    anorm: float = field(init=False)

    def __post_init__(self):
        A, b = _pair(self.A, self.b)
        z = np.asarray(self.zeta, dtype=float).reshape(-1)
        if z.shape != b.shape:
            raise ValueError(f"zeta has length {z.size}, expected {b.size}")
        nz = np.linalg.norm(z)
        if not np.isfinite(nz) or nz == 0.0:
            raise ValueError("zeta must be a nonzero finite covector")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"horizon must be positive, got {self.T}")
        normal, L, anorm = pair_constants(A, b)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "zeta", z / nz)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "L_const", L)
        object.__setattr__(self, "anorm", anorm)

    @property
    def n(self):
        return self.b.shape[0]

    def threshold(self, s):
        return self.L_const * np.exp(-self.anorm * np.asarray(s, dtype=float)) / self.n

    def derivatives(self, s):
        """Rows ``(g, g', ..., g^(n-1))`` at each time in ``s``; shape ``(len(s), n)``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        E = expm_batch(self.A, s)
        w = np.einsum("i,kij->kj", self.zeta, E)
        return w @ controllability_matrix(self.A, self.b)

    def _require_normal(self):
        if not self.normal:
            raise NotNormalError("(A, b) fails the rank condition")


def eval_g(sf, i, s):
    """``g^(i)(s)``; ``s`` may be a scalar or an array."""
    if not 0 <= int(i) < sf.n or int(i) != i:
        raise ValueError(f"derivative order {i} outside 0..{sf.n - 1}")
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > sf.T + 1.0):
        raise ValueError("s must lie in [0, T + 1]")
    vals = sf.derivatives(arr.reshape(-1))[:, int(i)]
    return float(vals[0]) if arr.ndim == 0 else vals.reshape(arr.shape)


@dataclass(frozen=True)
class LowerBoundCheck:
    lhs: float
    rhs: float
    ok: bool
    applicable: bool = True


def sum_derivative_lower_bound(sf, s):
    """Compare ``sum_i |g^(i)(s)|`` with ``L exp(-||A|| s)``."""
    if not sf.normal:
        return LowerBoundCheck(math.nan, math.nan, False, applicable=False)
    lhs = float(np.sum(np.abs(sf.derivatives([s])[0])))
    rhs = float(sf.L_const * math.exp(-sf.anorm * float(s)))
    return LowerBoundCheck(lhs, rhs, lhs >= rhs - BOUND_SLACK)


# ---------------------------------------------------------------------------
# zeros


@dataclass(frozen=True)
class Zero:
    time: float
    sign_before: int
    sign_after: int

    @property
    def tangential(self):
        return self.sign_before == self.sign_after


@lru_cache(maxsize=64)
def _grid(A_bytes, b_bytes, n, T, npts):
    A = np.frombuffer(A_bytes).reshape(n, n)
    b = np.frombuffer(b_bytes)
    s = np.linspace(0.0, T, npts + 1)
    E = expm_batch(A, s)
    V = E @ b
    W = E @ (A @ b)
    for arr in (s, V, W):
        arr.setflags(write=False)
    return s, V, W


def sample_grid(A, b, T, npts=SAMPLES):
    """Cached ``(s, exp(A s) b, exp(A s) A b)`` on a uniform grid of ``[0, T]``."""
    A, b = _pair(A, b)
    return _grid(A.tobytes(), b.tobytes(), A.shape[0], float(T), int(npts))


def _bisect_brackets(A, v, Z, lo, hi, tol):
    """Root of ``z_q . exp(A s) v`` in each bracket ``[lo_q, hi_q]``.

    Newton steps on ``z . exp(A s) A v`` are taken while they stay inside the
    shrinking bracket; otherwise the step falls back to bisection.
    """
    Av = A @ v
    E = expm_batch(A, lo)
    flo = np.einsum("qd,qd->q", Z, E @ v)
    lo = lo.copy()
    hi = hi.copy()
    x = 0.5 * (lo + hi)
    for _ in range(200):
        if not lo.size:
            break
        E = expm_batch(A, x)
        f = np.einsum("qd,qd->q", Z, E @ v)
        df = np.einsum("qd,qd->q", Z, E @ Av)
        same = np.sign(f) == np.sign(flo)
        lo = np.where(same, x, lo)
        flo = np.where(same, f, flo)
        hi = np.where(same, hi, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - f / df
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        step = np.abs(xn - x)
        x = np.where(f == 0.0, x, xn)
        if np.max(np.where(f == 0.0, 0.0, np.minimum(step, hi - lo))) <= tol:
            break
    return x


def zeros_many(A, b, Z, T, npts=SAMPLES, tol=TIME_TOL, tangential=True, flat_output=False):
    """Zeros in ``(0, T)`` of ``g_zeta`` for every row of ``Z``.

    Returns a list (one entry per covector) of ``(times, sign_before, sign_after)``
    arrays sorted by time (or, with ``flat_output``, one flat
    ``(row, time, sign_before, sign_after)`` tuple sorted by row then time).  Sign changes between grid samples are bisected to
    ``tol``; double zeros are caught as critical points of ``g`` (sign change
    of ``g'``) whose value vanishes to ``TANGENT_TOL`` relative.
    """
    A, b = _pair(A, b)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    s, V, W = sample_grid(A, b, T, npts)
    qq, kk, kind, scale = scan_switching(Z, V, W)
    q_idx, times, sb, sa = [], [], [], []

    def g_at(q, k):
        return np.sign(np.einsum("qd,qd->q", Z[q], V[k]))

    sel = kind == 0
    if np.any(sel):
        q, k = qq[sel], kk[sel]
        q_idx.append(q)
        times.append(_bisect_brackets(A, b, Z[q], s[k], s[k + 1], tol))
        sb.append(g_at(q, k))
        sa.append(g_at(q, k + 1))
    sel = kind == 1
    if np.any(sel):
        q, k = qq[sel], kk[sel]
        q_idx.append(q)
        times.append(s[k])
        sb.append(g_at(q, k - 1))
        sa.append(g_at(q, k + 1))
    sel = kind == 2
    if tangential and np.any(sel):
        q, k = qq[sel], kk[sel]
        c = _bisect_brackets(A, A @ b, Z[q], s[k], s[k + 1], tol)
        gc = np.einsum("qd,qd->q", Z[q], expm_batch(A, c) @ b)
        hit = np.abs(gc) <= TANGENT_TOL * scale[q]
        if np.any(hit):
            q_idx.append(q[hit])
            times.append(c[hit])
            sgn = g_at(q[hit], k[hit])
            sb.append(sgn)
            sa.append(sgn)
    if q_idx:
        q_all = np.concatenate(q_idx)
        t_all = np.concatenate(times)
        sb_all = np.concatenate(sb).astype(int)
        sa_all = np.concatenate(sa).astype(int)
        order = np.lexsort((t_all, q_all))
        q_all, t_all, sb_all, sa_all = q_all[order], t_all[order], sb_all[order], sa_all[order]
        edge = 10.0 * tol
        keep = (t_all > edge) & (t_all < T - edge)
        flat = (q_all[keep], t_all[keep], sb_all[keep], sa_all[keep])
    else:
        flat = (np.empty(0, dtype=int), np.empty(0), np.empty(0, dtype=int), np.empty(0, dtype=int))
    if flat_output:
        return flat
    q_all, t_all, sb_all, sa_all = flat
    bounds = np.searchsorted(q_all, np.arange(Z.shape[0] + 1))
    return [(t_all[lo:hi], sb_all[lo:hi], sa_all[lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:])]


def count_zeros_many(A, b, Z, T, npts=SAMPLES):
    return np.array([z[0].size for z in zeros_many(A, b, Z, T, npts)], dtype=np.int64)


def find_zeros(sf):
    """Sorted zeros of ``g`` in ``(0, T)`` with the sign on either side."""
    sf._require_normal()
    t, sb, sa = zeros_many(sf.A, sf.b, sf.zeta[None, :], sf.T)[0]
    return [Zero(float(a), int(b_), int(c)) for a, b_, c in zip(t, sb, sa)]


# ---------------------------------------------------------------------------
# interval decomposition


@dataclass(frozen=True)
class SwitchingProfile:
    zeta: np.ndarray
    T: float
    L_const: float
    anorm: float
    zeros: list
    intervals: list  # intervals[i] is a list of (lo, hi) pairs
    counts: list  # observed number of intervals in each I_i
    interval_bounds: list  # bound on the number of intervals in each I_i

    def threshold(self, s):
        n = len(self.intervals)
        return self.L_const * np.exp(-self.anorm * np.asarray(s, dtype=float)) / n

    def label(self, s):
        for i, ivs in enumerate(self.intervals):
            for lo, hi in ivs:
                if lo <= s <= hi:
                    return i
        return -1

    def to_dict(self):
        return {
            "zeta": [float(v) for v in self.zeta],
            "T": self.T,
            "L_const": self.L_const,
            "anorm": self.anorm,
            "zeros": [{"time": z.time, "sign_before": z.sign_before, "sign_after": z.sign_after}
                      for z in self.zeros],
            "intervals": [[[lo, hi] for lo, hi in ivs] for ivs in self.intervals],
            "counts": list(self.counts),
            "interval_bounds": list(self.interval_bounds),
        }


def _labels(sf, s):
    """First ``i < n-1`` with ``|g^(i)| >= c``, otherwise ``n-1``."""
    D = np.abs(sf.derivatives(s))
    c = sf.threshold(s)
    ok = D[:, :-1] >= c[:, None]
    lab = np.full(len(s), sf.n - 1, dtype=int)
    any_ok = ok.any(axis=1)
    lab[any_ok] = np.argmax(ok[any_ok], axis=1)
    return lab


def _merge_short(runs):
    """Fold runs shorter than ``MERGE_LEN`` into the preceding run."""
    merged = []
    for lab, lo, hi in runs:
        if merged and hi - lo < MERGE_LEN:
            pl, plo, _ = merged[-1]
            merged[-1] = (pl, plo, hi)
        elif merged and merged[-1][0] == lab:
            merged[-1] = (lab, merged[-1][1], hi)
        elif merged and merged[-1][2] - merged[-1][1] < MERGE_LEN:
            merged[-1] = (lab, merged[-1][1], hi)
        else:
            merged.append((lab, lo, hi))
    return merged


def decompose_intervals(sf, npts=SAMPLES):
    """Split ``[0, T]`` into the sets ``I_0 .. I_{n-1}``.

    Labels are evaluated on a uniform grid and every label change is
    bisected to ``TIME_TOL``.
    """
    sf._require_normal()
    s = np.linspace(0.0, sf.T, npts + 1)
    lab = _labels(sf, s)
    cuts = np.nonzero(lab[1:] != lab[:-1])[0]
    edges = []
    for k in cuts:
        lo, hi = s[k], s[k + 1]
        left = lab[k]
        while hi - lo > TIME_TOL:
            mid = 0.5 * (lo + hi)
            if _labels(sf, np.array([mid]))[0] == left:
                lo = mid
            else:
                hi = mid
        edges.append(0.5 * (lo + hi))
    bounds = [0.0] + edges + [sf.T]
    run_labels = [lab[0]] + [lab[k + 1] for k in cuts]
    runs = _merge_short([(int(l), bounds[j], bounds[j + 1]) for j, l in enumerate(run_labels)])
    intervals = [[] for _ in range(sf.n)]
    for l, lo, hi in runs:
        intervals[l].append((float(lo), float(hi)))
    try:
        ib = interval_count_bounds(sf.A, sf.b, sf.T)
    except OverflowError:
        ib = [None] * sf.n
    return SwitchingProfile(
        zeta=sf.zeta, T=sf.T, L_const=sf.L_const, anorm=sf.anorm,
        zeros=find_zeros(sf), intervals=intervals,
        counts=[len(iv) for iv in intervals], interval_bounds=ib,
    )


# ---------------------------------------------------------------------------
# explicit bounds


def component_bounds(A, b, T):
    """Bounds ``N_0 .. N_{n-2}`` on the number of components of ``J_0 .. J_{n-2}``."""
    A, b = _pair(A, b)
    normal, L, anorm = pair_constants(A, b)
    if not normal:
        raise NotNormalError("(A, b) fails the rank condition")
    n = A.shape[0]
    if 2.0 * anorm * T > 700.0:
        raise OverflowError(f"exp(2 ||A|| T) overflows for ||A|| T = {anorm * T:.3g}")
    powers = [b]
    for _ in range(n):
        powers.append(A @ powers[-1])
    norms = [float(np.linalg.norm(p)) for p in powers]  # norms[j] = ||A^j b||
    base = T / L * math.exp(2.0 * anorm * T)
    out = []
    for i in range(n - 1):
        tail = sum(norms[m + 1] for m in range(i + 1, n))
        val = n * (n - i) / (n - i - 1) * base * tail
        val += (n - 1) if i == 0 else out[-1] * (n - i - 1)
        if not math.isfinite(val) or val > 1e300:
            raise OverflowError("switch bound exceeds floating range")
        out.append(int(math.floor(val + 1e-9)))
    return out


def interval_count_bounds(A, b, T):
    """Bounds on the number of intervals in each ``I_i``."""
    Nc = component_bounds(A, b, T)
    n = len(Nc) + 1
    if n == 1:
        return [1]
    out = [Nc[0] + 1]
    for i in range(1, n - 1):
        out.append(Nc[i] + Nc[i - 1])
    out.append(Nc[n - 2])
    return out


def switch_count_bound(A, b, T):
    """Upper bound on the number of zeros of ``g`` on ``(0, T)``, uniform in ``zeta``.

    ``g`` has no zeros on ``I_0`` and at most ``i`` zeros on each interval of
    ``I_i`` (Rolle, since ``g^(i)`` does not vanish there).
    """
    ib = interval_count_bounds(A, b, T)
    return int(sum(i * c for i, c in enumerate(ib)))


# ---------------------------------------------------------------------------
# self-test of the two integral / growth lemmas


@dataclass(frozen=True)
class SelftestReport:
    trials: int
    integral_checks: int
    integral_violations: int
    growth_checks: int
    growth_violations: int
    worst_integral_margin: float
    worst_growth_margin: float

    @property
    def ok(self):
        return self.integral_violations == 0 and self.growth_violations == 0


def _piecewise_moment(a, knots, vals, k, from_left):
    """Exact ``int (t-a)^k K`` (or ``(b-t)^k K``) for a step function ``K``."""
    b = knots[-1]
    lo, hi = knots[:-1], knots[1:]
    if from_left:
        prim = ((hi - a) ** (k + 1) - (lo - a) ** (k + 1)) / (k + 1)
    else:
        prim = ((b - lo) ** (k + 1) - (b - hi) ** (k + 1)) / (k + 1)
    return float(np.sum(vals * prim))


def appendix_bounds_selftest(trials=1000, seed=0, grid=2001):
    """Randomized check of the step-function moment inequality and the growth lemma."""
    rng = np.random.default_rng(seed)
    iv = ic = gv = gc = 0
    worst_i = worst_g = math.inf
    for _ in range(int(trials)):
        # moment inequality
        a = rng.uniform(-2.0, 2.0)
        b = a + rng.uniform(0.05, 3.0)
        pieces = int(rng.integers(1, 21))
        knots = np.sort(np.concatenate(([a, b], rng.uniform(a, b, pieces - 1))))
        vals = rng.uniform(0.0, 1.0, pieces) * (rng.uniform(size=pieces) > 0.2)
        k = int(rng.integers(0, 4))
        mass = float(np.sum(vals * np.diff(knots)))
        rhs = mass ** (k + 1) / (k + 1)
        for from_left in (True, False):
            lhs = _piecewise_moment(a, knots, vals, k, from_left)
            margin = lhs - rhs
            worst_i = min(worst_i, margin)
            ic += 1
            if margin < -1e-12 * max(1.0, abs(rhs)):
                iv += 1
        # growth lemma: f' = +-(C w(s)^k + nonnegative extra), w = s-a or b-s
        k = int(rng.integers(0, 4))
        C = rng.uniform(0.1, 3.0)
        mirrored = bool(rng.integers(0, 2))
        s = np.linspace(a, b, grid)
        w = (b - s) if mirrored else (s - a)
        coeffs = rng.uniform(0.0, 1.0, 3) * (rng.uniform(size=3) > 0.5)
        u = s - a
        fprime = C * w**k + coeffs[0] + coeffs[1] * u**2 + coeffs[2] * u**4
        if mirrored:
            prim = -C * (b - s) ** (k + 1) / (k + 1) + C * (b - a) ** (k + 1) / (k + 1)
        else:
            prim = C * u ** (k + 1) / (k + 1)
        prim = prim + coeffs[0] * u + coeffs[1] * u**3 / 3 + coeffs[2] * u**5 / 5
        total = prim[-1]
        f0 = rng.uniform(-1.2, 0.2) * total
        sign = 1.0 if rng.integers(0, 2) else -1.0
        f = sign * (f0 + prim)
        assert np.all(np.abs(sign * fprime) >= C * w**k - 1e-12)
        cap = C / (k + 1)
        if f0 < 0.0 < f0 + total:
            # unique zero of the monotone primitive
            def fun(x):
                ux = x - a
                if mirrored:
                    px = -C * (b - x) ** (k + 1) / (k + 1) + C * (b - a) ** (k + 1) / (k + 1)
                else:
                    px = C * ux ** (k + 1) / (k + 1)
                return f0 + px + coeffs[0] * ux + coeffs[1] * ux**3 / 3 + coeffs[2] * ux**5 / 5
            c = brentq(fun, a, b, xtol=1e-15, rtol=1e-15)
            margin = np.abs(f) - cap * np.abs(c - s) ** (k + 1)
            tol = 1e-11 * (1.0 + np.abs(f))
        else:
            inner = slice(1, -1)
            margin = np.abs(f) - cap * np.minimum((s - a) ** (k + 1), (b - s) ** (k + 1))
            margin = margin[inner]
            tol = 1e-11 * (1.0 + np.abs(f[inner]))
        gc += margin.size
        gv += int(np.sum(margin < -tol))
        worst_g = min(worst_g, float(np.min(margin)))
    return SelftestReport(int(trials), ic, iv, gc, gv, float(worst_i), float(worst_g))
