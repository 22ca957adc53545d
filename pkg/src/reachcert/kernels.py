"""Hot numeric kernels.

Every kernel exists twice: a loop form compiled by numba (see
:mod:`reachcert._accel`) and a vectorized numpy form.  The public
dispatchers take ``backend=None`` (follow the env flag), ``"numba"`` or
``"numpy"``.  The extremal integrator is inherently sequential, so its
numpy path is the loop form run by the interpreter.
"""
import math

import numpy as np

from . import _accel
from ._accel import kernel

INF = np.inf


def _backend(backend):
    if backend is None:
        return "numba" if _accel.USE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not _accel.USE_NUMBA:
        raise RuntimeError("numba backend requested but acceleration is disabled")
    return backend


# ---------------------------------------------------------------------------
# pair sweeps


@kernel
def _convexity_sweep_nb(X, Z, Y, p, excl):
    best = INF
    bj = -1
    bk = -1
    count = 0
    n = X.shape[1]
    for j in range(X.shape[0]):
        zn = 0.0
        for d in range(n):
            zn += Z[j, d] * Z[j, d]
        zn = math.sqrt(zn)
        for k in range(Y.shape[0]):
            r2 = 0.0
            ip = 0.0
            for d in range(n):
                diff = Y[k, d] - X[j, d]
                r2 += diff * diff
                ip += Z[j, d] * diff
            r = math.sqrt(r2)
            if r < excl:
                continue
            count += 1
            ratio = -ip / (zn * r**p)
            if ratio < best:
                best = ratio
                bj = j
                bk = k
    return best, bj, bk, count


@kernel
def _reach_sweep_nb(X, V, Y, excl):
    best = -INF
    bj = -1
    bk = -1
    count = 0
    n = X.shape[1]
    for j in range(X.shape[0]):
        vn = 0.0
        for d in range(n):
            vn += V[j, d] * V[j, d]
        vn = math.sqrt(vn)
        for k in range(Y.shape[0]):
            r2 = 0.0
            ip = 0.0
            for d in range(n):
                diff = Y[k, d] - X[j, d]
                r2 += diff * diff
                ip += V[j, d] * diff
            if math.sqrt(r2) < excl:
                continue
            count += 1
            ratio = ip / (vn * r2)
            if ratio > best:
                best = ratio
                bj = j
                bk = k
    return best, bj, bk, count


@kernel
def _epigraph_sweep_nb(X, TX, Z, TH, Y, BETA, cap, excl):
    best = -INF
    bj = -1
    bk = -1
    count = 0
    viol = 0
    n = X.shape[1]
    for j in range(X.shape[0]):
        nn = TH[j] * TH[j]
        for d in range(n):
            nn += Z[j, d] * Z[j, d]
        nn = math.sqrt(nn)
        for k in range(Y.shape[0]):
            r2 = 0.0
            ip = 0.0
            for d in range(n):
                diff = Y[k, d] - X[j, d]
                r2 += diff * diff
                ip += Z[j, d] * diff
            dt = BETA[k] - TX[j]
            den = r2 + abs(dt)
            if den < excl:
                continue
            count += 1
            ratio = (ip + TH[j] * dt) / (nn * den)
            if ratio > cap:
                viol += 1
            if ratio > best:
                best = ratio
                bj = j
                bk = k
    return best, bj, bk, viol, count


def _chunks(n, size):
    for lo in range(0, n, size):
        yield lo, min(n, lo + size)


def _convexity_sweep_np(X, Z, Y, p, excl, chunk=256):
    best, bj, bk, count = INF, -1, -1, 0
    zn = np.linalg.norm(Z, axis=1)
    for lo, hi in _chunks(X.shape[0], chunk):
        D = Y[None, :, :] - X[lo:hi, None, :]
        r = np.linalg.norm(D, axis=2)
        ip = np.einsum("jd,jkd->jk", Z[lo:hi], D)
        ok = r >= excl
        count += int(ok.sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ok, -ip / (zn[lo:hi, None] * r**p), INF)
        idx = np.unravel_index(np.argmin(ratio), ratio.shape)
        if ratio[idx] < best:
            best, bj, bk = float(ratio[idx]), lo + int(idx[0]), int(idx[1])
    return best, bj, bk, count


def _reach_sweep_np(X, V, Y, excl, chunk=256):
    best, bj, bk, count = -INF, -1, -1, 0
    vn = np.linalg.norm(V, axis=1)
    for lo, hi in _chunks(X.shape[0], chunk):
        D = Y[None, :, :] - X[lo:hi, None, :]
        r2 = np.einsum("jkd,jkd->jk", D, D)
        ip = np.einsum("jd,jkd->jk", V[lo:hi], D)
        ok = np.sqrt(r2) >= excl
        count += int(ok.sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ok, ip / (vn[lo:hi, None] * r2), -INF)
        idx = np.unravel_index(np.argmax(ratio), ratio.shape)
        if ratio[idx] > best:
            best, bj, bk = float(ratio[idx]), lo + int(idx[0]), int(idx[1])
    return best, bj, bk, count


def _epigraph_sweep_np(X, TX, Z, TH, Y, BETA, cap, excl, chunk=256):
    best, bj, bk, viol, count = -INF, -1, -1, 0, 0
    nn = np.sqrt(np.einsum("jd,jd->j", Z, Z) + TH**2)
    for lo, hi in _chunks(X.shape[0], chunk):
        D = Y[None, :, :] - X[lo:hi, None, :]
        r2 = np.einsum("jkd,jkd->jk", D, D)
        ip = np.einsum("jd,jkd->jk", Z[lo:hi], D)
        dt = BETA[None, :] - TX[lo:hi, None]
        den = r2 + np.abs(dt)
        ok = den >= excl
        count += int(ok.sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ok, (ip + TH[lo:hi, None] * dt) / (nn[lo:hi, None] * den), -INF)
        viol += int(np.sum(ok & (ratio > cap)))
        idx = np.unravel_index(np.argmax(ratio), ratio.shape)
        if ratio[idx] > best:
            best, bj, bk = float(ratio[idx]), lo + int(idx[0]), int(idx[1])
    return best, bj, bk, viol, count


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def convexity_sweep(X, Z, Y, p, excl=1e-9, backend=None):
    """Minimum of ``-<z_j, y_k - x_j> / (|z_j| |y_k - x_j|^p)`` over all pairs.

    Returns ``(value, j, k, n_pairs)``; pairs closer than ``excl`` are skipped.
    """
    X, Z, Y = _f64(X), _f64(Z), _f64(Y)
    if _backend(backend) == "numba":
        best, j, k, c = _convexity_sweep_nb(X, Z, Y, float(p), float(excl))
    else:
        best, j, k, c = _convexity_sweep_np(X, Z, Y, float(p), float(excl))
    return float(best), int(j), int(k), int(c)


def reach_sweep(X, V, Y, excl=1e-9, backend=None):
    """Maximum of ``<v_j, y_k - x_j> / (|v_j| |y_k - x_j|^2)`` over all pairs."""
    X, V, Y = _f64(X), _f64(V), _f64(Y)
    if _backend(backend) == "numba":
        best, j, k, c = _reach_sweep_nb(X, V, Y, float(excl))
    else:
        best, j, k, c = _reach_sweep_np(X, V, Y, float(excl))
    return float(best), int(j), int(k), int(c)


def epigraph_sweep(X, TX, Z, TH, Y, BETA, cap=INF, excl=1e-12, backend=None):
    """Maximum proximal-normal ratio on the epigraph, plus the count above ``cap``."""
    args = (_f64(X), _f64(TX), _f64(Z), _f64(TH), _f64(Y), _f64(BETA), float(cap), float(excl))
    if _backend(backend) == "numba":
        best, j, k, v, c = _epigraph_sweep_nb(*args)
    else:
        best, j, k, v, c = _epigraph_sweep_np(*args)
    return float(best), int(j), int(k), int(v), int(c)


# ---------------------------------------------------------------------------
# sign scans of switching functions sampled on a grid
#
# Event kinds: 0 = sign change inside (s_k, s_k+1), 1 = exact zero at s_k,
# 2 = candidate double zero (g' changes sign, g does not, |g| small).

TANGENT_WINDOW = 1e-3


@kernel
def _scan_nb(G, D):
    nq, npts = G.shape
    scales = np.zeros(nq)
    for q in range(nq):
        sc = 0.0
        for k in range(npts):
            if abs(G[q, k]) > sc:
                sc = abs(G[q, k])
        scales[q] = sc
    cap = 4 * nq + 16
    while True:
        out_q = np.empty(cap, dtype=np.int64)
        out_k = np.empty(cap, dtype=np.int64)
        out_kind = np.empty(cap, dtype=np.int64)
        cnt = 0
        for q in range(nq):
            win = TANGENT_WINDOW * scales[q]
            for k in range(1, npts):
                g0 = G[q, k - 1]
                g1 = G[q, k]
                p = g0 * g1
                kind = -1
                if p < 0.0:
                    kind = 0
                elif p > 0.0:
                    if D[q, k - 1] * D[q, k] < 0.0 and min(abs(g0), abs(g1)) < win:
                        kind = 2
                elif g0 == 0.0 and k >= 2:
                    kind = 1
                if kind >= 0:
                    if cnt < cap:
                        out_q[cnt] = q
                        out_k[cnt] = k - 1
                        out_kind[cnt] = kind
                    cnt += 1
        if cnt <= cap:
            return out_q[:cnt], out_k[:cnt], out_kind[:cnt], scales
        cap = cnt


def _scan_np(G, D):
    scales = np.max(np.abs(G), axis=1)
    prod = G[:, :-1] * G[:, 1:]
    qs, ks, kinds = [], [], []
    q, k = np.nonzero(prod < 0.0)
    qs.append(q), ks.append(k), kinds.append(np.zeros_like(q))
    q, k = np.nonzero(G[:, 1:-1] == 0.0)
    qs.append(q), ks.append(k + 1), kinds.append(np.ones_like(q))
    cand = (prod > 0.0) & (D[:, :-1] * D[:, 1:] < 0.0)
    cand &= np.minimum(np.abs(G[:, :-1]), np.abs(G[:, 1:])) < TANGENT_WINDOW * scales[:, None]
    q, k = np.nonzero(cand)
    qs.append(q), ks.append(k), kinds.append(np.full_like(q, 2))
    q = np.concatenate(qs)
    k = np.concatenate(ks)
    kind = np.concatenate(kinds)
    order = np.lexsort((k, q))
    return q[order], k[order], kind[order], scales


def scan_switching(Z, V, W, backend=None):
    """Locate sign events of ``g_q(s_k) = Z[q] . V[k]`` (``W`` samples ``g'``).

    Returns ``(q, k, kind, row_scale)`` sorted by ``(q, k)``.
    """
    G = _f64(np.asarray(Z, dtype=float) @ np.asarray(V, dtype=float).T)
    D = _f64(np.asarray(Z, dtype=float) @ np.asarray(W, dtype=float).T)
    if _backend(backend) == "numba":
        return _scan_nb(G, D)
    return _scan_np(G, D)


# ---------------------------------------------------------------------------
# semi-Lagrangian value iteration on a node grid


@kernel
def _vi_node(T, i, j, vx, vy, hx, hy, dt, R, big):
    fx = i + dt * vx / hx
    fy = j + dt * vy / hy
    if fx < 0.0 or fy < 0.0 or fx > R or fy > R:
        return big
    i0 = min(int(math.floor(fx)), R - 1)
    j0 = min(int(math.floor(fy)), R - 1)
    a = fx - i0
    b = fy - j0
    acc = dt
    wself = 0.0
    for di in range(2):
        for dj in range(2):
            w = (a if di else 1.0 - a) * (b if dj else 1.0 - b)
            if w <= 0.0:
                continue
            ii = i0 + di
            jj = j0 + dj
            if ii == i and jj == j:
                wself += w
            else:
                acc += w * T[ii, jj]
    if wself >= 1.0 - 1e-12:
        return big
    return min(acc / (1.0 - wself), big)


@kernel
def _vi_gauss_seidel_nb(T, V, hx, hy, dt, fixed, tol, max_sweeps, big):
    R = T.shape[0] - 1
    nv = V.shape[0]
    half = 0.5 * big
    sweeps = 0
    change = INF
    while sweeps < max_sweeps:
        change = 0.0
        for order in range(4):
            si = 1 if order % 2 == 0 else -1
            sj = 1 if order < 2 else -1
            for ci in range(R + 1):
                i = ci if si > 0 else R - ci
                for cj in range(R + 1):
                    j = cj if sj > 0 else R - cj
                    if fixed[i, j]:
                        continue
                    best = big
                    for q in range(nv):
                        val = _vi_node(T, i, j, V[q, i, j, 0], V[q, i, j, 1], hx, hy, dt, R, big)
                        if val < best:
                            best = val
                    old = T[i, j]
                    if best < old:
                        if best < half:
                            if old >= half:
                                change = INF
                            elif old - best > change:
                                change = old - best
                        T[i, j] = best
            sweeps += 1
        if change < tol:
            break
    return sweeps, change


def _vi_jacobi_np(T, V, hx, hy, dt, fixed, tol, max_sweeps, big):
    R = T.shape[0] - 1
    half = 0.5 * big
    ii, jj = np.meshgrid(np.arange(R + 1), np.arange(R + 1), indexing="ij")
    stencils = []
    for q in range(V.shape[0]):
        fx = ii + dt * V[q, :, :, 0] / hx
        fy = jj + dt * V[q, :, :, 1] / hy
        out = (fx < 0) | (fy < 0) | (fx > R) | (fy > R)
        i0 = np.clip(np.floor(fx).astype(np.int64), 0, R - 1)
        j0 = np.clip(np.floor(fy).astype(np.int64), 0, R - 1)
        a = fx - i0
        b = fy - j0
        corners = []
        wself = np.zeros_like(a)
        for di in (0, 1):
            for dj in (0, 1):
                w = (a if di else 1.0 - a) * (b if dj else 1.0 - b)
                w = np.where(w > 0.0, w, 0.0)
                ci = np.clip(i0 + di, 0, R)
                cj = np.clip(j0 + dj, 0, R)
                is_self = (ci == ii) & (cj == jj)
                wself = wself + np.where(is_self, w, 0.0)
                corners.append((ci, cj, np.where(is_self, 0.0, w)))
        out |= wself >= 1.0 - 1e-12
        stencils.append((corners, np.where(out, 1.0, 1.0 - wself), out))
    sweeps = 0
    change = INF
    while sweeps < max_sweeps:
        best = np.full_like(T, big)
        for corners, denom, out in stencils:
            acc = np.full_like(T, dt)
            for ci, cj, w in corners:
                acc += w * T[ci, cj]
            val = np.where(out, big, np.minimum(acc / denom, big))
            np.minimum(best, val, out=best)
        best[fixed] = 0.0
        np.minimum(best, T, out=best)
        reached = best < half
        newly = np.any(reached & (T >= half))
        diff = float(np.max(np.where(reached, T - best, 0.0)))
        change = INF if newly else diff
        T[...] = best
        sweeps += 1
        if change < tol:
            break
    return sweeps, change


def value_iteration(T, V, hx, hy, dt, fixed, tol=1e-9, max_sweeps=200000, big=1e6, backend=None):
    """Iterate ``T(x) = min_q dt + I[T](x + dt V_q(x))`` to a fixed point in place.

    ``T`` is a ``(R+1, R+1)`` node array, ``V`` holds one velocity field per
    control vertex with shape ``(nv, R+1, R+1, 2)``.  Feet leaving the box
    cost ``big``; nodes start at ``big`` and the ones still above ``big/2`` at
    the end were never reached.  Nodes flagged in the boolean array ``fixed``
    form the target and are pinned to zero.  The
    numba path runs Gauss-Seidel sweeps in four alternating orders, the numpy
    path double-buffered Jacobi sweeps; both decrease monotonically to the
    same fixed point.  Returns ``(sweeps, last_change)``.
    """
    fixed = np.ascontiguousarray(fixed, dtype=np.bool_)
    T[...] = np.minimum(T, big)
    T[fixed] = 0.0
    args = (T, _f64(V), float(hx), float(hy), float(dt),
            fixed, float(tol), int(max_sweeps), float(big))
    if _backend(backend) == "numba":
        sweeps, change = _vi_gauss_seidel_nb(*args)
    else:
        sweeps, change = _vi_jacobi_np(*args)
    return int(sweeps), float(change)


# ---------------------------------------------------------------------------
# extremal integration for planar polynomial systems
#
# State layout z = (y1, y2, l1, l2, P11, P12, P21, P22) where P is the
# transition matrix of the linearization along the trajectory.

NZ = 8
MAX_SWITCHES = 256
FLAG_SINGULAR = 1
FLAG_TOO_MANY_SWITCHES = 2


@kernel
def _poly_eval(E, C, f, c, x1, x2):
    acc = 0.0
    for k in range(C.shape[2]):
        coef = C[f, c, k]
        if coef != 0.0:
            acc += coef * x1 ** E[f, c, k, 0] * x2 ** E[f, c, k, 1]
    return acc


@kernel
def _jac_eval(JE, JC, f, c, d, x1, x2):
    acc = 0.0
    for k in range(JC.shape[3]):
        coef = JC[f, c, d, k]
        if coef != 0.0:
            acc += coef * x1 ** JE[f, c, d, k, 0] * x2 ** JE[f, c, d, k, 1]
    return acc


@kernel
def _rhs(z, u, E, C, JE, JC, out):
    x1 = z[0]
    x2 = z[1]
    m = u.shape[0]
    v0 = _poly_eval(E, C, 0, 0, x1, x2)
    v1 = _poly_eval(E, C, 0, 1, x1, x2)
    a00 = _jac_eval(JE, JC, 0, 0, 0, x1, x2)
    a01 = _jac_eval(JE, JC, 0, 0, 1, x1, x2)
    a10 = _jac_eval(JE, JC, 0, 1, 0, x1, x2)
    a11 = _jac_eval(JE, JC, 0, 1, 1, x1, x2)
    for i in range(m):
        ui = u[i]
        v0 += ui * _poly_eval(E, C, i + 1, 0, x1, x2)
        v1 += ui * _poly_eval(E, C, i + 1, 1, x1, x2)
        a00 += ui * _jac_eval(JE, JC, i + 1, 0, 0, x1, x2)
        a01 += ui * _jac_eval(JE, JC, i + 1, 0, 1, x1, x2)
        a10 += ui * _jac_eval(JE, JC, i + 1, 1, 0, x1, x2)
        a11 += ui * _jac_eval(JE, JC, i + 1, 1, 1, x1, x2)
    out[0] = v0
    out[1] = v1
    # adjoint as a column: l' = -A^T l
    out[2] = -(a00 * z[2] + a10 * z[3])
    out[3] = -(a01 * z[2] + a11 * z[3])
    # P' = A P
    out[4] = a00 * z[4] + a01 * z[6]
    out[5] = a00 * z[5] + a01 * z[7]
    out[6] = a10 * z[4] + a11 * z[6]
    out[7] = a10 * z[5] + a11 * z[7]


@kernel
def _rk4(z, u, h, E, C, JE, JC, out):
    k1 = np.empty(NZ)
    k2 = np.empty(NZ)
    k3 = np.empty(NZ)
    k4 = np.empty(NZ)
    tmp = np.empty(NZ)
    _rhs(z, u, E, C, JE, JC, k1)
    for q in range(NZ):
        tmp[q] = z[q] + 0.5 * h * k1[q]
    _rhs(tmp, u, E, C, JE, JC, k2)
    for q in range(NZ):
        tmp[q] = z[q] + 0.5 * h * k2[q]
    _rhs(tmp, u, E, C, JE, JC, k3)
    for q in range(NZ):
        tmp[q] = z[q] + h * k3[q]
    _rhs(tmp, u, E, C, JE, JC, k4)
    for q in range(NZ):
        out[q] = z[q] + h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])


@kernel
def _switching(z, i, E, C):
    return z[2] * _poly_eval(E, C, i + 1, 0, z[0], z[1]) + z[3] * _poly_eval(E, C, i + 1, 1, z[0], z[1])


@kernel
def _bracket_switching(z, i, E, C, JE, JC):
    """<l, [F, G_i](y)> with [F, G] = DG F - DF G."""
    x1 = z[0]
    x2 = z[1]
    f0 = _poly_eval(E, C, 0, 0, x1, x2)
    f1 = _poly_eval(E, C, 0, 1, x1, x2)
    g0 = _poly_eval(E, C, i + 1, 0, x1, x2)
    g1 = _poly_eval(E, C, i + 1, 1, x1, x2)
    br0 = (_jac_eval(JE, JC, i + 1, 0, 0, x1, x2) * f0 + _jac_eval(JE, JC, i + 1, 0, 1, x1, x2) * f1
           - _jac_eval(JE, JC, 0, 0, 0, x1, x2) * g0 - _jac_eval(JE, JC, 0, 0, 1, x1, x2) * g1)
    br1 = (_jac_eval(JE, JC, i + 1, 1, 0, x1, x2) * f0 + _jac_eval(JE, JC, i + 1, 1, 1, x1, x2) * f1
           - _jac_eval(JE, JC, 0, 1, 0, x1, x2) * g0 - _jac_eval(JE, JC, 0, 1, 1, x1, x2) * g1)
    return z[2] * br0 + z[3] * br1


@kernel
def _mismatch(z, u, E, C):
    for i in range(u.shape[0]):
        if _switching(z, i, E, C) * u[i] < 0.0:
            return True
    return False


@kernel
def _extremal_nb(z0, t0, t_end, dt, u_init, E, C, JE, JC, event_tol, flat_tol):
    m = u_init.shape[0]
    cap = int(math.ceil((t_end - t0) / dt)) + 2 * MAX_SWITCHES + 4
    times = np.empty(cap)
    Z = np.empty((cap, NZ))
    U = np.empty((cap, m))
    sw_t = np.empty(MAX_SWITCHES)
    sw_c = np.empty(MAX_SWITCHES, dtype=np.int64)
    n_sw = 0
    flags = 0
    u = u_init.copy()
    z = z0.copy()
    t = t0
    # initial signs from the switching function, or its derivative when it vanishes
    for i in range(m):
        if u[i] != 0.0:
            continue
        g = _switching(z, i, E, C)
        if abs(g) > flat_tol:
            u[i] = 1.0 if g > 0.0 else -1.0
        else:
            gd = _bracket_switching(z, i, E, C, JE, JC)
            if abs(gd) > flat_tol:
                u[i] = 1.0 if gd > 0.0 else -1.0
            else:
                u[i] = 1.0
                flags |= FLAG_SINGULAR
    rec = 0
    times[rec] = t
    Z[rec] = z
    U[rec] = u
    rec += 1
    z1 = np.empty(NZ)
    zm = np.empty(NZ)
    while t < t_end - 1e-15 * max(1.0, abs(t_end)):
        t_prev = t
        h = min(dt, t_end - t)
        _rk4(z, u, h, E, C, JE, JC, z1)
        if _mismatch(z1, u, E, C):
            lo = 0.0
            hi = 1.0
            while (hi - lo) * h > event_tol:
                mid = 0.5 * (lo + hi)
                _rk4(z, u, mid * h, E, C, JE, JC, zm)
                if _mismatch(zm, u, E, C):
                    hi = mid
                else:
                    lo = mid
            # secant step across the final bracket on the channels that flip
            _rk4(z, u, lo * h, E, C, JE, JC, zm)
            _rk4(z, u, hi * h, E, C, JE, JC, z1)
            frac = hi
            flip = np.zeros(m, dtype=np.bool_)
            for i in range(m):
                g_hi = _switching(z1, i, E, C)
                if g_hi * u[i] < 0.0:
                    flip[i] = True
                    g_lo = _switching(zm, i, E, C)
                    if g_lo != g_hi:
                        frac = min(frac, lo + (hi - lo) * g_lo / (g_lo - g_hi))
            frac = min(max(frac, lo), hi)
            if frac < hi:
                _rk4(z, u, frac * h, E, C, JE, JC, z1)
            t = t + frac * h
            for i in range(m):
                if flip[i]:
                    u[i] = -u[i]
                    if n_sw < MAX_SWITCHES:
                        sw_t[n_sw] = t
                        sw_c[n_sw] = i
                        n_sw += 1
                    else:
                        flags |= FLAG_TOO_MANY_SWITCHES
        else:
            t = t + h
        # flat over a whole step; short steps ending on an isolated zero do not count
        if t - t_prev >= 0.5 * dt:
            for i in range(m):
                if abs(_switching(z, i, E, C)) < flat_tol and abs(_switching(z1, i, E, C)) < flat_tol:
                    flags |= FLAG_SINGULAR
        z[:] = z1
        if rec >= cap:
            flags |= FLAG_TOO_MANY_SWITCHES
            break
        times[rec] = t
        Z[rec] = z
        U[rec] = u
        rec += 1
    return times[:rec], Z[:rec], U[:rec], sw_t[:n_sw], sw_c[:n_sw], flags


@kernel
def _fixed_control_nb(z0, breaks, U, dt, E, C, JE, JC):
    n_seg = U.shape[0]
    cap = n_seg + 2
    for q in range(n_seg):
        cap += int(math.ceil((breaks[q + 1] - breaks[q]) / dt))
    times = np.empty(cap)
    Z = np.empty((cap, NZ))
    z = z0.copy()
    z1 = np.empty(NZ)
    rec = 0
    times[0] = breaks[0]
    Z[0] = z
    rec = 1
    for q in range(n_seg):
        t = breaks[q]
        n_steps = max(1, int(math.ceil((breaks[q + 1] - t) / dt)))
        h = (breaks[q + 1] - t) / n_steps
        for step in range(n_steps):
            _rk4(z, U[q], h, E, C, JE, JC, z1)
            z[:] = z1
            t = breaks[q] + (step + 1) * h
            times[rec] = t
            Z[rec] = z
            rec += 1
    return times[:rec], Z[:rec]


def integrate_fixed_kernel(z0, breaks, U, dt, arrays):
    """RK4 under a prescribed piecewise constant control.

    Segment ``q`` runs from ``breaks[q]`` to ``breaks[q+1]`` with control
    ``U[q]``; steps are shortened so every breakpoint is hit exactly.
    """
    E, C, JE, JC = arrays
    return _fixed_control_nb(_f64(z0), _f64(breaks), _f64(np.atleast_2d(U)), float(dt), E, C, JE, JC)


def integrate_extremal_kernel(z0, t0, t_end, dt, u_init, arrays, event_tol=1e-10, flat_tol=1e-12):
    """Run the coupled state/adjoint/transition RK4 integration.

    ``u_init`` holds the starting sign per channel (``0`` = derive it from the
    switching function).  Returns ``(times, Z, U, switch_times, switch_channels, flags)``.
    """
    E, C, JE, JC = arrays
    return _extremal_nb(
        _f64(z0), float(t0), float(t_end), float(dt), _f64(u_init),
        E, C, JE, JC, float(event_tol), float(flat_tol),
    )


def poly_arrays(fields):
    """Pack planar polynomial fields into padded exponent/coefficient arrays."""
    nf = len(fields)
    jac = [(f.partial(0), f.partial(1)) for f in fields]
    K = max(
        [1]
        + [len(c) for f in fields for c in f.components]
        + [len(c) for pair in jac for d in pair for c in d.components]
    )
    E = np.zeros((nf, 2, K, 2), dtype=np.int64)
    C = np.zeros((nf, 2, K))
    JE = np.zeros((nf, 2, 2, K, 2), dtype=np.int64)
    JC = np.zeros((nf, 2, 2, K))
    for q, f in enumerate(fields):
        for c, comp in enumerate(f.components):
            for k, ((e1, e2), coef) in enumerate(comp):
                E[q, c, k] = (e1, e2)
                C[q, c, k] = coef
        for d, df in enumerate(jac[q]):
            for c, comp in enumerate(df.components):
                for k, ((e1, e2), coef) in enumerate(comp):
                    JE[q, c, d, k] = (e1, e2)
                    JC[q, c, d, k] = coef
    return E, C, JE, JC
