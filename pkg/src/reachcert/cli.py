"""Command-line front end.

Exit codes: 0 ok, 2 unparseable input or a system not eligible for certified
runs, 3 an extremality check failed, 4 the two minimum-time solvers disagree,
5 a certificate failed in certified mode.  Every artifact starts with a
header carrying the toolkit version, a hash of the run configuration and the
seed, and no timestamps, so identical invocations give identical bytes.
"""
import argparse
import csv
import hashlib
import io
import json
import math
import sys

import numpy as np

from . import __version__
from .sysdef import (
    LinearSystem,
    SchemaError,
    is_normal,
    linearize_at_origin,
    load_builtin,
    normality_check,
    parse_system,
    system_to_dict,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_EXTREMALITY = 3
EXIT_ORACLE = 4
EXIT_CERTIFICATE = 5

DEFAULT_MAX_GAP = 0.2
EXAMPLE_RTOL = 1e-6


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# plumbing


def load_system(ref):
    """``builtin:NAME`` or a path to a JSON system definition."""
    if ref is None:
        raise CliError(EXIT_PARSE, "--system is required")
    try:
        if ref.startswith("builtin:"):
            return load_builtin(ref[len("builtin:"):])
        with open(ref, encoding="utf-8") as fh:
            return parse_system(fh.read())
    except (OSError, KeyError, SchemaError, ValueError) as exc:
        raise CliError(EXIT_PARSE, f"cannot load system {ref!r}: {exc}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def dumps(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2)


def header(args, system=None):
    """Version, configuration hash and seed for the run described by ``args``."""
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "json", "func")}
    if system is not None:
        cfg["system_doc"] = system_to_dict(system)
    blob = json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return {
        "toolkit": "reachcert",
        "version": __version__,
        "command": args.command,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest()[:16],
        "seed": args.seed,
    }


def emit(args, text):
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def csv_with_header(head, body):
    return "# " + json.dumps(head, sort_keys=True) + "\n" + body


def _eligible(system):
    """``(ok, lines)``: whether certified runs are allowed, with the reasons."""
    lines = []
    if isinstance(system, LinearSystem):
        cols = normality_check(system)
        for i, c in enumerate(cols):
            lines.append(f"column {i + 1}: rank {c.rank}/{system.n}, L={c.L_const:.6g}")
        ok = all(c.rank == system.n for c in cols)
        lines.append(f"normal: {'yes' if ok else 'no'}" + (f", L={min(c.L_const for c in cols):.6g}" if ok else ""))
        return ok, lines
    flags = system.hypothesis_flags
    lin = linearize_at_origin(system)
    lin_ok = is_normal(lin)
    for name, ok in zip(("(i) F(0)=0", "(ii) rank condition", "(iii) DG(0)=0"), flags.as_tuple()):
        lines.append(f"{name}: {'pass' if ok else 'FAIL'}")
    for i, c in enumerate(normality_check(lin)):
        lines.append(f"linearization column {i + 1}: rank {c.rank}/2, L={c.L_const:.6g}")
    if not lin_ok:
        lines.append("linearization not normal")
    return flags.all and lin_ok, lines


# ---------------------------------------------------------------------------
# commands


def cmd_check(args):
    system = load_system(args.system)
    ok, lines = _eligible(system)
    if args.json:
        report = {"header": header(args, system), "eligible": ok, "lines": lines}
        if not isinstance(system, LinearSystem):
            report["hypothesis_flags"] = list(system.hypothesis_flags.as_tuple())
        emit(args, dumps(report) + "\n")
    else:
        emit(args, "\n".join(lines + [f"certified mode: {'eligible' if ok else 'refused'}"]) + "\n")
    return EXIT_OK if ok else EXIT_PARSE


def cmd_boundary(args):
    from .bangbang import EXTREMALITY_TOL, boundary_csv, sample_boundary
    from .nonlinear2d import NotCertifiableError, hamiltonian_constancy, sample_nonlinear_boundary

    system = load_system(args.system)
    head = header(args, system)
    tau = args.tau
    if isinstance(system, LinearSystem):
        if not is_normal(system):
            raise CliError(EXIT_PARSE, "the system is not normal")
        pts = sample_boundary(system, tau, args.dirs, seed=args.seed)
        body = boundary_csv(pts)
        resid = max(p.residual for p in pts)
        summary = {
            "n_dirs": len(pts),
            "max_switch_count": max(max(p.control.n_switches) for p in pts),
            "extremality_residual_max": resid,
        }
        failed = resid > EXTREMALITY_TOL * max(1.0, tau)
    else:
        mode = "exploratory" if args.exploratory else "certified"
        try:
            b = sample_nonlinear_boundary(system, tau, args.dirs, mode=mode)
        except NotCertifiableError as exc:
            raise CliError(EXIT_PARSE, str(exc)) from exc
        body = b.to_csv()
        resid = max(hamiltonian_constancy(tr).max_dev for tr in b.trajectories)
        summary = {
            "n_dirs": len(b.endpoints),
            "max_switch_count": int(b.n_switches.max()),
            "extremality_residual_max": resid,
            "mode": mode,
            "closed": b.closed,
            "simple": b.simple,
            "uncertified": len(b.uncertified),
        }
        failed = mode == "certified" and (bool(b.uncertified) or resid > 1e-5)
    emit(args, csv_with_header(head, body))
    sys.stderr.write(dumps({"header": head, **summary}) + "\n")
    return EXIT_EXTREMALITY if failed else EXIT_OK


def _read_points(args, n):
    pts = [np.array([float(v) for v in p.split(",")]) for p in args.point or []]
    if args.points:
        with open(args.points, encoding="utf-8") as fh:
            for row in csv.reader(r for r in fh if r.strip() and not r.startswith("#")):
                try:
                    pts.append(np.array([float(v) for v in row]))
                except ValueError:
                    continue  # header row
    for p in pts:
        if p.shape != (n,):
            raise CliError(EXIT_PARSE, f"point {p.tolist()} does not have {n} coordinates")
    return pts


def _grid_spec(args):
    from .mintime import GridSpec

    r = args.box
    return GridSpec(((-r, r), (-r, r)), resolution=args.resolution)


def cmd_mintime(args):
    from .mintime import grid_value_iteration, min_time_linear

    system = load_system(args.system)
    if not isinstance(system, LinearSystem) or not is_normal(system):
        raise CliError(EXIT_PARSE, "mintime needs a normal linear system")
    pts = _read_points(args, system.n)
    grid = None
    if args.resolution and system.n == 2:
        grid = grid_value_iteration(system, _grid_spec(args))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i + 1}" for i in range(system.n)] + ["T", "method", "T_grid", "gap"])
    worst = 0.0
    for p in pts:
        T = min_time_linear(system, p, tol=args.tol).T
        if grid is None:
            w.writerow([repr(float(v)) for v in p] + [repr(float(T)), "bisect", "", ""])
            continue
        tg = float(grid.interpolate(p)[0])
        gap = abs(tg - T)
        worst = max(worst, gap)
        w.writerow([repr(float(v)) for v in p] + [repr(float(T)), "both", repr(tg), repr(gap)])
    emit(args, csv_with_header(header(args, system), buf.getvalue()))
    return EXIT_ORACLE if worst > args.max_gap else EXIT_OK


def cmd_oracle(args):
    from .mintime import compare_oracle

    system = load_system(args.system)
    if not isinstance(system, LinearSystem) or system.n != 2 or not is_normal(system):
        raise CliError(EXIT_PARSE, "oracle needs a planar normal linear system")
    rng = np.random.default_rng(args.seed)
    h = 0.5 * args.box
    pts = rng.uniform(-h, h, size=(args.count, 2))
    cmp = compare_oracle(system, pts, spec=_grid_spec(args), tol=args.tol)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x1", "x2", "T_bisect", "T_grid", "gap"])
    for p, tb, tg, gap in cmp.table:
        w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(tb)), repr(float(tg)), repr(float(gap))])
    emit(args, csv_with_header(header(args, system), buf.getvalue()))
    sys.stderr.write(f"max gap {cmp.max_abs_gap:.6g} (bound {args.max_gap:g})\n")
    return EXIT_ORACLE if cmp.max_abs_gap > args.max_gap else EXIT_OK


def _stable(a, b, band):
    if a == b:
        return True
    return b != 0.0 and abs(a / b - 1.0) <= band


def _certify_linear(args, system):
    from .geometry import (
        contact_family,
        epigraph_proximal_check,
        fit_exponent,
        inscribed_ball_radius,
        linear_convexity_certificate,
    )
    from .nonlinear2d import epigraph_samples

    T, N = args.tau, system.n
    out = {}
    c = linear_convexity_certificate(system, T, args.dirs, p=N, seed=args.seed)
    out["convexity"] = {**c.to_dict(), "pass": bool(c.positive and c.stable)}
    if system.m == 1:
        s = T * (1.0 - np.logspace(-2, math.log10(0.5), 30))
        x, z, Y = contact_family(system, T, s)
        fit = fit_exponent([(x, z, y) for y in Y])
        out["exponent"] = {"slope": fit.slope, "n_used": fit.n_used, "decades": fit.decades,
                           "pass": bool(abs(fit.slope - N) <= 0.05 * N)}
    else:
        out["exponent"] = {"skipped": "multi-input system", "pass": True}
    r = inscribed_ball_radius(system, T, seed=args.seed)
    r2 = inscribed_ball_radius(system, 0.5 * T, seed=args.seed)
    ratio = (r / T**N) / (r2 / (0.5 * T) ** N)
    out["inscribed_ball"] = {"radius": r, "radius_over_T_N": r / T**N, "half_horizon_ratio": ratio,
                             "pass": bool(r > 0.0 and 0.5 <= ratio <= 2.0)}
    if N == 2 and T <= 1.0:
        taus = [T * k / 5 for k in range(1, 6)]
        sig = []
        for k in (args.epi_dirs, 2 * args.epi_dirs):
            pts, others = epigraph_samples(system, taus, k)
            sig.append(epigraph_proximal_check(pts, others))
        out["epigraph"] = {**sig[0].to_dict(), "sigma_refined": sig[1].sigma_hat,
                           "pass": bool(math.isfinite(sig[0].sigma_hat) and _stable(sig[0].sigma_hat, sig[1].sigma_hat, 0.15))}
    else:
        out["epigraph"] = {"skipped": "planar horizons up to 1 only", "pass": True}
    return out


def _certify_nonlinear(args, system, mode):
    from .geometry import epigraph_proximal_check, fit_convexity_constant, positive_reach_estimate
    from .nonlinear2d import epigraph_samples, sample_nonlinear_boundary

    T = args.tau
    out = {}
    bs = [sample_nonlinear_boundary(system, T, k, mode=mode) for k in (args.dirs, 2 * args.dirs)]
    cs, rs = [], []
    for b in bs:
        samples = b.samples()
        cs.append(fit_convexity_constant(samples, b.endpoints, 2.0))
        rs.append(positive_reach_estimate(samples, b.endpoints))
    ratio = cs[0].gamma_hat / cs[1].gamma_hat if cs[1].gamma_hat else math.inf
    out["boundary"] = {"closed": bs[0].closed, "simple": bs[0].simple, "uncertified": len(bs[0].uncertified)}
    out["convexity"] = {**cs[0].to_dict(), "refinement_ratio": ratio,
                        "pass": bool(cs[0].gamma_hat > 0.0 and abs(ratio - 1.0) <= 0.10)}
    out["positive_reach"] = {**rs[0].to_dict(), "phi_refined": rs[1].phi_hat,
                             "pass": bool(math.isfinite(rs[0].phi_hat) and (rs[0].phi_hat <= 1e-9 or _stable(rs[0].phi_hat, rs[1].phi_hat, 0.15)))}
    taus = [T * k / 5 for k in range(1, 6)]
    sig = []
    for k in (args.epi_dirs, 2 * args.epi_dirs):
        pts, others = epigraph_samples(system, taus, k, mode=mode)
        sig.append(epigraph_proximal_check(pts, others))
    out["epigraph"] = {**sig[0].to_dict(), "sigma_refined": sig[1].sigma_hat,
                       "pass": bool(math.isfinite(sig[0].sigma_hat) and _stable(sig[0].sigma_hat, sig[1].sigma_hat, 0.15))}
    return out


def cmd_certify(args):
    from .nonlinear2d import NotCertifiableError

    system = load_system(args.system)
    ok, _ = _eligible(system)
    mode = "exploratory" if args.exploratory else "certified"
    if mode == "certified" and not ok:
        raise CliError(EXIT_PARSE, "system is not eligible for certified mode (see `check`)")
    try:
        if isinstance(system, LinearSystem):
            certs = _certify_linear(args, system)
        else:
            certs = _certify_nonlinear(args, system, mode)
    except NotCertifiableError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    passed = all(c["pass"] for c in certs.values() if "pass" in c)
    emit(args, dumps({"header": header(args, system), "mode": mode, "certificates": certs, "pass": passed}) + "\n")
    return EXIT_CERTIFICATE if mode == "certified" and not passed else EXIT_OK


def run_examples():
    """Closed-form fixtures as ``(name, ok, detail)`` rows."""
    from math import factorial

    from .bangbang import BangBangControl, integrate_linear
    from .nonlinear2d import NotCertifiableError, reproduce_counterexample, sample_nonlinear_boundary
    from .sysdef import integrator_chain

    rows = []
    eq = load_builtin("eq11")
    lin_normal = is_normal(linearize_at_origin(eq))
    try:
        sample_nonlinear_boundary(eq, 0.2, 16)
        refused = False
    except NotCertifiableError:
        refused = True
    rows.append(("eq11 linearization not normal, certified mode refused",
                 (not lin_normal) and refused, f"normal={lin_normal} refused={refused}"))
    for N in (2, 3):
        sys_ = integrator_chain(N)
        T = 1.0
        x1 = integrate_linear(sys_, BangBangControl.constant(T, [1]))
        err = 0.0
        for s in np.linspace(0.5, 0.99, 50):
            xs = integrate_linear(sys_, BangBangControl(T, (1,), ((float(s),),)))
            want = -2.0 * (T - s) ** N / factorial(N)
            err = max(err, abs((xs[0] - x1[0]) - want) / abs(want))
        rows.append((f"integrator chain N={N} endpoint gap", err <= EXAMPLE_RTOL, f"max rel err {err:.3g}"))
    for tau in (0.5, 1.0):
        tab = reproduce_counterexample(tau, np.linspace(0.05, 0.95, 19))
        scale = max(1.0, max(abs(r.closed_form) for r in tab.rows))
        ok = tab.max_endpoint_error <= EXAMPLE_RTOL and tab.max_inner_product_error <= EXAMPLE_RTOL * scale
        rows.append((f"nonconvex example tau={tau:g} curve and inner products", ok,
                     f"endpoint err {tab.max_endpoint_error:.3g}, inner product err {tab.max_inner_product_error:.3g}"))
    return rows


def cmd_examples(args):
    rows = run_examples()
    if args.json:
        text = dumps({"header": header(args), "examples": [{"name": n, "pass": ok, "detail": d} for n, ok, d in rows]}) + "\n"
    else:
        text = "".join(f"{'PASS' if ok else 'FAIL'}  {n}  ({d})\n" for n, ok, d in rows)
    emit(args, text)
    return EXIT_OK if all(ok for _, ok, _ in rows) else 1


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--system", help="system JSON file or builtin:NAME")
    common.add_argument("--out", help="write the artifact here instead of stdout")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=1e-6)
    common.add_argument("--dirs", type=int, default=360)
    common.add_argument("--resolution", type=int, default=0, help="grid cells per axis (0: no grid)")
    common.add_argument("--tau", type=float, default=1.0, help="horizon in seconds")
    common.add_argument("--json", action="store_true", help="JSON report instead of text")
    common.add_argument("--exploratory", action="store_true", help="skip the certified-mode gate")

    p = argparse.ArgumentParser(prog="reachcert", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"reachcert {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="normality and hypothesis flags").set_defaults(func=cmd_check)
    sub.add_parser("boundary", parents=[common], help="reachable-set boundary CSV").set_defaults(func=cmd_boundary)
    for name, func, helptext in (("mintime", cmd_mintime, "minimum time at query points"),
                                 ("oracle", cmd_oracle, "root-finding vs grid on random points")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--point", action="append", help="comma-separated coordinates (repeatable)")
        sp.add_argument("--points", help="CSV file of query points")
        sp.add_argument("--count", type=int, default=100, help="random points for oracle")
        sp.add_argument("--box", type=float, default=1.0, help="grid half-width; oracle points use half of it")
        sp.add_argument("--max-gap", type=float, default=DEFAULT_MAX_GAP, help="allowed solver disagreement in seconds")
        sp.set_defaults(func=func)
    sp = sub.add_parser("certify", parents=[common], help="convexity, exponent, inscribed ball, epigraph")
    sp.add_argument("--epi-dirs", type=int, default=90, help="directions per level for the epigraph check")
    sp.set_defaults(func=cmd_certify)
    sub.add_parser("examples", parents=[common], help="closed-form fixtures").set_defaults(func=cmd_examples)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code not in (0, None) else 0
    if args.command == "oracle" and not args.resolution:
        args.resolution = 512
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"reachcert: {exc}\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
