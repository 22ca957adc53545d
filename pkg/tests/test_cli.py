import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from reachcert import __version__, cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(text):
    lines = text.splitlines()
    assert lines[0].startswith("# ")
    head = json.loads(lines[0][2:])
    rows = list(csv.reader(lines[1:]))
    return head, rows[0], rows[1:]


def test_check_outputs(capsys):
    code, out, _ = run(capsys, "check", "--system", "builtin:double_integrator")
    assert code == 0 and "normal: yes, L=1" in out
    code, out, _ = run(capsys, "check", "--system", "builtin:eq11")
    assert code == 2 and "linearization not normal" in out
    code, out, _ = run(capsys, "check", "--system", "builtin:sysexample")
    assert code == 2
    assert "(i) F(0)=0: pass" in out and "(ii) rank condition: pass" in out and "(iii) DG(0)=0: FAIL" in out
    code, out, _ = run(capsys, "check", "--system", "builtin:cubic_double_integrator", "--json")
    rep = json.loads(out)
    assert code == 0 and rep["eligible"] and rep["hypothesis_flags"] == [True, True, True]


def test_parse_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{bad")
    assert run(capsys, "check", "--system", str(bad))[0] == 2
    assert run(capsys, "check", "--system", str(tmp_path / "missing.json"))[0] == 2
    assert run(capsys, "check", "--system", "builtin:nope")[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "mintime", "--system", "builtin:double_integrator", "--point=1,2,3")[0] == 2


def test_boundary_double_integrator(capsys):
    code, out, err = run(capsys, "boundary", "--system", "builtin:double_integrator", "--dirs", "360")
    head, cols, rows = read_csv(out)
    assert code == 0 and len(rows) == 360
    assert cols == ["zeta_1", "zeta_2", "x_1", "x_2", "n_switches_1", "T"]
    X = np.array([[float(r[2]), float(r[3])] for r in rows])
    # the direction set is symmetric, so the point cloud is too
    for x in X:
        assert np.min(np.linalg.norm(X + x, axis=1)) <= 1e-9
    summary = json.loads(err)
    assert summary["n_dirs"] == 360 and summary["extremality_residual_max"] <= 1e-7


def test_boundary_sysexample_contains_midpoint(capsys):
    code, out, _ = run(capsys, "boundary", "--system", "builtin:sysexample", "--tau", "1", "--exploratory")
    assert code == 0
    P = np.array([[float(r[1]), float(r[2])] for r in read_csv(out)[2]])
    P = P[np.linalg.norm(P - np.roll(P, 1, axis=0), axis=1) > 0]
    Q = np.roll(P, -1, axis=0)
    D = Q - P
    x = np.array([0.25, 0.0])
    t = np.clip(np.einsum("kd,kd->k", x - P, D) / np.einsum("kd,kd->k", D, D), 0, 1)
    assert np.min(np.linalg.norm(P + t[:, None] * D - x, axis=1)) <= 1e-4
    assert run(capsys, "boundary", "--system", "builtin:sysexample")[0] == 2


def test_boundary_cubic_closed(capsys):
    code, _, err = run(capsys, "boundary", "--system", "builtin:cubic_double_integrator", "--tau", "0.2")
    s = json.loads(err)
    assert code == 0 and s["closed"] and s["simple"] and s["mode"] == "certified"


def test_boundary_extremality_failure(capsys, monkeypatch):
    import reachcert.bangbang as bb
    monkeypatch.setattr(bb, "EXTREMALITY_TOL", -1.0)
    assert run(capsys, "boundary", "--system", "builtin:double_integrator", "--dirs", "8")[0] == 3


def test_mintime_points(capsys, tmp_path):
    pts = tmp_path / "pts.csv"
    pts.write_text("x1,x2\n0.3,-0.2\n-0.3,0.2\n")
    code, out, _ = run(capsys, "mintime", "--system", "builtin:double_integrator",
                       "--point=0,0", "--point=0.5,-1", "--points", str(pts))
    _, cols, rows = read_csv(out)
    T = [float(r[2]) for r in rows]
    assert code == 0 and cols[:4] == ["x1", "x2", "T", "method"]
    assert T[0] == 0.0
    assert T[1] == pytest.approx(1.0, abs=1e-6)
    assert T[2] == pytest.approx(T[3], abs=2e-6)


def test_mintime_oracle_gap_exit(capsys):
    argv = ["mintime", "--system", "builtin:double_integrator", "--point=0.2,-0.1", "--resolution", "64"]
    code, out, _ = run(capsys, *argv, "--max-gap", "1e-9")
    assert code == 4 and read_csv(out)[2][0][3] == "both"
    assert run(capsys, *argv, "--max-gap", "1.0")[0] == 0


def test_certify_double_integrator(capsys):
    code, out, _ = run(capsys, "certify", "--system", "builtin:double_integrator", "--tau", "1")
    rep = json.loads(out)
    assert code == 0 and rep["pass"]
    assert rep["certificates"]["convexity"]["exponent"] == 2.0
    assert rep["certificates"]["convexity"]["gamma_hat"] > 0


def test_certify_triple_integrator_exponent(capsys):
    code, out, _ = run(capsys, "certify", "--system", "builtin:triple_integrator", "--tau", "1")
    rep = json.loads(out)
    assert code == 0
    assert rep["certificates"]["exponent"]["slope"] == pytest.approx(3.0, abs=0.15)


def test_certify_sysexample(capsys):
    assert run(capsys, "certify", "--system", "builtin:sysexample")[0] == 2
    code, out, _ = run(capsys, "certify", "--system", "builtin:sysexample", "--tau", "1", "--exploratory",
                       "--dirs", "180", "--epi-dirs", "40")
    certs = json.loads(out)["certificates"]
    assert code == 0
    assert not certs["convexity"]["pass"] and certs["convexity"]["gamma_hat"] < 0
    assert certs["positive_reach"]["pass"]


def test_certificate_failure_exit(capsys, monkeypatch):
    monkeypatch.setattr(cli, "_certify_linear", lambda args, system: {"convexity": {"pass": False}})
    assert run(capsys, "certify", "--system", "builtin:double_integrator")[0] == 5


def test_examples(capsys):
    code, out, _ = run(capsys, "examples")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 5 and all(line.startswith("PASS") for line in lines)


def test_headers_and_determinism(capsys, tmp_path):
    outs = []
    for k in range(2):
        path = tmp_path / f"b{k}.csv"
        assert run(capsys, "boundary", "--system", "builtin:rotation", "--tau", "3", "--dirs", "32",
                   "--seed", "7", "--out", str(path))[0] == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    head = json.loads(outs[0].decode().splitlines()[0][2:])
    assert head["version"] == __version__ and head["seed"] == 7 and len(head["config_hash"]) == 16
    # a different configuration hashes differently
    path = tmp_path / "c.csv"
    run(capsys, "boundary", "--system", "builtin:rotation", "--tau", "3", "--dirs", "40", "--seed", "7", "--out", str(path))
    assert json.loads(path.read_text().splitlines()[0][2:])["config_hash"] != head["config_hash"]
    j = [run(capsys, "check", "--system", "builtin:rotation", "--json")[1] for _ in range(2)]
    assert j[0] == j[1] and json.loads(j[0])["header"]["command"] == "check"


def test_entry_point():
    r = subprocess.run([sys.executable, "-m", "reachcert.cli", "check", "--system", "builtin:rotation"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "normal: yes" in r.stdout
