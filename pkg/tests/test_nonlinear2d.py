import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachcert.geometry import fit_convexity_constant
from reachcert.nonlinear2d import (
    NotCertifiableError,
    extend_optimal,
    hamiltonian_constancy,
    integrate_extremal,
    linearization_switch_bound,
    minimized_hamiltonian,
    pmp_residuals,
    reproduce_counterexample,
    sample_nonlinear_boundary,
    sublevel_boundary,
    switching_comparison,
)
from reachcert.sysdef import as_nonlinear, parse_system

ONE = [{"e": [0, 0], "c": 1}]


def planar(F, G):
    return parse_system(json.dumps({"kind": "nonlinear2d", "F": F, "G": G}))


@pytest.fixture(scope="module")
def x2_integrator():
    return planar([[], []], [[[], ONE]])


@pytest.fixture(scope="module")
def free_square():
    return planar([[], []], [[ONE, []], [[], ONE]])


@pytest.fixture(scope="module")
def cubic_boundaries(cubic):
    return {tau: sample_nonlinear_boundary(cubic, tau, 360) for tau in (0.05, 0.1, 0.2)}


def refines_like_dt4(coarse, fine, floor=1e-12):
    return fine <= max(coarse / 8.0, floor)


def test_pure_integrator_extremal(x2_integrator):
    tr = integrate_extremal(x2_integrator, (0, 1), 0.5)
    assert tr.control.initial_signs == (1,) and tr.n_switches == 0
    assert tr.endpoint == pytest.approx([0.0, 0.5], abs=1e-14)
    assert tr.certified


def test_input_validation(x2_integrator, cubic):
    with pytest.raises(ValueError):
        integrate_extremal(cubic, (0, 0), 0.1)
    with pytest.raises(ValueError):
        integrate_extremal(cubic, (1, 0), 0.1, dt=0.1 / 100)
    with pytest.raises(ValueError):
        integrate_extremal(cubic, (1, 0), 2.0)


def test_sysexample_at_most_one_switch(sysexample):
    b = sample_nonlinear_boundary(sysexample, 1.0, 360, mode="exploratory")
    assert b.n_switches.max() <= 1


def test_sysexample_refused_in_certified_mode(sysexample):
    with pytest.raises(NotCertifiableError, match="DG"):
        sample_nonlinear_boundary(sysexample, 0.5, 32)


def test_cubic_switch_count_within_linear_bound(cubic_boundaries, cubic):
    b = cubic_boundaries[0.2]
    assert b.n_switches.max() <= linearization_switch_bound(cubic, 0.2)


def test_hamiltonian_linear_and_trivial(di, x2_integrator):
    tr = integrate_extremal(as_nonlinear(di), (0.4, -1.0), 1.0)
    assert hamiltonian_constancy(tr).max_dev <= 1e-6
    tr = integrate_extremal(x2_integrator, (0.6, 0.8), 1.0)
    assert np.all(tr.hamiltonians == 0.8)
    assert hamiltonian_constancy(tr).max_dev == 0.0


@pytest.mark.parametrize("lam", [(0.3, 1.0), (1.0, -0.2), (-0.7, -0.7)])
def test_hamiltonian_sysexample_refinement(sysexample, lam):
    devs = [hamiltonian_constancy(integrate_extremal(sysexample, lam, 0.5, dt=dt)).max_dev for dt in (2e-4, 1e-4)]
    assert devs[1] <= 1e-5
    assert refines_like_dt4(*devs)


def test_minimized_hamiltonian_examples(sysexample, cubic):
    z = np.array([0.6, -0.8])
    assert minimized_hamiltonian(cubic, [0, 0], z) == pytest.approx(-0.8)
    # F(0) = 0 and G(0) = (0, 1) are both orthogonal to (1, 0)
    assert minimized_hamiltonian(sysexample, [0, 0], [1, 0]) == 0.0


def test_minimized_hamiltonian_on_sublevel_boundary(cubic):
    for tau in (0.1, 0.2):
        b = sublevel_boundary(cubic, tau, 90)
        assert max(minimized_hamiltonian(cubic, x, z) for x, z in b.samples()) <= 1e-9


def test_boundary_of_free_square(free_square):
    b = sample_nonlinear_boundary(free_square, 1.0, 64, mode="exploratory")
    # without drift each channel is constant: every endpoint is a corner of [-1, 1]^2
    assert np.allclose(np.abs(b.endpoints), 1.0, atol=1e-12)
    assert {tuple(np.sign(x)) for x in b.endpoints} == {(1, 1), (1, -1), (-1, 1), (-1, -1)}


def test_linear_as_nonlinear_matches_bangbang(di):
    from reachcert.bangbang import boundary_point
    b = sample_nonlinear_boundary(as_nonlinear(di), 1.0, 64)
    for x, z in b.samples():
        assert np.allclose(x, boundary_point(di, z, 1.0).x, atol=1e-8)


def test_sysexample_contains_arc(sysexample):
    tau = 1.0
    b = sample_nonlinear_boundary(sysexample, tau, 360, mode="exploratory")
    s = np.linspace(0.05, 0.95, 19)
    arc = np.column_stack((s * s * tau * tau, tau * (2 * s - 1)))
    P = b.polygon()
    for g in arc:
        assert np.min(np.linalg.norm(P - g, axis=1)) <= 0.02


def test_cubic_certified_geometry(cubic_boundaries):
    radii = []
    for tau, b in cubic_boundaries.items():
        assert b.certified and b.closed and b.simple
        assert b.distinct_endpoints()
        assert fit_convexity_constant(b.samples(), b.endpoints, 2.0).gamma_hat > 0
        radii.append(b.inscribed_radius() / tau**2)
    assert min(radii) > 0 and max(radii) / min(radii) <= 2.0


def test_cubic_convexity_stable(cubic):
    g = [fit_convexity_constant(b.samples(), b.endpoints, 2.0).gamma_hat
         for b in (sample_nonlinear_boundary(cubic, 0.1, k) for k in (180, 360))]
    assert g[0] == pytest.approx(g[1], rel=0.10)


@settings(max_examples=10)
@given(st.floats(0, 2 * math.pi))
def test_pmp_residuals(cubic, a):
    lam = (math.cos(a), math.sin(a))
    reps = [pmp_residuals(integrate_extremal(cubic, lam, 0.2, dt=dt)) for dt in (0.2 / 512, 0.2 / 1024)]
    for r in reps:
        assert r.state <= 1e-6 and r.adjoint <= 1e-6 and r.hamiltonian_ledger <= 1e-6
        assert r.control_mismatches == 0 and r.n_probes > 100
    assert refines_like_dt4(reps[0].state, reps[1].state)
    assert refines_like_dt4(reps[0].adjoint, reps[1].adjoint)


def test_switching_comparison(di, cubic, sysexample):
    lin = switching_comparison(integrate_extremal(as_nonlinear(di), (0.5, -0.4), 1.0))
    assert lin.K_hat <= 1e-6 and lin.ok
    cub = switching_comparison(integrate_extremal(cubic, (0.5, -0.4), 0.2))
    assert math.isfinite(cub.K_hat) and cub.ok
    ex = switching_comparison(integrate_extremal(sysexample, (0.5, -0.4), 0.5))
    assert math.isfinite(ex.K_by_order[0])


def test_extend_keeps_positive_control(x2_integrator):
    tr = extend_optimal(integrate_extremal(x2_integrator, (0, 1), 0.4), 0.1)
    assert tr.control.initial_signs == (1,) and tr.n_switches == 0
    assert tr.endpoint == pytest.approx([0.0, 0.5], abs=1e-14)


def test_extend_at_switch_uses_derivative(di):
    tau = 0.4
    # lambda_2(t) = lambda_2(0) - lambda_1 t vanishes at t = tau with negative slope
    tr = integrate_extremal(as_nonlinear(di), (1.0, tau), tau)
    ext = extend_optimal(tr, 0.1)
    assert ext.controls[-1][0] == -1.0
    assert ext.control.switch_times[0][-1] == pytest.approx(tau, abs=1e-12)


def test_extend_refusals(x2_integrator, cubic):
    with pytest.raises(ValueError):
        extend_optimal(integrate_extremal(cubic, (1, 0), 0.2), 0.2)
    # lambda orthogonal to G: the switching function vanishes identically
    with pytest.raises(ValueError):
        extend_optimal(integrate_extremal(x2_integrator, (1, 0), 0.2), 0.01)


def test_extension_lands_on_later_boundary(cubic):
    tau, delta = 0.16, 0.04
    ext = extend_optimal(integrate_extremal(cubic, (0.3, -1.0), tau), delta)
    later = sample_nonlinear_boundary(cubic, tau + delta, 360)
    z = ext.terminal_covector
    assert z @ ext.endpoint >= np.max(later.endpoints @ z) - 1e-6


def test_counterexample_rows():
    t = reproduce_counterexample(1.0, [0.5, 0.6])
    mid, r = t.rows
    assert mid.endpoint == pytest.approx([0.25, 0.0], abs=1e-8)
    assert mid.inner_product == pytest.approx(0.0, abs=1e-12)
    assert r.inner_product == pytest.approx(2 * 0.01 / math.sqrt(5), abs=1e-8)
    assert r.inner_product == pytest.approx(0.0089443, abs=1e-7)
    assert t.reach_bound == pytest.approx(8 / (17 * math.sqrt(5)))
    assert t.max_reach_ratio <= 0.21053


def test_csv_exports(cubic):
    tr = integrate_extremal(cubic, (1, 0), 0.1)
    assert tr.to_csv().splitlines()[0] == "t,y1,y2,lambda1,lambda2,u_1,H"
    b = sample_nonlinear_boundary(cubic, 0.1, 16)
    lines = b.to_csv().splitlines()
    assert lines[0] == "angle,x1,x2,n_switches" and len(lines) == 17
