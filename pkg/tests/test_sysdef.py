import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from reachcert.sysdef import (
    LinearSystem,
    NonlinearSystem2D,
    PolyVectorField,
    SchemaError,
    builtin_names,
    eval_field,
    eval_jacobian,
    is_normal,
    linearize_at_origin,
    load_builtin,
    normality_check,
    parse_system,
    reversed_system,
    serialize,
)


def doc(**kw):
    return json.dumps(kw)


def test_parse_linear_double_integrator():
    s = parse_system(doc(kind="linear", A=[[0, 1], [0, 0]], B=[[0], [1]]))
    assert isinstance(s, LinearSystem)
    assert (s.n, s.m) == (2, 1)


def test_parse_sysexample_flags():
    s = parse_system(doc(
        kind="nonlinear2d",
        F=[[{"e": [0, 1], "c": 1}], []],
        G=[[[{"e": [0, 1], "c": 1}], [{"e": [0, 0], "c": 1}]]],
    ))
    assert s.hypothesis_flags.as_tuple() == (True, True, False)


def test_parse_eq11_flags():
    s = load_builtin("eq11")
    assert s.hypothesis_flags.rank_condition is False
    assert np.all(linearize_at_origin(s).A == 0.0)


@pytest.mark.parametrize("bad, path", [
    ({"kind": "affine"}, "kind"),
    ({"kind": "linear", "A": [[0, 1], [0, 0]]}, "B"),
    ({"kind": "linear", "A": [[0, 1]], "B": [[0], [1]]}, "A"),
    ({"kind": "linear", "A": [[0, 1], [0, 0]], "B": [[0], [1]], "extra": 1}, "$"),
    ({"kind": "nonlinear2d", "F": [[{"e": [7, 0], "c": 1}], []], "G": [[[], [{"e": [0, 0], "c": 1}]]]}, "F"),
])
def test_schema_errors_carry_a_path(bad, path):
    with pytest.raises(SchemaError) as exc:
        parse_system(json.dumps(bad))
    assert exc.value.path.startswith(path)


def test_invalid_json():
    with pytest.raises(SchemaError):
        parse_system("{not json")


@pytest.mark.parametrize("A, b, rank, L", [
    ([[0, 1], [0, 0]], [0, 1], 2, 1.0),
    ([[0, 0], [0, 0]], [1, 0], 1, 0.0),
    ([[0, 1], [-1, 0]], [0, 1], 2, 1.0),
])
def test_normality_check(A, b, rank, L):
    c = normality_check(LinearSystem(np.array(A, float), np.array(b, float)[:, None]))[0]
    assert c.rank == rank
    assert c.L_const == pytest.approx(L, abs=1e-12)


def test_linearize_examples(sysexample):
    lin = linearize_at_origin(sysexample)
    assert np.array_equal(lin.A, [[0, 1], [0, 0]])
    assert np.array_equal(lin.B, [[0], [1]])
    zero = NonlinearSystem2D(PolyVectorField(((), ())), (PolyVectorField.from_terms([], [((0, 0), 1.0)]),))
    lz = linearize_at_origin(zero)
    assert np.all(lz.A == 0) and np.array_equal(lz.B, [[0], [1]])


def test_eval_field_and_jacobian():
    F = PolyVectorField.from_terms([((0, 1), 1.0)], [])
    assert np.array_equal(eval_field(F, [3, 5]), [5, 0])
    assert np.array_equal(eval_jacobian(F, [7, -2]), [[0, 1], [0, 0]])
    F2 = PolyVectorField.from_terms([((0, 2), -1.0)], [])
    assert np.array_equal(eval_field(F2, [0, 2]), [-4, 0])
    assert np.array_equal(eval_jacobian(F2, [0, 2]), [[0, -4], [0, 0]])


terms = st.lists(
    st.tuples(st.tuples(st.integers(0, 3), st.integers(0, 3)), st.floats(-2, 2, allow_nan=False)),
    max_size=5,
)


@st.composite
def nonlinear_systems(draw):
    F = PolyVectorField.from_terms(draw(terms), draw(terms))
    cols = tuple(PolyVectorField.from_terms(draw(terms), draw(terms)) for _ in range(draw(st.integers(1, 2))))
    return NonlinearSystem2D(F, cols)


@given(nonlinear_systems())
def test_linearization_matches_central_differences(s):
    h = 1e-5
    lin = linearize_at_origin(s)
    J = np.column_stack([(eval_field(s.F, h * e) - eval_field(s.F, -h * e)) / (2 * h) for e in np.eye(2)])
    assert np.allclose(lin.A, J, atol=1e-8)
    for i, g in enumerate(s.G_cols):
        assert np.allclose(lin.B[:, i], eval_field(g, [0.0, 0.0]), atol=1e-12)


@given(nonlinear_systems())
def test_nonlinear_round_trip(s):
    assert parse_system(serialize(s)) == s


@given(
    arrays(float, (3, 3), elements=st.floats(-2, 2, allow_nan=False)),
    arrays(float, (3, 2), elements=st.floats(-2, 2, allow_nan=False)),
)
def test_linear_round_trip(A, B):
    s = LinearSystem(A, B)
    assert parse_system(serialize(s)) == s


@given(arrays(float, (3, 3), elements=st.floats(-2, 2, allow_nan=False)),
       arrays(float, (3,), elements=st.floats(-2, 2, allow_nan=False)),
       st.integers(0, 2**31))
def test_normality_invariant_under_rotation(A, b, seed):
    Q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(3, 3)))
    c1 = normality_check(LinearSystem(A, b[:, None]))[0]
    c2 = normality_check(LinearSystem(Q @ A @ Q.T, (Q @ b)[:, None]))[0]
    assert c1.rank == c2.rank
    assert c1.L_const == pytest.approx(c2.L_const, abs=1e-9 * (1 + c1.L_const))


def test_builtins_load():
    names = builtin_names()
    for n in ("double_integrator", "rotation", "sysexample", "eq11", "cubic_double_integrator"):
        assert n in names
        load_builtin(n)
    with pytest.raises(KeyError):
        load_builtin("nope")


def test_reversed_system_flips_signs(di, sysexample):
    r = reversed_system(di)
    assert np.array_equal(r.A, -di.A) and np.array_equal(r.B, -di.B)
    rr = reversed_system(sysexample)
    assert np.allclose(rr.f([0.3, 0.2], [1.0]), -sysexample.f([0.3, 0.2], [1.0]))


def test_dimension_limits():
    with pytest.raises(ValueError):
        LinearSystem(np.zeros((6, 6)), np.ones((6, 1)))
    with pytest.raises(ValueError):
        LinearSystem(np.zeros((2, 2)), np.ones((2, 3)))
    assert is_normal(load_builtin("triple_integrator"))
