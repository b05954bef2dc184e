import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsgoh.expr import (
    Abs, Dims, EvalError, ParseError, diff, evaluate, kink_nodes, parse, to_text, variables,
)
from nsgoh.field import (
    KinkReport, NonsmoothField, PatternCapExceeded, jacobian_ae, sign_patterns,
)

D2 = Dims(2)
D3 = Dims(3)


def field(texts, n=3, name="F"):
    return NonsmoothField.from_strings(texts, Dims(n), name=name)


G1 = ["1", "0", "x2 - abs(x2)"]


# -- parse -----------------------------------------------------------------------

def test_parse_single_abs_node():
    e = parse("x1 + abs(x2)", D2)
    assert len([n for n in kink_nodes(e)]) == 1
    assert variables(e) == {"x1", "x2"}


def test_parse_matches_printed_field_component():
    e = parse("x2 - abs(x2)", D3)
    assert e == field(G1).components[2]
    assert isinstance(e.right, Abs)


def test_parse_error_reports_position():
    with pytest.raises(ParseError) as info:
        parse("x1 +", D2)
    assert info.value.pos == 5


@pytest.mark.parametrize("text", ["y1", "x3", "u1", "x1^x2", "abs(x1", "x1 ** 2", ""])
def test_parse_rejects_bad_input(text):
    with pytest.raises(ParseError):
        parse(text, D2)


def test_min_max_desugar_to_abs():
    e = parse("min(x1, x2)", D2)
    assert len(kink_nodes(e)) == 1
    assert evaluate(e, {"x1": 3.0, "x2": -1.0}) == -1.0
    assert evaluate(parse("max(x1, x2)", D2), {"x1": 3.0, "x2": -1.0}) == 3.0


# -- eval ------------------------------------------------------------------------

@pytest.mark.parametrize("text, point, value", [
    ("x1 + abs(x2)", {"x1": 1.0, "x2": -2.0}, 3.0),
    ("x2 - abs(x2)", {"x2": -0.1}, -0.2),
    ("x1 + abs(x1)", {"x1": 1.0}, 2.0),
])
def test_eval_examples(text, point, value):
    assert evaluate(parse(text, D2), point) == pytest.approx(value, abs=1e-15)


def test_eval_division_by_zero_raises():
    with pytest.raises(EvalError):
        evaluate(parse("x1 / x2", D2), {"x1": 1.0, "x2": 0.0})


def test_eval_unassigned_variable_raises():
    with pytest.raises(EvalError):
        evaluate(parse("x1 / x2", D2), {"x1": 1.0})


# -- round trip --------------------------------------------------------------------

_leaf = st.one_of(st.sampled_from(["x1", "x2", "x3", "t"]),
                  st.integers(0, 9).map(str), st.sampled_from(["0.5", "2.25"]))


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(children, st.integers(1, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
        children.map(lambda c: f"abs({c})"),
        children.map(lambda c: f"-({c})"),
        st.tuples(children, children).map(lambda t: f"min({t[0]}, {t[1]})"),
        st.tuples(children, children).map(lambda t: f"max({t[0]}, {t[1]})"),
    )


expressions = st.recursive(_leaf, _combine, max_leaves=8)


@settings(max_examples=50, deadline=None)
@given(expressions)
def test_print_parse_print_is_a_fixed_point(text):
    once = to_text(parse(text, D3))
    assert to_text(parse(once, D3)) == once


@settings(max_examples=50, deadline=None)
@given(expressions, st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_print_preserves_value(text, xs):
    e = parse(text, D3)
    pt = dict(zip(["x1", "x2", "x3", "t"], xs))
    a, b = evaluate(e, pt), evaluate(parse(to_text(e), D3), pt)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


# -- jacobian_ae -------------------------------------------------------------------

def test_jacobian_ae_off_kink_positive_side():
    J = jacobian_ae(field(G1), [1, 0.1, 0])
    expected = np.zeros((3, 3))
    assert np.allclose(J, expected)


def test_jacobian_ae_off_kink_negative_side():
    J = jacobian_ae(field(G1), [1, -0.1, 0])
    expected = np.zeros((3, 3))
    expected[2, 1] = 2.0
    assert np.allclose(J, expected)


def test_jacobian_ae_on_kink_reports():
    rep = jacobian_ae(field(G1), [1, 0, 0])
    assert isinstance(rep, KinkReport)
    assert rep.kinks == ("F:x2",)


SMOOTH = [
    ["x1*x2 + x3^2", "x1^3 - 2*x2", "x1*x2*x3"],
    ["(x1 + x2)^2", "x3/(1 + x1^2)", "1 - x2^3"],
    ["x1 - x2*x3", "0.5*x1^2", "x2 + x3"],
]


@pytest.mark.parametrize("texts", SMOOTH)
def test_jacobian_ae_matches_central_differences(texts, rng):
    F = field(texts)
    h = 1e-6
    for _ in range(100):
        x = rng.uniform(-2, 2, 3)
        J = jacobian_ae(F, x)
        fd = np.column_stack([(F.value(x + h * e) - F.value(x - h * e)) / (2 * h) for e in np.eye(3)])
        assert np.allclose(J, fd, rtol=1e-6, atol=1e-6)


def test_symbolic_derivative_of_abs_uses_sign():
    e = diff(parse("abs(x1)", D2), "x1")
    assert evaluate(e, {"x1": -3.0}) == -1.0
    assert evaluate(e, {"x1": 2.0}) == 1.0


# -- sign patterns -----------------------------------------------------------------

def test_sign_patterns_printed_g1_two_values():
    pats = sign_patterns(field(G1), np.array([1.0, 0.0, 0.0]))
    vals = sorted(J[2, 1] for _, J in pats)
    assert len(pats) == 2
    assert vals == [0.0, 2.0]


def test_sign_patterns_smooth_field_single_pattern():
    F = field(SMOOTH[0])
    x = np.array([0.3, -0.2, 1.0])
    pats = sign_patterns(F, x)
    assert len(pats) == 1
    assert np.allclose(pats[0][1], jacobian_ae(F, x))


def test_sign_patterns_two_independent_kinks():
    F = field(["abs(x1) + abs(x2)"], n=2)
    assert len(sign_patterns(F, np.zeros(2))) == 4


def test_sign_patterns_drop_infeasible_assignments():
    # x1 and 2*x1 share their sign, so only two of the four assignments are realizable
    F = field(["abs(x1) + abs(2*x1)"], n=1)
    pats = sign_patterns(F, np.zeros(1))
    assert sorted(J[0, 0] for _, J in pats) == [-3.0, 3.0]


def test_sign_patterns_cap():
    texts = [" + ".join(f"abs(x{i + 1})" for i in range(5))]
    with pytest.raises(PatternCapExceeded):
        sign_patterns(field(texts, n=5), np.zeros(5), cap=4)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_classical_point_has_exactly_one_pattern(xs):
    F = field(["abs(x1 - x2) + x3", "x2 - abs(x2)", "abs(x3)*x1"])
    x = np.array(xs)
    J = jacobian_ae(F, x)
    pats = sign_patterns(F, x)
    if isinstance(J, KinkReport):
        assert len(pats) >= 1
    else:
        assert len(pats) == 1
        assert np.allclose(pats[0][1], J)


def test_fields_finite_on_a_box(rng):
    F = field(["x2 - abs(x2)", "x1 + abs(x1)", "min(x1, x3)^2"])
    X = rng.uniform(-10, 10, (3, 500))
    assert np.all(np.isfinite(F.value(X)))


def test_lipschitz_bound_must_be_positive():
    with pytest.raises(ValueError):
        NonsmoothField.from_strings(["x1"], Dims(1), lipschitz=0.0)
