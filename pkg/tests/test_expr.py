import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from synthctl.errors import DivideByZero, DomainError, ExprSyntaxError, UnknownVariable
from synthctl.expr import (BinOp, Signature, TaylorJet, Var, eval_jet, eval_plain, parse_expr,
                           unparse, variables)
from synthctl.scenarios import ORBITAL_RHS, OrbitalParams

SIG3 = Signature(3, 1, frozenset({"nu", "r0", "chi0", "ar", "apsi"}))


def test_single_variable_parses_to_var():
    e = parse_expr("x2", SIG3)
    assert isinstance(e, Var) and e.name == "x2"


def test_orbital_rhs_tree_has_all_variables():
    e = parse_expr(ORBITAL_RHS[1], SIG3)
    assert isinstance(e, BinOp) and e.op == "+"
    assert variables(e) == {"x1", "x3", "u1", "nu", "r0", "chi0", "ar"}


@pytest.mark.parametrize("text,offset", [("x1 +", 4), ("(x1", 3), ("x1 x2", 3), ("*x1", 0),
                                         ("x1^x2", 3)])
def test_syntax_error_offsets(text, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(text, SIG3)
    assert info.value.offset == offset


def test_unknown_variable_reports_name():
    with pytest.raises(UnknownVariable) as info:
        parse_expr("x1 + x4", SIG3)
    assert info.value.name == "x4" and info.value.offset == 5


def test_divide_by_zero_records_position():
    e = parse_expr("1/(x1 - x1)", SIG3)
    with pytest.raises(DivideByZero) as info:
        eval_plain(e, [1.0, 0, 0], [0.0])
    assert info.value.offset == 1


def test_real_exponent_rejected_on_jets():
    e = parse_expr("x1^0.5", SIG3)
    jets = [TaylorJet.variable(2.0, 2)] + [TaylorJet.constant(0.0, 2)] * 2
    with pytest.raises(DomainError):
        eval_jet(e, jets, [TaylorJet.constant(0.0, 2)])


def test_plain_values():
    assert eval_plain(parse_expr("0", SIG3), [1, 2, 3], [4]) == 0
    assert eval_plain(parse_expr("x1*x1", SIG3), [3, 0, 0], [0]) == 9
    assert eval_plain(parse_expr("-x1^2", SIG3), [3, 0, 0], [0]) == -9
    assert eval_plain(parse_expr("2^3^2", SIG3), [0, 0, 0], [0]) == 512
    assert eval_plain(parse_expr("sqrt(x2)", SIG3), [0, 16, 0], [0]) == 4


def test_orbital_rhs_vanishes_at_origin():
    p = OrbitalParams().as_params()
    vals = [eval_plain(parse_expr(t, SIG3), [0, 0, 0], [0], p) for t in ORBITAL_RHS]
    assert np.allclose(vals, 0, atol=1e-12)


def test_identity_and_square_jets():
    a = 1.7
    x = TaylorJet.variable(a, 2)
    z = TaylorJet.constant(0.0, 2)
    assert eval_jet(parse_expr("x1", SIG3), [x, z, z], [z]) == x
    sq = eval_jet(parse_expr("x1^2", SIG3), [x, z, z], [z])
    assert np.allclose(sq.coeffs, [a * a, 2 * a, 1])


def test_orbital_radial_derivative_at_origin():
    op = OrbitalParams()
    p = op.as_params()
    z = TaylorJet.constant(0.0, 1)
    out = eval_jet(parse_expr(ORBITAL_RHS[1], SIG3), [TaylorJet.variable(0.0, 1), z, z], [z], p)
    expected = -op.nu / op.r0 ** 3
    assert out[1] == pytest.approx(expected, rel=1e-9)
    h = 1.0
    fd = (eval_plain(parse_expr(ORBITAL_RHS[1], SIG3), [h, 0, 0], [0], p)
          - eval_plain(parse_expr(ORBITAL_RHS[1], SIG3), [-h, 0, 0], [0], p)) / (2 * h)
    assert fd == pytest.approx(expected, rel=1e-5)


# -- property tests ---------------------------------------------------------

SIG2 = Signature(2, 1, frozenset())
coef = st.floats(-2, 2, allow_nan=False).map(lambda v: round(v, 3))


@st.composite
def polynomials(draw):
    terms = []
    for _ in range(draw(st.integers(1, 4))):
        c = draw(coef)
        i, j, k = draw(st.integers(0, 3)), draw(st.integers(0, 2)), draw(st.integers(0, 1))
        terms.append(f"({c!r})*x1^{i}*x2^{j}*u1^{k}")
    return " + ".join(terms)


def _along(text, base, direction, order):
    e = parse_expr(text, SIG2)
    x = [TaylorJet.variable(base[i], order, direction[i]) for i in range(2)]
    u = [TaylorJet.variable(base[2], order, direction[2])]
    return e, eval_jet(e, x, u)


@given(polynomials(), st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_jets_match_finite_differences(text, base, direction):
    order = 4
    e, jet = _along(text, base, direction, order)
    b, d = np.array(base), np.array(direction)
    g = lambda s: eval_plain(e, (b + s * d)[:2], (b + s * d)[2:])
    h = 0.25
    # k-th derivative by central differences over 9 points, compared to k! * coeff
    pts = np.arange(-4, 5) * h
    vals = np.array([g(s) for s in pts])
    scale = max(1.0, np.max(np.abs(vals)))
    for k in range(1, order + 1):
        # interpolation is exact: the composed map has degree at most 6
        poly = np.polynomial.polynomial.polyfit(pts, vals, 8)
        assert jet[k] == pytest.approx(poly[k], rel=1e-6, abs=1e-6 * scale)


jets = st.lists(st.floats(-3, 3), min_size=4, max_size=4).map(lambda c: TaylorJet(np.array(c)))


@given(jets, jets, jets)
def test_jet_ring_axioms(a, b, c):
    assert np.allclose(((a * b) * c).coeffs, (a * (b * c)).coeffs, rtol=1e-12, atol=1e-9)
    assert np.allclose((a * (b + c)).coeffs, (a * b + a * c).coeffs, rtol=1e-12, atol=1e-9)


@given(jets)
def test_jet_division_inverts_multiplication(a):
    b = TaylorJet(np.array([2.0, 0.3, -0.1, 0.5]))
    assert np.allclose(((a * b) / b).coeffs, a.coeffs, atol=1e-10)


@given(polynomials())
def test_parse_unparse_fixed_point(text):
    e = parse_expr(text, SIG2)
    assert parse_expr(unparse(e), SIG2) == e


def test_sqrt_jet_squares_back():
    x = TaylorJet(np.array([4.0, 1.0, 0.5, -0.2]))
    r = x.sqrt()
    assert np.allclose((r * r).coeffs, x.coeffs)
    assert r[0] == math.sqrt(4.0)
