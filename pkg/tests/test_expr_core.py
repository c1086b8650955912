from fractions import Fraction
import math

import mpmath
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from diffconj.expr_core import (Add, Constant, Div, DomainError, Exp, Neg, ParseError, PowConst,
                                UnknownIdentifier, Variable, derivative, differentiate, eval_jet, evaluate,
                                parse, to_source)

x_sym = sp.Symbol("x")


def _sympy(src: str):
    return sp.sympify(src.replace("^", "**"), locals={"x": x_sym})


# -- parsing

def test_parse_flat_family_tree():
    e = parse("x + exp(-1/x^2)")
    assert isinstance(e, Add) and isinstance(e.left, Variable)
    inner = e.right
    assert isinstance(inner, Exp) and isinstance(inner.arg, Neg)
    quotient = inner.arg.arg
    assert isinstance(quotient, Div) and isinstance(quotient.left, Constant) and quotient.left.value == 1
    assert quotient.right == PowConst(Variable(), Fraction(2))


def test_parse_mobius_tree():
    e = parse("x/(1+x)")
    assert isinstance(e, Div) and isinstance(e.left, Variable)
    assert isinstance(e.right, Add) and e.right.left.value == 1 and isinstance(e.right.right, Variable)


def test_parse_rational_power():
    e = parse("x + x^(3/2)")
    assert e.right == PowConst(Variable(), Fraction(3, 2))


@pytest.mark.parametrize("src, offset", [("x + * 2", 4), ("x/(1+*x)", 5), ("(x", 2), ("x ^ 1.5", 4)])
def test_syntax_errors_carry_byte_offset(src, offset):
    with pytest.raises(ParseError) as info:
        parse(src)
    assert info.value.offset == offset


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifier):
        parse("tan(x)")


@pytest.mark.parametrize("src", ["x/(1+x)", "x - sin(x)/10", "x + x^(3/2)", "-x + x^3*exp(-x^2)",
                                 "x+flat0(exp(-1/x^2))", "sqrt(1+x^2) - log(2+cos(x))", "x^-2", "2*x - x^(1/3)"])
def test_print_round_trip(src):
    e = parse(src)
    assert parse(to_source(e)) == e
    assert to_source(parse(to_source(e))) == to_source(e)


# -- evaluation and jets

def test_jet_of_identity():
    assert eval_jet(parse("x"), 2.0, 3).coeffs.tolist() == [2.0, 1.0, 0.0, 0.0]


def test_jet_of_mobius_at_zero():
    np.testing.assert_allclose(eval_jet(parse("x/(1+x)"), 0.0, 3).coeffs, [0, 1, -1, 1], atol=1e-15)


def test_jet_of_flat_function_away_from_zero():
    e4 = math.exp(-4)
    np.testing.assert_allclose(eval_jet(parse("exp(-1/x^2)"), 0.5, 1).coeffs, [e4, 16 * e4], rtol=1e-14)


def test_simple_derivatives():
    assert derivative(parse("x/(1+x)"), 0.0, 1) == pytest.approx(1.0, abs=1e-15)
    assert derivative(parse("x^2"), 3.0, 2) == pytest.approx(2.0, abs=1e-14)


def test_flat_guard_at_zero():
    e = parse("x + flat0(exp(-1/x^2))")
    assert evaluate(e, 0.0) == 0.0
    assert derivative(e, 0.0, 1) == 1.0
    for k in range(2, 8):
        assert derivative(e, 0.0, k) == 0.0


def test_domain_errors_name_the_subexpression():
    with pytest.raises(DomainError) as info:
        evaluate(parse("x + log(x)"), -1.0)
    assert "log" in info.value.subexpression
    with pytest.raises(DomainError):
        evaluate(parse("1/(x-1)"), 1.0)
    with pytest.raises(DomainError):
        evaluate(parse("x^(1/2)"), -0.5)


@pytest.mark.parametrize("src, a", [("x/(1+x)", 0.3), ("exp(-1/x^2)", 0.7), ("sin(x)*cos(2*x)", 1.1),
                                    ("x + x^(3/2)", 0.25), ("sqrt(1+x^2)/(2-x)", -0.4), ("log(3+x)^3", 0.2)])
def test_derivatives_against_symbolic_oracle(src, a):
    f = _sympy(src)
    jet = eval_jet(parse(src), a, 8)
    for k in range(9):
        exact = float(sp.diff(f, x_sym, k).subs(x_sym, sp.Rational(str(a))).evalf(30))
        assert jet.derivative(k) == pytest.approx(exact, rel=1e-9, abs=1e-9)


def test_symbolic_differentiation_matches_jets():
    e = parse("x*exp(sin(x)) - x^(5/3)")
    d = differentiate(e)
    for a in (0.3, 0.9, 1.7):
        assert evaluate(d, a) == pytest.approx(derivative(e, a, 1), rel=1e-12)


# -- properties

_leaves = st.sampled_from(["x", "1", "2", "0.5", "3"])


def _compound(children):
    unary = st.tuples(st.sampled_from(["exp(({})/4)", "sin({})", "cos({})", "-({})"]), children).map(
        lambda t: t[0].format(t[1]))
    binary = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]}){t[1]}({t[2]})")
    quotient = st.tuples(children, children).map(lambda t: f"({t[0]})/(2+({t[1]})^2)")
    return unary | binary | quotient


expressions = st.recursive(_leaves, _compound, max_leaves=6)


@given(expressions, st.floats(-1.5, 1.5))
def test_jets_match_finite_differences(src, a):
    e = parse(src)
    jet = eval_jet(e, a, 4)
    exact = sp.lambdify(x_sym, _sympy(src), "mpmath")
    for k in range(1, 5):
        with mpmath.workdps(40):
            fd = mpmath.diff(exact, mpmath.mpf(a), k)
        assert jet.derivative(k) == pytest.approx(float(fd), rel=1e-6, abs=1e-6)


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=6), st.floats(-2, 2))
def test_jets_exact_on_polynomials(coeffs, a):
    src = " + ".join(f"({c})*x^{k}" if k else f"({c})" for k, c in enumerate(coeffs)).replace("(-", "(0-")
    jet = eval_jet(parse(src), 0.0, len(coeffs) + 2)
    np.testing.assert_allclose(jet.coeffs[: len(coeffs)], coeffs, atol=1e-12)
    assert np.all(np.abs(jet.coeffs[len(coeffs):]) < 1e-12)
    p = np.polynomial.Polynomial(coeffs)
    assert evaluate(parse(src), a) == pytest.approx(p(a), rel=1e-12, abs=1e-12)


@given(expressions)
def test_print_parse_idempotent(src):
    e = parse(src)
    assert parse(to_source(e)) == e
