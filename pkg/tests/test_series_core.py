from fractions import Fraction

import pytest
import sympy as sp
from hypothesis import assume, given, strategies as st

from diffconj.series_core import (FlatToOrderN, FormalSeries, FullLinear, Hyperbolic, IndeterminateAtOrderN,
                                  NonInvertibleSeries, OneParameterParabolic, Parabolic, SeriesError, TrivialJet,
                                  UndeterminedAtOrderN, are_conjugate, centralizer, compose, conjugate,
                                  format_series, invert, is_involutive_jet, normal_form, parse_series, square)

X = sp.Symbol("X")


def S(text, order=None):
    return parse_series(text, order)


def _to_sympy(P: FormalSeries):
    return sum(sp.Rational(c.numerator, c.denominator) * X ** k for k, c in enumerate(P.coeffs, start=1))


def _from_sympy(expr, order):
    poly = sp.Poly(sp.series(expr, X, 0, order + 1).removeO(), X)
    return FormalSeries([Fraction(str(poly.coeff_monomial(X ** k))) for k in range(1, order + 1)])


# -- literals

def test_literal_round_trip():
    P = S("X + 5X^4 + 50X^7")
    assert P.order == 7 and P[4] == 5 and P[7] == 50
    assert S(format_series(P)) == P
    assert S("X - 1/2X^2")[2] == Fraction(-1, 2)


@pytest.mark.parametrize("bad", ["", "X+", "1 + X", "X X"])
def test_bad_literals(bad):
    with pytest.raises(SeriesError):
        S(bad)


# -- composition and inverse

def test_compose_examples():
    P = S("X + X^2", 4)
    assert compose(S("X", 4), P) == P
    assert compose(S("2X", 4), P) == S("2X + 2X^2", 4)
    assert compose(P, P) == S("X + 2X^2 + 2X^3 + X^4", 4)


def test_invert_examples():
    assert invert(S("X", 5)) == S("X", 5)
    assert invert(S("2X", 5)) == S("1/2X", 5)
    expected = S("X - X^2 + 2X^3 - 5X^4 + 14X^5")
    assert invert(S("X + X^2", 5)) == expected
    # Independent closed form of the inverse.
    assert _from_sympy((sp.sqrt(1 + 4 * X) - 1) / 2, 5) == expected


def test_invert_refuses_zero_multiplier():
    with pytest.raises(NonInvertibleSeries):
        invert(FormalSeries([0, 1], 3))


coefficient = st.fractions(min_value=-3, max_value=3, max_denominator=5)


@st.composite
def series(draw, order=6, multiplier=None):
    first = multiplier if multiplier is not None else draw(coefficient.filter(lambda c: c != 0))
    rest = draw(st.lists(coefficient, min_size=order - 1, max_size=order - 1))
    return FormalSeries([first] + rest)


@given(series(), series())
def test_compose_matches_symbolic_oracle(P, Q):
    expected = _from_sympy(_to_sympy(P).subs(X, _to_sympy(Q)), P.order)
    assert compose(P, Q) == expected


@given(series(), series(), series())
def test_composition_is_associative(P, Q, R):
    assert compose(P, compose(Q, R)) == compose(compose(P, Q), R)


@given(series())
def test_inverse_is_two_sided(P):
    identity = FormalSeries.identity(P.order)
    assert compose(P, invert(P)) == identity
    assert compose(invert(P), P) == identity


# -- normal forms

def test_hyperbolic_normal_form():
    nf, H = normal_form(S("3X + X^2", 6))
    assert nf == Hyperbolic(Fraction(3))
    assert conjugate(S("3X + X^2", 6), H) == S("3X", 6)


def test_parabolic_normal_forms_agree():
    nf1, H1 = normal_form(S("X + 5X^4 + 50X^7"))
    nf2, _ = normal_form(S("X + X^4 + 2X^7"))
    assert (nf1.leading, nf1.p, nf1.sign, nf1.alpha) == (1, 3, 1, 2)
    assert nf1.key() == nf2.key()
    assert conjugate(S("X + 5X^4 + 50X^7"), H1) == nf1.prenormal(7)


def test_identity_jet_is_flat_to_order():
    nf, _ = normal_form(S("X", 6))
    assert nf == FlatToOrderN(6)


def test_parabolic_needs_enough_terms():
    with pytest.raises(IndeterminateAtOrderN):
        normal_form(S("X + X^3", 4))


@given(series(order=7, multiplier=1), series(order=7))
def test_normal_form_is_a_class_function(P, H):
    assume(any(c != 0 for c in P.coeffs[1:3]))
    before, _ = normal_form(P)
    after, _ = normal_form(conjugate(P, H)) if H.multiplier > 0 else normal_form(conjugate(P, compose(H, H)))
    assert isinstance(before, Parabolic) and isinstance(after, Parabolic)
    assert (before.p, before.sign, before.alpha) == (after.p, after.sign, after.alpha)


@given(st.integers(1, 3), st.fractions(min_value=Fraction(1, 4), max_value=4, max_denominator=4),
       st.fractions(min_value=-3, max_value=3, max_denominator=4), st.integers(1, 2), st.booleans())
def test_resonant_coefficient_survives_scaling(p, c, beta, a, negative):
    order = 2 * p + 1
    a = -a if negative else a
    P = FormalSeries.identity(order) + FormalSeries.monomial(a, p + 1, order) + FormalSeries.monomial(beta, 2 * p + 1, order)
    scaled = conjugate(P, FormalSeries([c], order))
    # Scaling by cX multiplies the X^{p+1} and X^{2p+1} coefficients by c^p and c^{2p}.
    assert scaled[p + 1] == a * c ** p and scaled[2 * p + 1] == beta * c ** (2 * p)
    assert normal_form(scaled)[0].alpha == normal_form(P)[0].alpha == beta / (a * a)


# -- conjugacy of jets

def test_hyperbolic_jets_with_same_multiplier_are_conjugate():
    ok, H = are_conjugate(S("3X + X^2", 6), S("3X + 2X^2", 6))
    assert ok and conjugate(S("3X + 2X^2", 6), H) == S("3X + X^2", 6)


@pytest.mark.parametrize("other", ["2X", "2X + X^2", "2X - 7X^3 + X^5"])
def test_different_multipliers_are_not_conjugate(other):
    assert are_conjugate(S("3X + X^2", 6), S(other, 6)) == (False, None)


def test_parabolic_jets():
    ok, H = are_conjugate(S("X + X^2 + X^3", 4), S("X + 2X^2 + 4X^3 + 8X^4"))
    assert ok
    if H is not None:
        assert conjugate(S("X + 2X^2 + 4X^3 + 8X^4"), H) == S("X + X^2 + X^3", 4)
    assert not are_conjugate(S("X + X^2 + X^3"), S("X + 2X^3"))[0]
    assert are_conjugate(S("X + X^4 + 2X^7"), S("X + 5X^4 + 50X^7"))[0]


def test_identity_jets():
    with pytest.raises(UndeterminedAtOrderN):
        are_conjugate(S("X", 5), S("X", 5))


@given(series(order=6, multiplier=1), series(order=6))
def test_conjugate_pairs_are_recognised(P, H):
    assume(any(c != 0 for c in P.coeffs[1:3]) and H.multiplier > 0)
    ok, W = are_conjugate(P, conjugate(P, H))
    assert ok
    if W is not None:
        assert conjugate(conjugate(P, H), W) == P


# -- centralizers and squares

def test_centralizer_descriptors():
    assert isinstance(centralizer(S("2X + X^3", 6)), FullLinear)
    assert centralizer(S("X + X^2", 6)) == OneParameterParabolic(1)
    assert isinstance(centralizer(S("X", 6)), TrivialJet)


def test_squares_and_involutions():
    assert square(S("-X", 5)) == S("X", 5)
    assert is_involutive_jet(S("-X", 5))
    sq = square(S("-X + X^2", 5))
    assert sq != S("X", 5) and sq[3] == -2
    assert not is_involutive_jet(S("-X + X^2", 5))
    assert square(S("1/2X", 5)) == S("1/4X", 5)
    assert not is_involutive_jet(S("1/2X", 5))


@given(series(order=6))
def test_formal_involutions(P):
    # P o (-X) o P^{-1} is always an involution.
    Q = compose(P, compose(S("-X", 6), invert(P)))
    assert is_involutive_jet(Q)
