import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffconj.diffeo_model import Diffeo, Interval, diffeo_from_spec
from diffconj.products import (NeumaierSum, Pattern, ProductStatus, ShapeGrid, condition_p, critical_pattern,
                               h1, h2, h_two_sided, pattern_compare, shape_check, shape_grid)
from diffconj.status import Status

HALF_LINE = Interval(0.0, math.inf)
UNIT = Interval(0.0, 1.0)


def unit_conjugator_inverse(y):
    # inverse of s(x) = x(1+x)/2 on [0, 1]
    return (-1 + math.sqrt(1 + 8 * y)) / 2


@pytest.fixture(scope="module")
def mobius_pair():
    return Diffeo("x/(1+x)", HALF_LINE, [0.0]), Diffeo("x/(1+2*x)", HALF_LINE, [0.0])


@pytest.fixture(scope="module")
def compact_pair():
    f = Diffeo("x/(2-x)", UNIT)
    g = diffeo_from_spec({"expr": "x/(2-x)", "interval": [0, 1], "conjugate_by": "x*(1+x)/2"})
    return f, g


def shape_closed_form(x, a):
    # f^n(x) = x / (2^n - (2^n - 1) x) telescopes to this ratio of derivatives.
    return (x * (1 - a) / (a * (1 - x))) ** 2


# -- one-sided products

def test_self_product_is_one(mobius_pair):
    f, _ = mobius_pair
    r = h1(f, f, 0.7, 0.7)
    assert r.converged and r.value == 1.0


def test_parabolic_product_closed_form(mobius_pair):
    f, g = mobius_pair
    # (f^N)'(x) = (1 + N x)^-2, so the product tends to (2 xi / x)^2.
    assert h1(f, g, 1.0, 0.5).value == pytest.approx(1.0, abs=1e-12)
    slow = h1(f, g, 1.0, 0.25, budget=100_000)
    assert slow.status is ProductStatus.UNDETERMINED
    assert slow.value == pytest.approx(0.25, rel=1e-4)


def test_different_multipliers_diverge():
    r = h1(Diffeo("x/2", HALF_LINE, [0.0]), Diffeo("x/3", HALF_LINE, [0.0]), 1.0, 1.0)
    assert r.status is ProductStatus.DIVERGED and r.terms_used <= 200


def test_backward_product_closed_form(compact_pair):
    f, _ = compact_pair
    # f^-N(x) = 2^N x / (1 + (2^N - 1) x), so h2(f, f; x, a) -> (a / x)^2.
    r = h2(f, f, 0.2, 0.5)
    assert r.converged and r.value == pytest.approx(6.25, rel=1e-12)


@pytest.mark.parametrize("x", [0.2, 0.5, 0.8])
def test_two_sided_self_product(compact_pair, x):
    f, _ = compact_pair
    r = h_two_sided(f, f, x, 0.5)
    assert r.converged and r.value == pytest.approx(shape_closed_form(x, 0.5), rel=1e-12)


# -- condition P

def test_condition_p_examples(compact_pair, mobius_pair):
    f, g = compact_pair
    a = 0.5
    assert condition_p(f, g, f.gaps()[0], a, unit_conjugator_inverse(a)).status is Status.HOLDS
    m, n = mobius_pair
    assert condition_p(m, n, m.gaps()[0], 1.0, 0.5).status is Status.HOLDS
    lin2, lin3 = Diffeo("x/2", HALF_LINE, [0.0]), Diffeo("x/3", HALF_LINE, [0.0])
    bad = condition_p(lin2, lin3, lin2.gaps()[0], 1.0, 1.0)
    assert bad.status is Status.FAILS and bad.evidence["witness"]["product"] == "forward"


def test_condition_p_for_repelling_parabolic_end():
    # Both maps push away from 0; the product runs along inverse orbits.
    f = Diffeo("x + x^2", HALF_LINE, [0.0])
    g = Diffeo("x + x^2 + x^3", HALF_LINE, [0.0])
    gap = f.gaps()[0]
    assert not gap.attracting_end_fixed
    status = condition_p(f, g, gap, 0.1, 0.1)
    assert status.status is Status.HOLDS and set(status.evidence) >= {"backward", "a", "alpha"}


# -- shape functions

def test_shape_grid(compact_pair):
    f, _ = compact_pair
    sg = shape_grid(f, f.gaps()[0], 0.5)
    assert sg.converged and sg.ratio == pytest.approx(0.25)
    assert sg.values[-1] == pytest.approx(1.0, abs=1e-13)
    assert np.all(np.diff(sg.values) > 0)
    np.testing.assert_allclose(sg.values, shape_closed_form(sg.x, 0.5), rtol=1e-11)


@pytest.mark.parametrize("x", [0.02, 0.1, 0.7, 0.95])
def test_shape_grid_extension(compact_pair, x):
    f, _ = compact_pair
    sg = shape_grid(f, f.gaps()[0], 0.5, grid=4001)
    assert sg.extend(f, x) == pytest.approx(shape_closed_form(x, 0.5), rel=1e-5)


def test_shape_check(compact_pair):
    f, g = compact_pair
    good = shape_check(f, g, f.gaps()[0], unit_conjugator_inverse)
    # The constant is h'(1) / h'(0) for h the inverse of x(1+x)/2.
    assert good.status is Status.HOLDS and good.evidence["constant"] == pytest.approx(1 / 3, rel=1e-12)
    bad = shape_check(f, g, f.gaps()[0], lambda y: y)
    assert bad.status is Status.FAILS and "witness" in bad.evidence


def test_shape_check_needs_compact_gap(mobius_pair):
    f, g = mobius_pair
    assert shape_check(f, g, f.gaps()[0], lambda y: y).status is Status.UNDETERMINED


# -- patterns

def _grid(values):
    values = np.asarray(values, dtype=float)
    return ShapeGrid(None, 0.5, np.linspace(0, 1, len(values)), values, 0.25, (1, 1), True)


def test_critical_patterns():
    assert critical_pattern(np.ones(5)) == ("0",)
    assert critical_pattern(np.arange(5.0)) == ("+",)
    assert critical_pattern(np.array([0, 2, 1, 3, 0.5])) == ("+", "-", "+", "-")


def test_pattern_compare(compact_pair):
    f, g = compact_pair
    sf = shape_grid(f, f.gaps()[0], 0.5)
    sg = shape_grid(g, g.gaps()[0], unit_conjugator_inverse(0.5))
    assert pattern_compare(sf, sg) is Pattern.COMPATIBLE
    assert pattern_compare(_grid([1, 1, 1]), _grid([1, 2, 3])) is Pattern.INCOMPATIBLE
    assert pattern_compare(_grid([0, 2, 1, 3]), _grid([0, 1, 2, 3])) is Pattern.INCOMPATIBLE
    assert pattern_compare(_grid([0, 2, 1, 3]), _grid([0, 5, 4, 6])) is Pattern.COMPATIBLE


# -- identities on random pairs

@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_two_sided_factorization(x, xi):
    f = Diffeo("x/(2-x)", UNIT)
    g = diffeo_from_spec({"expr": "x/(2-x)", "interval": [0, 1], "conjugate_by": "x*(1+x)/2"})
    a, alpha = 0.5, 0.4
    lhs = h_two_sided(f, g, x, xi).value * h_two_sided(g, g, xi, alpha).value
    rhs = h_two_sided(f, f, x, a).value * h_two_sided(f, g, a, alpha).value
    assert lhs == pytest.approx(rhs, rel=1e-9)


@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0))
def test_one_sided_reciprocity(x, xi):
    f = Diffeo("x/(1+x) - 0.1*x^2/(1+x)^3", HALF_LINE, [0.0])
    g = Diffeo("x/(2+x)", HALF_LINE, [0.0])
    forward = h1(f, g, x, xi)
    backward = h1(g, f, xi, x)
    if forward.converged and backward.converged:
        assert forward.log_value == pytest.approx(-backward.log_value, abs=1e-12)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_compensated_sum(values):
    acc = NeumaierSum()
    for v in values:
        acc.add(v)
    assert acc.value == pytest.approx(math.fsum(values), abs=1e-6)
