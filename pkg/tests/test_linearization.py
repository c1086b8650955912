import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffconj.diffeo_model import Diffeo, Interval, diffeo_from_spec
from diffconj.linearization import (FlatEnd, NotHyperbolic, conventional_multiplier, linearizer,
                                    linearizer_values, modulus_equal, modulus_symmetry, robbin_modulus,
                                    sternberg_iterate, sternberg_map)

HALF_LINE = Interval(0.0, math.inf)
UNIT = Interval(0.0, 1.0)
NON_FLOWABLE = "x/(2-x) + 0.05*sin(6.283185307179586*x)*x^2*(1-x)^2"


@pytest.fixture(scope="module")
def compact_map():
    return Diffeo("x/(2-x)", UNIT)


# -- Sternberg iteration

def test_sternberg_limit(compact_map):
    # 2^n f^n(x) -> x/(1-x) since f^n(x) = x / (2^n - (2^n - 1) x).
    half = Diffeo("x/2", HALF_LINE, [0.0])
    r = sternberg_iterate(compact_map, half, 1.0, 0.3, n_max=25)
    assert abs(r.value - 3 / 7) < 1e-6
    xs = np.linspace(0.05, 0.4, 36)
    h = sternberg_map(compact_map, half, 1.0, xs, 25)
    np.testing.assert_allclose(h, xs / (1 - xs), atol=1e-7)
    hf = sternberg_map(compact_map, half, 1.0, compact_map.vec(xs), 25)
    assert np.max(np.abs(hf - h / 2)) < 1e-6


def test_sternberg_converges_with_budget(compact_map):
    half = Diffeo("x/2", HALF_LINE, [0.0])
    r = sternberg_iterate(compact_map, half, 1.0, 0.3, n_max=200, tol=1e-14)
    assert r.converged and r.value == pytest.approx(3 / 7, abs=1e-13)


def test_sternberg_divergent_path():
    f = Diffeo("x + x^2", HALF_LINE, [0.0])
    g = Diffeo("x + 2*x^2", HALF_LINE, [0.0])
    r = sternberg_iterate(f, g, 2.0, 0.1, n_max=200)
    assert r.status == "NonConvergent" and r.iterations <= 200


# -- linearizers

def test_linearizer_closed_form(compact_map):
    grid = linearizer(compact_map, 0.0, (0.05, 0.5))
    np.testing.assert_allclose(grid.values, grid.xs / (1 - grid.xs), rtol=1e-13)
    # At the repelling end the linearizer of x/(2-x) is (x-1)/x up to the normalisation.
    values, _ = linearizer_values(compact_map, 1.0, [0.6, 0.8])
    np.testing.assert_allclose(values, [(0.6 - 1) / 0.6, (0.8 - 1) / 0.8], rtol=1e-12)


def test_linearizer_needs_hyperbolic_end():
    with pytest.raises(NotHyperbolic):
        linearizer(Diffeo("x/(1+x)", HALF_LINE, [0.0]), 0.0, (0.1, 1.0))


@given(st.floats(0.02, 0.98))
def test_linearizer_functional_equation(x):
    f = Diffeo(NON_FLOWABLE, UNIT)
    (a, b), _ = linearizer_values(f, 0.0, [x, f(x)])
    assert b == pytest.approx(f.deriv(0.0) * a, rel=1e-10)


# -- Robbin modulus

def test_modulus_of_flow_map_is_constant(compact_map):
    m = robbin_modulus(compact_map, compact_map.gaps()[0])
    assert np.ptp(m.periodic_part) < 1e-12
    assert m.slope == pytest.approx(-1.0)
    assert modulus_symmetry(m) == 0


def test_modulus_distinguishes_non_flowable(compact_map):
    g = diffeo_from_spec({"expr": "x/(2-x)", "interval": [0, 1], "conjugate_by": "x*(1+x)/2"})
    other = Diffeo(NON_FLOWABLE, UNIT)
    mf = robbin_modulus(compact_map, compact_map.gaps()[0])
    assert modulus_equal(mf, robbin_modulus(g, g.gaps()[0])).equal
    mo = robbin_modulus(other, other.gaps()[0])
    assert not modulus_equal(mf, mo).equal
    assert modulus_symmetry(mo) == 1


def test_modulus_refuses_parabolic_end():
    d = Diffeo("x - x^2*(1-x)", UNIT)
    with pytest.raises(NotHyperbolic):
        robbin_modulus(d, d.gaps()[0])


@given(st.floats(-0.6, 0.6))
@settings(max_examples=8)
def test_modulus_is_a_conjugacy_invariant(c):
    f = Diffeo(NON_FLOWABLE, UNIT)
    g = diffeo_from_spec({"expr": NON_FLOWABLE, "interval": [0, 1], "conjugate_by": f"x + ({c!r})*x*(1-x)"})
    cmp = modulus_equal(robbin_modulus(f, f.gaps()[0]), robbin_modulus(g, g.gaps()[0]))
    assert cmp.equal


# -- conventional multipliers

def test_conventional_multiplier_closed_form():
    # f^n(x) = x/(1+nx), so u(x) = 1/x - 1/a.
    f = Diffeo("x/(1+x)", HALF_LINE, [0.0])
    cm = conventional_multiplier(f, 1.0, [0.5, 2.0, 4.0])
    np.testing.assert_allclose(cm.values, [1.0, -0.5, -0.75], atol=1e-9)


def test_conventional_multiplier_refuses_flat_end():
    f = Diffeo("x - flat0(exp(-1/x))", HALF_LINE, [0.0])
    with pytest.raises(FlatEnd):
        conventional_multiplier(f, 0.5, [0.4])
