import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from diffconj.conjugacy_solver import (SolverError, compositional_root, find_lambda, phi_minus, phi_plus,
                                       probe_smoothness, sergeraert_criterion, shooting_mismatch, solve_d1,
                                       verify_residual)
from diffconj.diffeo_model import Diffeo, Interval, diffeo_from_spec

HALF_LINE = Interval(0.0, math.inf)
UNIT = Interval(0.0, 1.0)


def s_inverse(y):
    # inverse of x(1+x)/2, the conjugator behind the compact pair
    return (-1 + math.sqrt(1 + 8 * y)) / 2


@pytest.fixture(scope="module")
def mobius_pair():
    # x/2 conjugates x/(1+x) to x/(1+2x).
    return Diffeo("x/(1+x)", HALF_LINE, [0.0]), Diffeo("x/(1+2*x)", HALF_LINE, [0.0])


@pytest.fixture(scope="module")
def compact_pair():
    f = Diffeo("x/(2-x)", UNIT)
    g = diffeo_from_spec({"expr": "x/(2-x)", "interval": [0, 1], "conjugate_by": "x*(1+x)/2"})
    return f, g


def test_solve_identity():
    f = Diffeo("x/(1+x)", HALF_LINE, [0.0])
    phi = solve_d1(f, f, 1.0, 1.0, 1.0)
    xs = np.linspace(0.5, 1.0, 11)
    assert np.max(np.abs(phi.direct(xs) - xs)) < 1e-14
    assert abs(phi.mismatch) < 1e-12


def test_solve_with_known_lambda(mobius_pair):
    f, g = mobius_pair
    phi = solve_d1(f, g, 1.0, 0.5, 0.5)
    xs = np.linspace(0.5, 1.0, 11)
    assert np.max(np.abs(phi.direct(xs) - xs / 2)) < 1e-14
    # Too steep overshoots g(alpha), too shallow undershoots.
    assert shooting_mismatch(f, g, 1.0, 0.5, 1.0) < -0.05
    assert shooting_mismatch(f, g, 1.0, 0.5, 0.25) > 0.05


def test_solve_rejects_nonpositive_lambda(mobius_pair):
    with pytest.raises(SolverError):
        solve_d1(*mobius_pair, 1.0, 0.5, 0.0)


def test_find_lambda(mobius_pair):
    assert find_lambda(*mobius_pair, 1.0, 0.5) == pytest.approx(0.5, rel=1e-12)


def test_shooting_solution_extends_over_the_gap(mobius_pair):
    f, g = mobius_pair
    phi = phi_plus(f, g, 1.0, 0.5)
    xs = np.array([1e-3, 0.01, 0.1, 3.0, 40.0])
    np.testing.assert_allclose(phi.evaluate(xs), xs / 2, rtol=1e-12)
    assert verify_residual(phi) < 1e-14
    assert phi.mu is None


def test_residual_sees_corruption(mobius_pair):
    phi = phi_plus(*mobius_pair, 1.0, 0.5)
    bad = phi.perturbed(len(phi.u) // 2, 1e-3)
    assert verify_residual(bad) > 5e-4


def test_both_directions_on_compact_gap(compact_pair):
    f, g = compact_pair
    a = 0.5
    plus = phi_plus(f, g, a, s_inverse(a))
    minus = phi_minus(f, g, a, s_inverse(a))
    # The slopes of the inverse conjugator at the attracting and repelling ends.
    assert plus.lam == pytest.approx(2.0, rel=1e-9)
    assert minus.mu == pytest.approx(2 / 3, rel=1e-9)
    xs = [0.1, 0.3, 0.9]
    expected = [s_inverse(x) for x in xs]
    np.testing.assert_allclose(plus.evaluate(xs), expected, atol=1e-10)
    np.testing.assert_allclose(minus.evaluate(xs), expected, atol=1e-10)


def test_smoothness_probe(compact_pair):
    f, g = compact_pair
    diag = probe_smoothness(phi_plus(f, g, 0.5, s_inverse(0.5)))
    assert diag.smooth_evidence and diag.blowup is None
    # s^-1 has slope 2 and second derivative -8 at 0.
    assert diag.order(1).limit == pytest.approx(2.0, rel=1e-3)
    assert diag.order(2).limit == pytest.approx(-8.0, rel=1e-2)


def test_smoothness_probe_needs_finite_end():
    f = Diffeo("2*x", HALF_LINE, [0.0])
    phi = phi_plus(f, f, 1.0, 1.0)
    assert phi.endpoint == math.inf
    with pytest.raises(SolverError):
        probe_smoothness(phi)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_compositional_roots(compact_pair, k):
    f, _ = compact_pair
    r = compositional_root(f, k, 0.5)
    # x/(1-x) linearizes f to x/2, so the k-th root sends 1 to 2^(-1/k).
    lin, back = (lambda x: x / (1 - x)), (lambda y: y / (1 + y))
    assert r.alpha == pytest.approx(back(2 ** (-1 / k) * lin(0.5)), rel=1e-12)
    assert r.residual < 1e-10


def test_sergeraert_examples():
    monotone = Diffeo("x - x^2", Interval(0.0, 0.5, True, False), [0.0])
    assert sergeraert_criterion(monotone, 0.1).label == "Satisfied"
    # Bounded oscillation is still fine: the ratio stays below 3.
    tame = Diffeo("x - flat0(exp(-1/x)*(2+sin(1/x)))", HALF_LINE, [0.0])
    assert sergeraert_criterion(tame, 0.1).kappa <= 3.0
    wild = Diffeo("x - 0.01*flat0(exp(-1/x)*(1.001+sin(1/x^2)))", HALF_LINE, [0.0])
    res = sergeraert_criterion(wild, 0.1)
    assert res.label == "NotDetected" and res.kappa > 100


@given(st.floats(0.2, 0.8), st.floats(0.1, 4.0))
@settings(max_examples=15)
def test_mismatch_decreases_with_lambda(ratio, lam):
    f = Diffeo("x/(1+x)", HALF_LINE, [0.0])
    g = Diffeo("x/(1+2*x)", HALF_LINE, [0.0])
    lo = shooting_mismatch(f, g, 1.0, ratio, lam)
    hi = shooting_mismatch(f, g, 1.0, ratio, lam * 1.5)
    assert hi < lo


@given(st.floats(-0.5, 0.5))
@settings(max_examples=6)
def test_recovers_a_planted_conjugator(c):
    # g = s^-1 o f o s with s(x) = x + c x (1 - x); the solver must return s^-1.
    f = Diffeo("x/(2-x)", UNIT)
    s = lambda x: x + c * x * (1 - x)
    g = diffeo_from_spec({"expr": "x/(2-x)", "interval": [0, 1], "conjugate_by": f"x + ({c!r})*x*(1-x)"})
    a = 0.5
    alpha = brentq(lambda y: s(y) - a, 0.0, 1.0, xtol=1e-16)
    assert s(alpha) == pytest.approx(a, abs=1e-14)
    phi = phi_plus(f, g, a, alpha)
    xs = np.linspace(0.05, 0.95, 7)
    np.testing.assert_allclose([s(y) for y in phi.evaluate(xs)], xs, atol=1e-9)
