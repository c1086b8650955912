import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffconj.diffeo_model import (CardinalityMismatch, ConjugateMap, Diffeo, DiffeoError, ExprMap, Interval,
                                   MonotonicityViolation, SemigroupClass, UndeclaredFixedPointSuspected,
                                   align_fixed_sets, classify_gap, diffeo_from_spec, orbit_count,
                                   semigroup_class, sign_condition, verify)
from diffconj.status import Status

HALF_LINE = Interval(0.0, math.inf)
REAL = Interval(-math.inf, math.inf)


@pytest.fixture(scope="module")
def mobius():
    return Diffeo("x/(1+x)", HALF_LINE, [0.0])


# -- intervals and construction

def test_interval_rules():
    with pytest.raises(DiffeoError):
        Interval(1.0, 1.0)
    assert not Interval(0.0, math.inf, True, True).upper_closed
    spec = Interval.from_spec([0, "inf"])
    assert spec.lower == 0 and spec.upper == math.inf and spec.lower_closed


def test_closed_ends_are_fixed():
    d = Diffeo("x^2", Interval(0.0, 1.0))
    assert d.fixed_points == (0.0, 1.0)
    assert verify(d).ok


def test_spec_block():
    d = diffeo_from_spec({"expr": "x/(2-x)", "interval": [0, 1], "fixed_points": [0, 1]})
    assert d(0.5) == pytest.approx(1 / 3)
    conj = diffeo_from_spec({"expr": "x/(2-x)", "interval": [0, 1], "conjugate_by": "x*(1+x)/2"})
    s = lambda x: x * (1 + x) / 2
    y = conj(0.4)
    assert s(y) == pytest.approx(s(0.4) / (2 - s(0.4)), rel=1e-13)


# -- verification

def test_verify_accepts_mobius(mobius):
    rep = verify(mobius)
    assert rep.ok and rep.gap_signs == [-1]


def test_verify_finds_undeclared_fixed_point_near_pi():
    with pytest.raises(UndeclaredFixedPointSuspected) as info:
        verify(Diffeo("x - sin(x)/10", REAL, [0.0]))
    lo, hi = info.value.bracket
    assert lo <= math.pi <= hi


def test_verify_rejects_non_monotone_map():
    with pytest.raises(MonotonicityViolation):
        verify(Diffeo("x + 2*sin(x)", Interval(-1.0, 1.0, False, False), [0.0], degree=1))


# -- iteration

def test_iterates_of_mobius(mobius):
    assert mobius.iterate(1.0, 2) == pytest.approx(1 / 3, rel=1e-15)
    assert mobius.iterate(0.5, -1) == pytest.approx(1.0, rel=1e-13)
    assert mobius.iterate(0.0, 7) == 0.0


@given(st.floats(0.05, 20), st.integers(-4, 4), st.integers(-4, 4))
def test_iterates_compose(x, m, n):
    d = Diffeo("x/(1+x)", HALF_LINE, [0.0])
    # Closed form x/(1 + n x) where defined.
    if 1 + (m + n) * x <= 0 or 1 + m * x <= 0:
        return
    assert d.iterate(d.iterate(x, m), n) == pytest.approx(d.iterate(x, m + n), rel=1e-11)
    assert d.iterate(x, m + n) == pytest.approx(x / (1 + (m + n) * x), rel=1e-11)


@given(st.floats(0.01, 5))
def test_orbits_decrease_toward_the_fixed_end(x):
    d = Diffeo("x/(1+x)", HALF_LINE, [0.0])
    orbit = [d.iterate(x, n) for n in range(12)]
    assert all(b < a for a, b in zip(orbit, orbit[1:]))
    assert min(orbit) > 0.0


# -- gaps and signs

def test_semigroup_classes(mobius):
    assert semigroup_class(mobius) is SemigroupClass.SMINUS
    up = Diffeo("x + flat0(exp(-1/x^2))", HALF_LINE, [0.0])
    assert semigroup_class(up) is SemigroupClass.SPLUS
    both = Diffeo("x + 0.3*x*(1-x^2)*exp(-x^2)", REAL, [-1.0, 0.0, 1.0])
    assert classify_gap(both, both.gaps()[1]) is SemigroupClass.SMINUS
    assert classify_gap(both, both.gaps()[2]) is SemigroupClass.SPLUS


def test_sign_condition(mobius):
    assert sign_condition(mobius, Diffeo("x/(1+2*x)", HALF_LINE, [0.0])).status is Status.HOLDS
    bad = sign_condition(mobius, Diffeo("x + flat0(exp(-1/x^2))", HALF_LINE, [0.0]))
    assert bad.status is Status.FAILS and "witness" in bad.evidence
    assert sign_condition(mobius, mobius).status is Status.HOLDS


# -- orbit counting

def test_orbit_count_closed_form(mobius):
    # x_n = 1/(1+n) lands in [1/11, 1/2] for n = 1..10.
    oc = orbit_count(mobius, 1 / 11 - 1e-12, 0.5 + 1e-12, 1.0)
    assert oc.exact and oc.count == 10


def test_orbit_count_empty_window(mobius):
    # Orbit of 1 visits 1/2 then 1/3, skipping (0.34, 0.49).
    assert orbit_count(mobius, 0.34, 0.49, 1.0).count == 0


def test_flat_pair_orbit_counts_separate():
    f = Diffeo("x - flat0(exp(-1/x))", HALF_LINE, [0.0])
    g = Diffeo("x - flat0(exp(-1/x^2))", HALF_LINE, [0.0])
    cf = orbit_count(f, 0.025, 0.05, 0.5, budget=20_000)
    cg = orbit_count(g, 0.025, 0.05, 0.5, budget=20_000)
    # Independent bracket: the step length on the window is exp(-1/x) resp. exp(-1/x^2).
    assert cf.log_bounds[0] >= math.log(0.025) + 1 / 0.05 - 1e-9
    assert cg.log_bounds[0] >= math.log(0.025) + 1 / 0.05 ** 2 - 1e-9
    assert cg.log_bounds[0] - cf.log_bounds[1] >= math.log(10)


# -- alignment

def test_alignment_maps(mobius):
    assert align_fixed_sets(mobius, mobius).identity
    shifted = align_fixed_sets(Diffeo("x - (x-0.5)^3", REAL, [0.5]), Diffeo("x - x^3", REAL, [0.0]))
    assert shifted(0.5) == 0.0 and shifted(0.7) == pytest.approx(0.2)
    with pytest.raises(CardinalityMismatch):
        align_fixed_sets(mobius, Diffeo("x - x^2*(1-x)", Interval(0.0, 1.0)))


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=5, unique=True),
       st.lists(st.floats(-10, 10), min_size=2, max_size=5, unique=True))
def test_alignment_is_increasing(src, dst):
    n = min(len(src), len(dst))
    src, dst = sorted(src[:n]), sorted(dst[:n])
    if min(np.diff(src)) < 1e-3 or min(np.diff(dst)) < 1e-3:
        return
    from diffconj.diffeo_model import AlignmentMap
    h = AlignmentMap(src, dst)
    for a, b in zip(src, dst):
        assert h(a) == pytest.approx(b)
    xs = np.linspace(src[0] - 1, src[-1] + 1, 200)
    assert np.all(np.diff([h(float(x)) for x in xs]) > 0)


def test_conjugate_map_has_moved_fixed_points():
    r = 0.9216989942046786  # root of x + x^3/10 = 1
    g = Diffeo(ConjugateMap(ExprMap("x + 0.3*x*(1-x^2)*exp(-x^2)"), ExprMap("x + 0.1*x^3"), REAL), REAL,
               [-r, 0.0, r])
    assert verify(g).ok
