import math

import pytest
from hypothesis import given, settings, strategies as st

from diffconj.classifier import (ClassifyOptions, CosetDescriptor, DegreeMismatch, Verdict, classify,
                                 flowability_check, match_jets, reduce_orientation_reversing)
from diffconj.diffeo_model import ConjugateMap, Diffeo, ExprMap, Interval
from diffconj.status import Status

REAL = Interval(-math.inf, math.inf)
HALF_LINE = Interval(0.0, math.inf)
UNIT = Interval(0.0, 1.0)
CHAIN = "x + 0.3*x*(1-x^2)*exp(-x^2)"
CHAIN_ROOT = 0.9216989942046786  # x + x^3/10 = 1


def conjugated(f: Diffeo, by: str, fixed=None) -> Diffeo:
    """by^-1 o f o by as a Diffeo on the same interval."""
    return Diffeo(ConjugateMap(f.forward, ExprMap(by), f.domain), f.domain,
                  fixed if fixed is not None else list(f.fixed_points))


@pytest.fixture(scope="module")
def mobius():
    return Diffeo("x/(2-x)", UNIT)


# -- simple verdicts

def test_fixed_point_free_translations_are_conjugate():
    v, _ = classify(Diffeo("x+1", REAL), Diffeo("x+2+sin(x)/2", REAL))
    assert v == Verdict.CONJUGATE


def test_opposite_signs_fail():
    c = Interval(0.0, math.pi)
    v, rep = classify(Diffeo("x-sin(x)/10", c), Diffeo("x+sin(x)/10", c))
    assert v == Verdict.NOT_CONJUGATE and v.failing.name == "Sign"
    assert "witness" in v.failing.evidence
    assert rep.verdict is Verdict.NOT_CONJUGATE


def test_multiplier_mismatch():
    v, _ = classify(Diffeo("x/2", HALF_LINE, [0.0]), Diffeo("x/3", HALF_LINE, [0.0]))
    assert v == Verdict.NOT_CONJUGATE and v.failing.name == "T"


def test_identical_maps(mobius):
    v, rep = classify(mobius, mobius)
    assert v == Verdict.CONJUGATE and rep.gaps[0].witness == "identity"


def test_degree_mismatch(mobius):
    with pytest.raises(DegreeMismatch):
        classify(Diffeo("-x", REAL, [0.0]), Diffeo("x/2", REAL, [0.0]))


def test_half_open_mobius_pair():
    opts = ClassifyOptions(base_pairs=[[1.0, 0.5]])
    v, rep = classify(Diffeo("x/(1+x)", HALF_LINE, [0.0]), Diffeo("x/(1+2*x)", HALF_LINE, [0.0]), opts)
    assert v == Verdict.CONJUGATE
    assert rep.gaps[0].lam == pytest.approx(0.5, abs=1e-8)
    assert rep.gaps[0].residual < 1e-10


# -- compact gaps

def test_compact_conjugate(mobius):
    g = conjugated(mobius, "x*(1+x)/2")
    v, rep = classify(mobius, g)
    assert v == Verdict.CONJUGATE
    assert all(c.status is Status.HOLDS for c in rep.conditions)


def test_compact_modulus_mismatch(mobius):
    other = Diffeo("x/(2-x) + 0.05*sin(6.283185307179586*x)*x^2*(1-x)^2", UNIT)
    v, _ = classify(mobius, other)
    assert v == Verdict.NOT_CONJUGATE and v.failing.name == "M"


# -- several gaps

@pytest.fixture(scope="module")
def chain_pair():
    f = Diffeo(CHAIN, REAL, [-1.0, 0.0, 1.0])
    g = conjugated(f, "x + 0.1*x^3", [-CHAIN_ROOT, 0.0, CHAIN_ROOT])
    return f, g


def test_chain_is_conjugate_both_ways(chain_pair):
    f, g = chain_pair
    forward, rep = classify(f, g)
    backward, _ = classify(g, f)
    assert forward == Verdict.CONJUGATE and backward == Verdict.CONJUGATE
    assert len(rep.gaps) == 4


def test_chain_with_other_multipliers(chain_pair):
    f, _ = chain_pair
    h = Diffeo("x + 0.25*x*(1-x^2)*exp(-x^2)", REAL, [-1.0, 0.0, 1.0])
    v, _ = classify(f, h)
    assert v == Verdict.NOT_CONJUGATE and v.failing.name == "T"


# -- matching across fixed points

def test_match_jets_on_lattices():
    left = CosetDescriptor(0.0, "left", "hyperbolic", 3.0, 2.0, False)
    right = CosetDescriptor(0.0, "right", "hyperbolic", 12.0, 2.0, False)
    assert match_jets(0.0, left, right).status is Status.HOLDS
    off = CosetDescriptor(0.0, "right", "hyperbolic", 5.0, 2.0, False)
    assert match_jets(0.0, left, off).status is Status.FAILS


def test_match_jets_at_flat_point():
    left = CosetDescriptor(0.0, "left", "flat", 2.0, 1.0, False)
    right = CosetDescriptor(0.0, "right", "flat", 1.0, 1.0, False)
    assert match_jets(0.0, left, right).status is Status.FAILS
    assert match_jets(0.0, left, CosetDescriptor(0.0, "right", "flat", 2.0, 1.0, False)).status is Status.HOLDS


def test_match_jets_respects_unknowns():
    left = CosetDescriptor(0.0, "left", "hyperbolic", 3.0, 2.0, None)
    right = CosetDescriptor(0.0, "right", "hyperbolic", 5.0, 2.0, False)
    assert match_jets(0.0, left, right).status is Status.UNDETERMINED
    assert match_jets(0.0, CosetDescriptor(0.0, "left", "hyperbolic", 3.0, 2.0, True), right).status is Status.HOLDS


# -- flowability

def test_flow_map_is_consistent(mobius):
    assert flowability_check(mobius, mobius.gaps()[0]).status == "Consistent"


def test_wiggled_map_is_not_flowable():
    d = Diffeo("x/(2-x) + 0.05*sin(40*x)*x^2*(1-x)^2", UNIT)
    r = flowability_check(d, d.gaps()[0])
    assert r.status == "NotFlowable" and len(r.witness["critical_points"]) == 2
    assert r.condition().status is Status.FAILS


# -- orientation reversing

def test_reversing_identical_squares():
    v, _ = reduce_orientation_reversing(Diffeo("-x", REAL, [0.0]), Diffeo("-x", REAL, [0.0]))
    assert v == Verdict.CONJUGATE


@pytest.mark.parametrize("other", ["-2*x", "-x-x^3"])
def test_reversing_square_mismatch(other):
    v, rep = classify(Diffeo("-x", REAL, [0.0]), Diffeo(other, REAL, [0.0]))
    assert v == Verdict.NOT_CONJUGATE and v.failing.name == "Sign"
    assert "squares stage" in rep.notes


@pytest.mark.slow
def test_reversing_band_example():
    f = Diffeo("-x + x^3*exp(-x^2)", REAL, [0.0])
    g = conjugated(f, "2*x")
    v, _ = classify(f, g)
    assert v == Verdict.CONJUGATE


# -- soundness

@given(st.floats(-0.6, 0.6))
@settings(max_examples=6)
def test_conjugates_are_never_rejected(c):
    f = Diffeo("x/(2-x)", UNIT)
    g = conjugated(f, f"x + ({c!r})*x*(1-x)")
    v, _ = classify(f, g)
    assert v != Verdict.NOT_CONJUGATE
    back, _ = classify(g, f)
    assert back == v


@given(st.sampled_from(["x/(1+3*x)", "x/(1+x)^2", "x - x^2/(1+x)", "x/(1+x+x^2)"]))
@settings(max_examples=4)
def test_verdicts_are_symmetric_on_half_line(expr):
    f = Diffeo("x/(1+x)", HALF_LINE, [0.0])
    g = Diffeo(expr, HALF_LINE, [0.0])
    v1, _ = classify(f, g)
    v2, _ = classify(g, f)
    assert v1 == v2
