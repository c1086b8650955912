"""Decide whether two interval diffeomorphisms with finite fixed sets are conjugate.

``classify`` runs the checks in a fixed order and keeps every outcome in a
report.  A verdict of NotConjugate needs a failed check with a witness,
Conjugate needs every check to hold, and anything else is Undetermined.
Orientation-reversing pairs go through their squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Optional

import numpy as np
from scipy.optimize import brentq

from . import series_core
from .conjugacy_solver import (
    ConjugacyMap,
    SolverError,
    SolverOptions,
    phi_minus,
    phi_plus,
    conjugacy_toward_fixed_end,
    probe_smoothness,
    sergeraert_criterion,
    verify_residual,
)
from .diffeo_model import (
    ComposedMap,
    Diffeo,
    DiffeoError,
    Gap,
    align_fixed_sets,
    orbit_count,
    sign_condition,
    verification_grid,
)
from .expr_core import DEFAULT_JET_ORDER, DomainError
from .linearization import (
    NonConvergent,
    linearizer_values,
    matching_base_point,
    modulus_equal,
    modulus_symmetry,
    robbin_modulus,
)
from .products import condition_p, critical_pattern, is_flat_end, shape_check, shape_grid
from .status import ConditionStatus, Status, combine


class DegreeMismatch(DiffeoError):
    """The maps have different orientation behaviour."""


class Verdict(str, Enum):
    CONJUGATE = "Conjugate"
    NOT_CONJUGATE = "NotConjugate"
    UNDETERMINED = "Undetermined"

    def __str__(self) -> str:
        return self.value


@dataclass
class ClassifyOptions:
    # sup |g(phi(x)) - phi(f(x))| allowed for a witness
    tol: float = 1e-7
    budget: int = 10**6
    grid: int = 41
    probe_order: int = 4
    multiplier_tol: float = 1e-8
    coefficient_tol: float = 1e-6
    modulus_tol: float = 1e-8
    agreement_tol: float = 1e-7
    jet_order: int = DEFAULT_JET_ORDER
    orbit_budget: int = 200_000
    sergeraert_kappa: float = 100.0
    # Optional (a, alpha) per gap, in order; None entries use gap midpoints.
    base_pairs: Optional[list] = None
    solver: SolverOptions = field(default_factory=SolverOptions)


# ---------------------------------------------------------------- jets at fixed points


@dataclass
class JetInfo:
    point: float
    multiplier: float
    kind: str  # "hyperbolic", "takens" or "flat"
    series: Optional[series_core.FormalSeries]
    p: Optional[int] = None
    sign: Optional[int] = None
    alpha: Optional[float] = None
    note: str = ""


def _centered_series(d: Diffeo, x: float, order: int, tol: float) -> series_core.FormalSeries:
    coeffs = d.jet(x, order).coeffs[1:]
    return series_core.series_from_floats(coeffs, tol=tol)


def jet_info(d: Diffeo, x: float, order: int = DEFAULT_JET_ORDER, multiplier_tol: float = 1e-8) -> JetInfo:
    """Taylor class of d at the fixed point x.

    When the expression has no Taylor expansion at x (a fractional power
    inside a conjugation, say) flatness is read from the decay of the
    displacement instead; anything else is reported as "unknown".
    """
    try:
        coeffs = d.jet(x, order).coeffs
    except DomainError as exc:
        sides = [gap for gap in d.gaps() if x in (gap.lower, gap.upper)]
        if sides and all(is_flat_end(d, x, gap.sample_point()) for gap in sides):
            return JetInfo(x, d.deriv(x), "flat", None, note=f"flat by displacement decay ({exc})")
        return JetInfo(x, math.nan, "unknown", None, note=str(exc))
    m = float(coeffs[1])
    if abs(m - 1.0) > multiplier_tol:
        return JetInfo(x, m, "hyperbolic", None)
    # Snap the tangent-to-identity jet so that zero coefficients are exact.
    values = [Fraction(1)] + [series_core.series_from_floats([c], tol=1e-9)[1] for c in coeffs[2:]]
    series = series_core.FormalSeries(values)
    p = next((k - 1 for k in range(2, order + 1) if series[k] != 0), None)
    if p is None:
        return JetInfo(x, m, "flat", series, note=f"identity jet through order {order}")
    info = JetInfo(x, m, "takens", series, p=p, sign=1 if series[p + 1] > 0 else -1)
    try:
        nf, _ = series_core.normal_form(series)
        info.alpha = float(nf.alpha)
    except series_core.IndeterminateAtOrderN as exc:
        info.note = str(exc)
    return info


def condition_t(f: Diffeo, g: Diffeo, x: float, xi: float, options: ClassifyOptions
                ) -> tuple[ConditionStatus, JetInfo, JetInfo]:
    """Formal conjugacy of the Taylor series of f at x and g at xi."""
    jf = jet_info(f, x, options.jet_order, options.multiplier_tol)
    jg = jet_info(g, xi, options.jet_order, options.multiplier_tol)
    ev: dict[str, Any] = {"x": x, "xi": xi, "multiplier_f": jf.multiplier, "multiplier_g": jg.multiplier,
                          "class_f": jf.kind, "class_g": jg.kind}
    if "unknown" in (jf.kind, jg.kind):
        ev["note"] = jf.note or jg.note
        return ConditionStatus("T", Status.UNDETERMINED, ev), jf, jg
    if jf.kind != jg.kind or (jf.kind == "hyperbolic" and
                              abs(jf.multiplier - jg.multiplier) > options.multiplier_tol * max(1.0, abs(jf.multiplier))):
        ev["witness"] = {"reason": "multipliers differ" if jf.kind == jg.kind else "Taylor classes differ",
                         "multiplier_f": jf.multiplier, "multiplier_g": jg.multiplier}
        return ConditionStatus("T", Status.FAILS, ev), jf, jg
    if jf.kind == "hyperbolic":
        return ConditionStatus("T", Status.HOLDS, ev), jf, jg
    if jf.kind == "flat":
        ev["note"] = jf.note
        return ConditionStatus("T", Status.HOLDS, ev), jf, jg
    ev.update({"p_f": jf.p, "p_g": jg.p, "sign_f": jf.sign, "sign_g": jg.sign,
               "alpha_f": jf.alpha, "alpha_g": jg.alpha})
    if jf.p != jg.p or jf.sign != jg.sign:
        ev["witness"] = {"reason": "leading terms differ", "p_f": jf.p, "p_g": jg.p,
                         "sign_f": jf.sign, "sign_g": jg.sign}
        return ConditionStatus("T", Status.FAILS, ev), jf, jg
    if jf.alpha is None or jg.alpha is None:
        ev["note"] = jf.note or jg.note
        return ConditionStatus("T", Status.UNDETERMINED, ev), jf, jg
    if abs(jf.alpha - jg.alpha) > options.coefficient_tol * max(1.0, abs(jf.alpha)):
        ev["witness"] = {"reason": "resonant invariants differ", "alpha_f": jf.alpha, "alpha_g": jg.alpha}
        return ConditionStatus("T", Status.FAILS, ev), jf, jg
    return ConditionStatus("T", Status.HOLDS, ev), jf, jg


# ---------------------------------------------------------------- coset descriptors


@dataclass
class CosetDescriptor:
    """Derivatives at a fixed point reachable by conjugacies on one adjacent gap.

    For a hyperbolic point the set is base * generator^Z, or all positive
    reals when ``connected``.  ``connected`` is None when it could not be
    decided.  At Takens and flat points the derivative is pinned and the
    freedom lives in higher jets, which are tracked only through
    ``connected``.
    """

    point: float
    side: str
    kind: str
    base: Optional[float]
    generator: float
    connected: Optional[bool]
    root_index: int = 1
    reason: str = ""

    def to_dict(self) -> dict:
        return {"point": self.point, "side": self.side, "kind": self.kind, "base": self.base,
                "generator": self.generator, "connected": self.connected, "root_index": self.root_index,
                "reason": self.reason}


def _lattice_meet(c1: float, s1: float, c2: float, s2: float, tol: float
                  ) -> tuple[Optional[bool], Optional[tuple[float, float]]]:
    """Intersect {c1 + s1 Z} with {c2 + s2 Z}; a zero step means a single point.

    Returns (nonempty, (point, step)), or (None, None) when the steps look
    incommensurable.
    """
    s1, s2 = abs(s1), abs(s2)
    scale = max(1.0, abs(c1), abs(c2))
    if s1 == 0.0 and s2 == 0.0:
        ok = abs(c2 - c1) <= tol * scale
        return ok, ((c1, 0.0) if ok else None)
    if s1 == 0.0 or s2 == 0.0:
        point, start, step = (c1, c2, s2) if s1 == 0.0 else (c2, c1, s1)
        n = (point - start) / step
        ok = abs(n - round(n)) * step <= tol * scale
        return ok, ((point, 0.0) if ok else None)
    ratio = Fraction(s1 / s2).limit_denominator(64)
    if abs(float(ratio) - s1 / s2) > 1e-9 * (s1 / s2):
        return None, None
    p, q = ratio.numerator, ratio.denominator
    unit = s2 / q
    k = (c2 - c1) / unit
    if abs(k - round(k)) * unit > tol * scale:
        return False, None
    # c1 + n s1 = c2 + m s2 with s1 = p u, s2 = q u  <=>  n p - m q = k.
    _, x, _ = _ext_gcd(p, q)
    n = x * int(round(k))
    return True, (c1 + n * s1, s1 * q)


def _ext_gcd(a: int, b: int) -> tuple[int, int, int]:
    if b == 0:
        return a, 1, 0
    g, x, y = _ext_gcd(b, a % b)
    return g, y, x - (a // b) * y


def match_jets(p: float, left: CosetDescriptor, right: CosetDescriptor, tol: float = 1e-8) -> ConditionStatus:
    """Do the conjugacy cosets from the two sides of p share an element?"""
    ev: dict[str, Any] = {"x": p, "left": left.to_dict(), "right": right.to_dict()}
    if left.connected is True or right.connected is True:
        ev["reason"] = "a side realises every admissible jet"
        return ConditionStatus("M1", Status.HOLDS, ev)
    if left.connected is None or right.connected is None:
        ev["reason"] = "connectedness of a centraliser is unknown"
        return ConditionStatus("M1", Status.UNDETERMINED, ev)
    if left.kind == "takens" or right.kind == "takens":
        ev["reason"] = "discrete cosets of resonant coefficients are not computed"
        return ConditionStatus("M1", Status.UNDETERMINED, ev)
    if left.base is None or right.base is None:
        ev["reason"] = "no witness derivative on one side"
        return ConditionStatus("M1", Status.UNDETERMINED, ev)
    ok, meet = _lattice_meet(math.log(left.base), math.log(left.generator),
                             math.log(right.base), math.log(right.generator), tol)
    if ok is None:
        ev["reason"] = "generators are incommensurable"
        return ConditionStatus("M1", Status.UNDETERMINED, ev)
    if ok:
        ev["common_log_derivative"], ev["common_log_step"] = meet
        if left.kind == "flat":
            ev["reason"] = "equal derivatives force equal jets at a flat point"
        return ConditionStatus("M1", Status.HOLDS, ev)
    ev["witness"] = {"log_base_left": math.log(left.base), "log_base_right": math.log(right.base),
                     "log_generator_left": math.log(left.generator),
                     "log_generator_right": math.log(right.generator)}
    return ConditionStatus("M1", Status.FAILS, ev)


# ---------------------------------------------------------------- gap analysis


@dataclass
class GapResult:
    gap_f: Gap
    gap_g: Gap
    conditions: list[ConditionStatus]
    witness: Any = None
    lam: Optional[float] = None
    mu: Optional[float] = None
    residual: Optional[float] = None
    smoothness: list = field(default_factory=list)
    # derivative of the witness and the family description at each fixed end
    end_data: dict = field(default_factory=dict)
    a: Optional[float] = None
    alpha: Optional[float] = None

    @property
    def status(self) -> Status:
        return combine([c.status for c in self.conditions])

    def to_dict(self) -> dict:
        return {"interval": [self.gap_f.lower, self.gap_f.upper], "interval_g": [self.gap_g.lower, self.gap_g.upper],
                "class": f"{self.gap_f.kind} {self.gap_f.semigroup}", "lambda": self.lam, "mu": self.mu,
                "residual": self.residual, "smoothness": self.smoothness, "a": self.a, "alpha": self.alpha}


def _fixed_ends(gap: Gap) -> list[float]:
    return [e for e, fixed in ((gap.lower, gap.lower_fixed), (gap.upper, gap.upper_fixed)) if fixed]


def _flat_gap(f: Diffeo, g: Diffeo, gf: Gap, gg: Gap, a: float, alpha: float, flat_ends: list[float],
              options: ClassifyOptions) -> GapResult:
    """Flat ends: smoothness of a conjugacy cannot be certified numerically."""
    end = flat_ends[0]
    dist = abs(a - end)
    side = 1.0 if a > end else -1.0
    lo, hi = sorted((end + side * dist / 40.0, end + side * dist / 20.0))
    end_g = gg.lower if gg.lower_fixed and abs(gg.lower - end) <= abs(gg.upper - end) else gg.upper
    dist_g = abs(alpha - end_g)
    side_g = 1.0 if alpha > end_g else -1.0
    lo_g, hi_g = sorted((end_g + side_g * dist_g / 40.0, end_g + side_g * dist_g / 20.0))
    ev: dict[str, Any] = {"reason": "flat end: smoothness at the end cannot be certified", "flat_ends": flat_ends}
    try:
        cf = orbit_count(f, lo, hi, end + side * dist / 2.0, options.orbit_budget)
        cg = orbit_count(g, lo_g, hi_g, end_g + side_g * dist_g / 2.0, options.orbit_budget)
        ev["orbit_count"] = {
            "window_f": [lo, hi], "window_g": [lo_g, hi_g],
            "log_bounds_f": list(cf.log_bounds), "log_bounds_g": list(cg.log_bounds),
            "separated": bool(cg.log_bounds[0] - cf.log_bounds[1] >= math.log(10.0)
                              or cf.log_bounds[0] - cg.log_bounds[1] >= math.log(10.0)),
        }
    except DiffeoError as exc:
        ev["orbit_count"] = {"error": str(exc)}
    conds = [ConditionStatus("P", Status.UNDETERMINED, {"reason": "products along flat orbits are not resolvable"}),
             ConditionStatus("E", Status.UNDETERMINED, ev)]
    result = GapResult(gf, gg, conds, a=a, alpha=alpha)
    for e in _fixed_ends(gf):
        connected = None
        try:
            sc = sergeraert_criterion(f, 0.5 * abs(a - e), options.sergeraert_kappa, endpoint=e, samples=20_000)
            connected = True if sc.satisfied else None
        except DiffeoError:
            pass
        result.end_data[e] = {"kind": "flat", "log_derivative": None, "ell": 0.0,
                              "param": "R" if connected else None}
    return result


def _linearized_partner(f: Diffeo, g: Diffeo, gg: Gap, a: float, end_f: float, end_g: float
                        ) -> Optional[float]:
    """The point of g's gap with the same linearizing coordinate as a.

    Pairing through the linearizers gives the conjugacy with unit slope at
    the hyperbolic end; an arbitrary pair can sit many fundamental domains
    out of phase.  None when the linearizers are unavailable.
    """
    def coordinate(d: Diffeo, end: float, y: float) -> float:
        try:
            return float(linearizer_values(d, end, [y])[0][0])
        except (NonConvergent, DiffeoError, DomainError, ValueError):
            return math.nan

    target = coordinate(f, end_f, a)
    if not math.isfinite(target):
        return None
    y0 = gg.sample_point()
    # Walk outward from the end.  Very near it rounding spoils the limit and
    # far out the orbit may never reach the series disc.
    prev_y, prev_v = None, None
    for k in range(-16, 4):
        y = end_g + (y0 - end_g) * 2.0 ** k
        if not (math.isfinite(y) and gg.contains(y)):
            break
        v = coordinate(g, end_g, y) - target
        if not math.isfinite(v):
            if prev_v is None:
                continue
            break
        if v == 0.0:
            return y
        if prev_v is not None and prev_v * v < 0:
            try:
                return brentq(lambda t: coordinate(g, end_g, t) - target, prev_y, y, xtol=1e-15, rtol=1e-15)
            except ValueError:
                return None
        prev_y, prev_v = y, v
    return None


def _half_open_gap(f: Diffeo, g: Diffeo, gf: Gap, gg: Gap, a: float, alpha: float, kinds: dict,
                   options: ClassifyOptions) -> GapResult:
    end = _fixed_ends(gf)[0]
    # Near a parabolic end the product converges like a power of n, so a
    # full budget buys little beyond the dyadic trend; keep it short.
    budget = min(options.budget, 10**5) if kinds[end] == "takens" else options.budget
    conds = [condition_p(f, g, gf, a, alpha, budget=budget)]
    result = GapResult(gf, gg, conds, a=a, alpha=alpha)
    if conds[0].status is Status.FAILS:
        return result
    try:
        phi = conjugacy_toward_fixed_end(f, g, a, alpha, options.solver)
    except (SolverError, DiffeoError, DomainError) as exc:
        conds.append(ConditionStatus("E", Status.UNDETERMINED, {"reason": f"solver failed: {exc}"}))
        return result
    result.witness = phi
    result.lam = phi.lam
    result.residual = verify_residual(phi)
    e_status = _smoothness_status(phi, options, result, kinds[end])
    conds.append(e_status)
    if not (result.residual <= options.tol):
        conds.append(ConditionStatus("E", Status.UNDETERMINED, {"reason": "witness residual above tolerance",
                                                                "residual": result.residual}))
    kind = kinds[end]
    # Conjugacies on a half-open gap are phi composed with the flow of f.
    ell = math.log(f.deriv(end)) if kind == "hyperbolic" else 0.0
    result.end_data[end] = {"kind": kind, "log_derivative": math.log(phi.lam), "ell": ell, "param": "R"}
    return result


def _smoothness_status(phi: ConjugacyMap, options: ClassifyOptions, result: GapResult,
                       kind: str = "hyperbolic") -> ConditionStatus:
    """Condition (E) at a non-flat end, with the probe as a consistency check.

    When the Taylor series match at a non-flat end every C^1 conjugacy is
    smooth there, so the probe can only contradict that through numerical
    trouble; a blowup then makes the outcome Undetermined.  Orbits near a
    parabolic end creep, so there the probe runs on a small budget and is
    skipped if it cannot get close enough.
    """
    reason = "matching Taylor series at a non-flat end"
    budgets = {"reach_budget": 2000, "step_budget": 20_000} if kind == "takens" else {}
    try:
        diag = probe_smoothness(phi, orders=options.probe_order, **budgets)
    except (SolverError, DiffeoError, DomainError) as exc:
        if kind == "takens":
            return ConditionStatus("E", Status.HOLDS, {"reason": reason, "probe": f"skipped: {exc}"})
        return ConditionStatus("E", Status.UNDETERMINED, {"reason": f"probe failed: {exc}"})
    summary = diag.to_dict()
    result.smoothness.append(summary)
    if diag.blowup is not None:
        return ConditionStatus("E", Status.UNDETERMINED, {"reason": "probe reports a blowup at a non-flat end",
                                                          "probe": summary})
    return ConditionStatus("E", Status.HOLDS, {"reason": reason, "probe": summary})


def _compact_gap(f: Diffeo, g: Diffeo, gf: Gap, gg: Gap, a: float, alpha: float, kinds: dict,
                 options: ClassifyOptions) -> GapResult:
    c, d = gf.attracting_end, gf.repelling_end
    hyperbolic = kinds[c] == "hyperbolic" and kinds[d] == "hyperbolic"
    conds: list[ConditionStatus] = []
    result = GapResult(gf, gg, conds, a=a, alpha=alpha)
    k = 1
    if hyperbolic:
        try:
            mf, mg = robbin_modulus(f, gf), robbin_modulus(g, gg)
        except (NonConvergent, DiffeoError, DomainError) as exc:
            conds.append(ConditionStatus("M", Status.UNDETERMINED, {"reason": f"modulus failed: {exc}"}))
            return result
        cmp = modulus_equal(mf, mg, options.modulus_tol)
        ev = {"distance": cmp.distance, "shift": cmp.shift, "offset": cmp.offset,
              "spread_f": float(np.ptp(mf.periodic_part)), "spread_g": float(np.ptp(mg.periodic_part))}
        if not cmp.equal:
            ev["witness"] = {"distance": cmp.distance, "reason": cmp.reason or "periodic parts differ"}
            conds.append(ConditionStatus("M", Status.FAILS, ev))
            return result
        conds.append(ConditionStatus("M", Status.HOLDS, ev))
        k = modulus_symmetry(mf, options.modulus_tol)
        try:
            alpha = matching_base_point(f, g, mf, mg, cmp, a)
        except (ValueError, NonConvergent, DiffeoError) as exc:
            conds.append(ConditionStatus("E", Status.UNDETERMINED, {"reason": f"no base point: {exc}"}))
            return result
        result.alpha = alpha
    conds.append(condition_p(f, g, gf, a, alpha, budget=options.budget))
    if conds[-1].status is Status.FAILS:
        return result
    try:
        plus = phi_plus(f, g, a, alpha, options.solver)
        minus = phi_minus(f, g, a, alpha, options.solver)
    except (SolverError, DiffeoError, DomainError) as exc:
        conds.append(ConditionStatus("E", Status.UNDETERMINED, {"reason": f"solver failed: {exc}"}))
        return result
    result.witness = plus
    result.lam, result.mu = plus.lam, minus.lam
    result.residual = verify_residual(plus)
    fa = f(a)
    xs = np.linspace(min(a, fa), max(a, fa), options.grid)
    agreement = float(np.max(np.abs(plus.evaluate(xs) - minus.evaluate(xs))))
    conds.append(shape_check(f, g, gf, plus, grid=options.grid, tol=1e-6))
    e_plus = _smoothness_status(plus, options, result)
    e_minus = _smoothness_status(minus, options, result)
    ev = {"agreement": agreement, "ends": [e_plus.to_dict(), e_minus.to_dict()]}
    if not hyperbolic:
        ev["reason"] = "no complete invariant for a compact gap with a non-hyperbolic end"
        conds.append(ConditionStatus("E", Status.UNDETERMINED, ev))
    elif agreement > options.agreement_tol or result.residual > options.tol:
        ev["reason"] = "one-sided solutions do not agree"
        ev["residual"] = result.residual
        conds.append(ConditionStatus("E", Status.UNDETERMINED, ev))
    else:
        conds.append(ConditionStatus("E", combine([e_plus.status, e_minus.status]), ev))
    # Conjugacies on the gap are phi o f^t: t real when f is flowable there,
    # t in Z/k when the modulus has a k-fold symmetry.
    param = ("R" if k == 0 else "Z") if hyperbolic else None
    for end, lam_end in ((c, plus.lam), (d, minus.lam)):
        ell = math.log(f.deriv(end)) / max(k, 1) if hyperbolic else 0.0
        result.end_data[end] = {"kind": kinds[end], "log_derivative": math.log(lam_end), "ell": ell,
                                "param": param, "root_index": k}
    return result


def _open_gap(gf: Gap, gg: Gap) -> GapResult:
    ev = {"reason": "no fixed end: every pair of such maps with the same sign is conjugate"}
    return GapResult(gf, gg, [ConditionStatus("E", Status.HOLDS, ev)])


# ---------------------------------------------------------------- interior matching


_ALL = "all"
_UNKNOWN = "unknown"


def _family_descriptor(point: float, data: Optional[dict]) -> CosetDescriptor:
    """Coset at ``point`` realised by the gap to its right."""
    if data is None or data["param"] is None:
        return CosetDescriptor(point, "right", data["kind"] if data else "unknown", None, 1.0, None,
                               reason="family of conjugacies on the gap is unknown")
    base = math.exp(data["log_derivative"]) if data["log_derivative"] is not None else None
    if data["param"] == "R":
        return CosetDescriptor(point, "right", data["kind"], base, 1.0, True)
    return CosetDescriptor(point, "right", data["kind"], base, math.exp(abs(data["ell"])), False,
                           data.get("root_index", 1))


def _state_descriptor(point: float, kind: str, state) -> CosetDescriptor:
    """Coset at ``point`` realised by conjugacies glued over everything to its left."""
    if state == _ALL:
        return CosetDescriptor(point, "left", kind, None, 1.0, True)
    if state == _UNKNOWN:
        return CosetDescriptor(point, "left", kind, None, 1.0, None, reason="earlier matching undecided")
    c, step = state
    return CosetDescriptor(point, "left", kind, math.exp(c), math.exp(step), False)


def _push(taus, data: Optional[dict]):
    """Derivatives at a gap end reached by the parameters ``taus``."""
    if taus == _UNKNOWN or data is None or data["param"] is None:
        return _UNKNOWN
    if data["kind"] != "hyperbolic":
        return _ALL if taus == _ALL and data["param"] == "R" else _UNKNOWN
    if taus == _ALL:
        return _ALL if data["param"] == "R" else (data["log_derivative"], abs(data["ell"]))
    t0, dt = taus
    return (data["log_derivative"] + t0 * data["ell"], abs(dt * data["ell"]))


def _chain(results: list[GapResult], options: ClassifyOptions) -> list[ConditionStatus]:
    """Left-to-right matching at interior fixed points.

    Each gap carries a family of conjugacies phi o f^t.  The fold keeps the
    set of parameters t on the current gap that glue with everything to its
    left, and the derivatives those reach at its right end.
    """
    statuses = []
    taus = _ALL
    for left, right in zip(results[:-1], results[1:]):
        p = left.gap_f.upper
        state = _push(taus, left.end_data.get(p))
        data = right.end_data.get(p)
        kind = data["kind"] if data else "unknown"
        st = match_jets(p, _state_descriptor(p, kind, state), _family_descriptor(p, data), options.multiplier_tol)
        statuses.append(st)
        if st.status is not Status.HOLDS:
            taus = _UNKNOWN
        elif state == _ALL:
            taus = _ALL
        elif kind != "hyperbolic" or data["log_derivative"] is None:
            taus = _UNKNOWN
        elif data["param"] == "R":
            c, step = state
            taus = ((c - data["log_derivative"]) / data["ell"], step / abs(data["ell"]))
        else:
            c, step = st.evidence["common_log_derivative"], st.evidence["common_log_step"]
            taus = ((c - data["log_derivative"]) / data["ell"], step / abs(data["ell"]))
    return statuses


# ---------------------------------------------------------------- reports


@dataclass
class ConjugacyReport:
    verdict: Verdict
    conditions: list[ConditionStatus]
    gaps: list[GapResult]
    fixed_points: list[dict]
    notes: list[str] = field(default_factory=list)

    @property
    def failing(self) -> list[ConditionStatus]:
        return [c for c in self.conditions if c.fails]

    @property
    def inconclusive(self) -> list[ConditionStatus]:
        return [c for c in self.conditions if c.status is Status.UNDETERMINED]

    @property
    def witnesses(self) -> list:
        return [g.witness for g in self.gaps]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "conditions": [c.to_dict() for c in self.conditions],
            "gaps": [g.to_dict() for g in self.gaps],
            "fixed_points": self.fixed_points,
            "notes": self.notes,
        }


@dataclass
class ConjugacyVerdict:
    kind: Verdict
    failing: Optional[ConditionStatus] = None
    inconclusive: list[str] = field(default_factory=list)
    witnesses: list = field(default_factory=list)

    def __str__(self) -> str:
        return self.kind.value

    def __eq__(self, other) -> bool:
        if isinstance(other, (Verdict, str)):
            return self.kind == other
        if isinstance(other, ConjugacyVerdict):
            return self.kind == other.kind
        return NotImplemented

    __hash__ = None


def _assemble(conditions: list[ConditionStatus], gaps: list[GapResult], fixed_points: list[dict],
              notes: list[str]) -> tuple[ConjugacyVerdict, ConjugacyReport]:
    overall = combine([c.status for c in conditions])
    if overall is Status.FAILS:
        kind = Verdict.NOT_CONJUGATE
    elif overall is Status.HOLDS:
        kind = Verdict.CONJUGATE
    else:
        kind = Verdict.UNDETERMINED
    report = ConjugacyReport(kind, conditions, gaps, fixed_points, notes)
    failing = report.failing[0] if report.failing else None
    verdict = ConjugacyVerdict(kind, failing, [c.name for c in report.inconclusive],
                               [g.witness for g in gaps] if kind is Verdict.CONJUGATE else [])
    return verdict, report


def _identity_report(f: Diffeo) -> tuple[ConjugacyVerdict, ConjugacyReport]:
    conds = [ConditionStatus("Sign", Status.HOLDS, {"reason": "identical maps"})]
    gaps = []
    if f.degree == 1:
        for gap in f.gaps():
            res = GapResult(gap, gap, [ConditionStatus("E", Status.HOLDS, {"witness_map": "identity"})],
                            witness="identity", lam=1.0 if _fixed_ends(gap) else None, residual=0.0)
            gaps.append(res)
    fps = [{"x": p, "multiplier_f": f.deriv(p), "multiplier_g": f.deriv(p), "jet_class": "identical",
            "match": "Holds"} for p in f.fixed_points]
    conds.append(ConditionStatus("F", Status.HOLDS, {"reason": "finite fixed set"}))
    return _assemble(conds, gaps, fps, ["identical maps: the identity conjugates them"])


def classify(f: Diffeo, g: Diffeo, options: Optional[ClassifyOptions] = None
             ) -> tuple[ConjugacyVerdict, ConjugacyReport]:
    """Decide conjugacy of f and g and return the verdict with its evidence."""
    options = options or ClassifyOptions()
    if f.degree != g.degree:
        raise DegreeMismatch(f"degrees differ: {f.degree} and {g.degree}")
    if f.key() == g.key():
        return _identity_report(f)
    if f.degree == -1:
        return reduce_orientation_reversing(f, g, options)
    alignment = align_fixed_sets(f, g)
    conditions: list[ConditionStatus] = [sign_condition(f, g)]
    fixed_points = []
    kinds: dict[float, str] = {}
    for x, xi in alignment.pairs():
        st, jf, jg = condition_t(f, g, x, xi, options)
        conditions.append(st)
        kinds[x] = jf.kind
        fixed_points.append({"x": x, "xi": xi, "multiplier_f": jf.multiplier, "multiplier_g": jg.multiplier,
                             "jet_class": jf.kind if jf.kind == jg.kind else f"{jf.kind}/{jg.kind}",
                             "match": None})
    notes: list[str] = []
    if any(c.fails for c in conditions):
        notes.append("cheap checks failed; gap analysis skipped")
        return _assemble(conditions, [], fixed_points, notes)
    gaps_f, gaps_g = f.gaps(), g.gaps()
    results: list[GapResult] = []
    for gf, gg in zip(gaps_f, gaps_g):
        ends = _fixed_ends(gf)
        if not ends:
            results.append(_open_gap(gf, gg))
            continue
        a, alpha = gf.sample_point(), gg.sample_point()
        if gf.kind != "compact" and kinds[ends[0]] == "hyperbolic":
            alpha = _linearized_partner(f, g, gg, a, ends[0], _fixed_ends(gg)[0]) or alpha
        if options.base_pairs and len(options.base_pairs) > len(results) and options.base_pairs[len(results)]:
            a, alpha = (float(v) for v in options.base_pairs[len(results)])
        flat = [e for e in ends if kinds[e] == "flat"]
        if flat:
            results.append(_flat_gap(f, g, gf, gg, a, alpha, flat, options))
        elif gf.kind == "compact":
            results.append(_compact_gap(f, g, gf, gg, a, alpha, kinds, options))
        else:
            results.append(_half_open_gap(f, g, gf, gg, a, alpha, kinds, options))
        if any(c.fails for c in results[-1].conditions):
            break
    for res in results:
        for c in res.conditions:
            c.evidence.setdefault("gap", res.gap_f.label())
            conditions.append(c)
    if len(results) == len(gaps_f) and not any(c.fails for c in conditions):
        matches = _chain(results, options)
        for st in matches:
            for fp in fixed_points:
                if fp["x"] == st.evidence["x"]:
                    fp["match"] = st.status.value
        conditions.extend(matches)
    conditions.append(ConditionStatus("F", Status.HOLDS, {"reason": "finite fixed set: no accumulation points"}))
    return _assemble(conditions, results, fixed_points, notes)


# ---------------------------------------------------------------- flowability


@dataclass
class FlowabilityReport:
    status: str  # "Consistent", "NotFlowable" or "Inconsistent"
    pattern: tuple
    multipliers: tuple[float, float]
    witness: dict = field(default_factory=dict)

    def condition(self) -> ConditionStatus:
        status = {"Consistent": Status.HOLDS, "NotFlowable": Status.FAILS}.get(self.status, Status.UNDETERMINED)
        ev = {"pattern": list(self.pattern), "multipliers": list(self.multipliers)}
        if self.witness:
            ev["witness"] = self.witness
        return ConditionStatus("Flow", status, ev)


def flowability_check(f: Diffeo, gap: Gap, grid: int = 201, rel_tol: float = 1e-9,
                      multiplier_tol: float = 1e-8) -> FlowabilityReport:
    """Necessary conditions for f to be a time-one map on a compact gap.

    For a flow the self-product F_a is strictly monotone or constant, and
    it is constant exactly when both end multipliers are 1.
    """
    a = gap.sample_point()
    sg = shape_grid(f, gap, a, grid)
    pattern = critical_pattern(sg.values, rel_tol)
    mc, md = f.deriv(gap.attracting_end), f.deriv(gap.repelling_end)
    unit = abs(mc - 1.0) <= multiplier_tol and abs(md - 1.0) <= multiplier_tol
    if len(pattern) > 1:
        turns = []
        for i in range(1, len(sg.values) - 1):
            if (sg.values[i] - sg.values[i - 1]) * (sg.values[i + 1] - sg.values[i]) < 0:
                turns.append(float(sg.x[i]))
        return FlowabilityReport("NotFlowable", pattern, (mc, md),
                                 {"reason": "F_a is neither monotone nor constant", "critical_points": turns})
    constant = pattern == ("0",)
    if constant != unit:
        return FlowabilityReport("Inconsistent", pattern, (mc, md),
                                 {"reason": "constant F_a must go with unit multipliers at both ends"})
    if (mc - 1.0) * (md - 1.0) > 0:
        return FlowabilityReport("Inconsistent", pattern, (mc, md),
                                 {"reason": "1 is not between the end multipliers"})
    return FlowabilityReport("Consistent", pattern, (mc, md))


# ---------------------------------------------------------------- orientation reversing


def _square(d: Diffeo, fixed: list[float]) -> Diffeo:
    return Diffeo(ComposedMap([d.forward, d.forward]), d.domain, fixed, 1,
                  backward=ComposedMap([d.backward, d.backward]), name=f"square({d.name})")


def _square_fixed_set(d: Diffeo, grid_size: int = 4001) -> tuple[bool, list[float], float]:
    """(is the identity, fixed points of d o d, largest displacement seen).

    Displacements below a few ulps of x are treated as unresolved: they
    neither count as sign changes nor prevent the identity verdict.
    """
    p = d.fixed_points[0]
    grid = verification_grid(d.domain, [p], grid_size)
    disp = d.vec(d.vec(grid)) - grid
    noise = 64.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(grid))
    worst = float(np.max(np.abs(disp)))
    resolved = np.abs(disp) > noise
    if not resolved.any():
        return True, [p], worst
    # Away from p, sign changes between resolved samples mark 2-cycles.
    keep = resolved & (np.abs(grid - p) > 1e-4 * max(1.0, abs(p)))
    xs, ds = grid[keep], disp[keep]
    roots = [p]
    for i in np.nonzero(np.sign(ds[1:]) != np.sign(ds[:-1]))[0]:
        lo, hi = float(xs[i]), float(xs[i + 1])
        if lo < p < hi:
            continue
        roots.append(brentq(lambda x: d(d(x)) - x, lo, hi, xtol=1e-15))
    return False, sorted(set(roots)), worst


def reduce_orientation_reversing(f: Diffeo, g: Diffeo, options: Optional[ClassifyOptions] = None
                                 ) -> tuple[ConjugacyVerdict, ConjugacyReport]:
    """Classify reversing maps through their squares and the jets at the fixed point."""
    options = options or ClassifyOptions()
    if f.degree != -1 or g.degree != -1:
        raise DegreeMismatch("the reduction needs two orientation-reversing maps")
    if len(f.fixed_points) != 1 or len(g.fixed_points) != 1:
        raise DiffeoError("an orientation-reversing map has exactly one fixed point")
    p, q = f.fixed_points[0], g.fixed_points[0]
    mf, mg = f.deriv(p), g.deriv(q)
    conditions = []
    fps = [{"x": p, "xi": q, "multiplier_f": mf, "multiplier_g": mg, "jet_class": "reversing", "match": None}]
    t_ev = {"x": p, "xi": q, "multiplier_f": mf, "multiplier_g": mg}
    ident_f, fix_f, _ = _square_fixed_set(f)
    ident_g, fix_g, _ = _square_fixed_set(g)
    if ident_f != ident_g:
        bad = g if ident_f else f
        x = bad.fixed_points[0] + 0.5
        if not bad.domain.contains(x):
            x = bad.domain.lower + 0.75 * (bad.domain.upper - bad.domain.lower)
        ev = {"reason": "one square is the identity and the other is not",
              "witness": {"x": x, "square_minus_x": bad(bad(x)) - x, "map": "g" if ident_f else "f"}}
        conditions.append(ConditionStatus("Sign", Status.FAILS, ev))
        return _assemble(conditions, [], fps, ["squares stage"])
    if ident_f:
        conditions.append(ConditionStatus("T", Status.HOLDS, {**t_ev, "case": 2,
                                                              "reason": "both maps are involutions"}))
        note = ("case 2: both squares are the identity; h = (x - f(x))/2 turns each map into -x, "
                "which conjugates them")
        return _assemble(conditions, [], fps, [note])
    if abs(mf - mg) > options.multiplier_tol * max(1.0, abs(mf)):
        t_ev["witness"] = {"reason": "multipliers differ", "multiplier_f": mf, "multiplier_g": mg}
        conditions.append(ConditionStatus("T", Status.FAILS, t_ev))
        return _assemble(conditions, [], fps, ["reversing maps: multipliers at the fixed point differ"])
    if len(fix_f) != len(fix_g):
        ev = {"witness": {"reason": "squares have different numbers of fixed points",
                          "fixed_f": fix_f, "fixed_g": fix_g}}
        conditions.append(ConditionStatus("Sign", Status.FAILS, ev))
        return _assemble(conditions, [], fps, ["squares stage"])
    f2, g2 = _square(f, fix_f), _square(g, fix_g)
    v2, r2 = classify(f2, g2, options)
    notes = [f"squares classified: {v2.kind.value}"]
    conditions.extend(r2.conditions)
    jet_f = _centered_series(f, p, options.jet_order, 1e-9)
    involutive = series_core.is_involutive_jet(jet_f)
    if v2.kind is not Verdict.CONJUGATE:
        return _assemble(conditions, r2.gaps, fps + r2.fixed_points, notes)
    if not involutive:
        notes.append("case 1: the jet of f is not an involution, so a conjugacy of the squares suffices")
        conditions.append(ConditionStatus("T", Status.HOLDS, {**t_ev, "case": 1}))
        return _assemble(conditions, r2.gaps, fps + r2.fixed_points, notes)
    # Case 3: the jets at p must agree after conjugating by the squares' witness.
    jet_g = _centered_series(g, q, options.jet_order, 1e-9)
    same_squares = f2.key() == g2.key()
    if same_squares:
        ok = all(abs(float(jet_f[k] - jet_g[k])) <= options.coefficient_tol for k in range(1, jet_f.order + 1))
        status = Status.HOLDS if ok else Status.FAILS
        ev = {**t_ev, "case": 3}
        if not ok:
            ev["witness"] = {"reason": "involutive jets differ with equal squares"}
        conditions.append(ConditionStatus("T", status, ev))
    else:
        conditions.append(ConditionStatus("T", Status.UNDETERMINED, {
            **t_ev, "case": 3, "reason": "the jet of the squares' conjugacy is not available"}))
    notes.append("case 3: involutive jet with the fixed point isolated among fixed points of the square")
    return _assemble(conditions, r2.gaps, fps + r2.fixed_points, notes)
