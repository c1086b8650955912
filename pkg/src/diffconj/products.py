"""Infinite products of derivative ratios along paired orbits.

The one-sided product multiplies f'(f^n x) / g'(g^n xi) over n >= 0; the
backward version uses the inverse maps; the two-sided one is their
quotient.  Products are accumulated as sums of logarithms with Neumaier
compensation, since millions of factors can sit within an ulp of 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .diffeo_model import Diffeo, DiffeoError, Gap, InverseBracketFailure
from .expr_core import DEFAULT_JET_ORDER, DomainError, from_log
from .status import ConditionStatus, Status

QUIET_LEVEL = 2.0**-52
QUIET_RUN = 8
DIVERGENCE_LEVEL = 50.0
DEFAULT_BUDGET = 10**7
DEFAULT_TOL = 1e-10
DENSE_CHECKPOINTS = 4096
# Orbit distances below this are rounding noise and carry no rate information.
_ROUNDOFF_DISTANCE = 1e-13


class ProductStatus(str, Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    UNDETERMINED = "Undetermined"

    def __str__(self) -> str:
        return self.value


class NeumaierSum:
    """Running compensated sum."""

    __slots__ = ("total", "compensation")

    def __init__(self) -> None:
        self.total = 0.0
        self.compensation = 0.0

    def add(self, value: float) -> None:
        t = self.total + value
        if abs(self.total) >= abs(value):
            self.compensation += (self.total - t) + value
        else:
            self.compensation += (value - t) + self.total
        self.total = t

    @property
    def value(self) -> float:
        return self.total + self.compensation


def neumaier_sum_columns(terms: np.ndarray) -> np.ndarray:
    """Compensated column sums of a 2-D array (rows are successive terms)."""
    total = np.zeros(terms.shape[1:])
    comp = np.zeros(terms.shape[1:])
    for row in terms:
        t = total + row
        big = np.abs(total) >= np.abs(row)
        comp += np.where(big, (total - t) + row, (row - t) + total)
        total = t
    return total + comp


@dataclass
class ProductResult:
    """Outcome of one infinite product.

    ``tail_bound`` is a heuristic estimate of the remaining |log| mass:
    the observed ratio of term size to orbit distance times the geometric
    tail of the distances.  ``trend`` is a dyadic-checkpoint reading of the
    partial sums ("convergent", "divergent" or "unclear").
    """

    value: float
    log_value: float
    status: ProductStatus
    terms_used: int
    tail_bound: float
    trend: str = "unclear"
    log_partial_sums: Optional[list[tuple[int, float]]] = None
    heuristic_tail: bool = True
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status is ProductStatus.CONVERGED

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "log_value": self.log_value,
            "status": self.status.value,
            "terms_used": self.terms_used,
            "tail_bound": self.tail_bound,
            "trend": self.trend,
            "heuristic_tail": self.heuristic_tail,
            "message": self.message,
        }


def _distance(x: float, end: float) -> float:
    if math.isinf(end):
        return 1.0 / (1.0 + abs(x))
    return abs(x - end)


def _dyadic_trend(checkpoints: list[tuple[int, float]]) -> tuple[str, float]:
    """Read the partial sums at n = 2^k: geometric shrinking of successive
    differences means convergence, steady or growing differences of one
    sign mean divergence."""
    dyadic = [(n, s) for n, s in checkpoints if n >= 16 and (n & (n - 1)) == 0]
    if len(dyadic) < 6:
        return "unclear", math.inf
    diffs = [b[1] - a[1] for a, b in zip(dyadic[:-1], dyadic[1:])][-5:]
    mags = [abs(d) for d in diffs]
    if all(m == 0.0 for m in mags[-3:]):
        return "convergent", 0.0
    ratios = [b / a for a, b in zip(mags[:-1], mags[1:]) if a > 0]
    if len(ratios) >= 3 and max(ratios) <= 0.75:
        r = max(ratios)
        return "convergent", mags[-1] * r / (1.0 - r)
    if len(set(np.sign(diffs))) == 1 and min(ratios, default=0.0) >= 0.9:
        return "divergent", math.inf
    return "unclear", math.inf


def _monotone_tail(checkpoints: list[tuple[int, float]], n_now: int, total: float) -> bool:
    start = 0.75 * n_now
    tail = [s for n, s in checkpoints if n >= start]
    if len(tail) < 3:
        return False
    steps = np.diff(tail)
    if total > 0:
        return bool(np.all(steps >= 0.0))
    return bool(np.all(steps <= 0.0))


def _is_checkpoint(n: int) -> bool:
    return n <= DENSE_CHECKPOINTS or (n & (n - 1)) == 0 or n % 65536 == 0


def orbit_log_product(
    f_step: Callable[[float], float],
    f_slope: Callable[[float], float],
    g_step: Callable[[float], float],
    g_slope: Callable[[float], float],
    x: float,
    xi: float,
    end_f: float,
    end_g: float,
    tol: float = DEFAULT_TOL,
    budget: int = DEFAULT_BUDGET,
    fixed_terms: Optional[int] = None,
    trace: bool = False,
) -> ProductResult:
    """Sum log f_slope(x_n) - log g_slope(xi_n) along x_{n+1} = f_step(x_n).

    With ``fixed_terms`` exactly that many factors are taken and the result
    is reported as Undetermined unless the usual stopping rule also fires.
    """
    acc = NeumaierSum()
    quiet = 0
    c_obs = 0.0
    q_obs = 0.0
    prev_dist = _distance(x, end_f) + _distance(xi, end_g)
    checkpoints: list[tuple[int, float]] = [(0, 0.0)]
    limit = fixed_terms if fixed_terms is not None else budget
    n = 0
    tail = math.inf
    status = ProductStatus.UNDETERMINED
    message = "budget exhausted"
    log = math.log
    while n < limit:
        try:
            df = f_slope(x)
            dg = g_slope(xi)
        except (DomainError, InverseBracketFailure) as exc:
            message = f"orbit left the domain after {n} terms: {exc}"
            break
        if not (df > 0.0 and dg > 0.0 and math.isfinite(df) and math.isfinite(dg)):
            message = f"non-positive or non-finite slope after {n} terms"
            break
        t = log(df) - log(dg) if df != dg else 0.0
        acc.add(t)
        n += 1
        quiet = quiet + 1 if abs(t) < QUIET_LEVEL else 0
        try:
            x_next = f_step(x)
            xi_next = g_step(xi)
        except (DomainError, InverseBracketFailure) as exc:
            message = f"orbit left the domain after {n} terms: {exc}"
            break
        if x_next == x and xi_next == xi and t != 0.0:
            message = f"orbits stalled in floating point after {n} terms"
            # Near a finite end the orbit hits the resolution of doubles;
            # a geometric tail that is already negligible still decides.
            if 0.0 < q_obs < 1.0:
                tail = c_obs * prev_dist * q_obs / (1.0 - q_obs)
                if tail < tol:
                    status = ProductStatus.CONVERGED
                    message += "; geometric tail estimate below tolerance"
            break
        x, xi = x_next, xi_next
        dist = _distance(x, end_f) + _distance(xi, end_g)
        if prev_dist > _ROUNDOFF_DISTANCE:
            c_obs = max(c_obs, abs(t) / prev_dist)
            if dist > _ROUNDOFF_DISTANCE:
                q_obs = max(q_obs * 0.999, dist / prev_dist) if n > 1 else dist / prev_dist
        prev_dist = dist
        if _is_checkpoint(n):
            checkpoints.append((n, acc.value))
        if quiet >= QUIET_RUN:
            tail = c_obs * dist * q_obs / (1.0 - q_obs) if q_obs < 1.0 else math.inf
            if tail < tol or (t == 0.0 and c_obs == 0.0):
                status = ProductStatus.CONVERGED
                message = "terms below machine noise and tail estimate below tolerance"
                if c_obs == 0.0:
                    tail = 0.0
                break
        total = acc.value
        if abs(total) > DIVERGENCE_LEVEL and _monotone_tail(checkpoints, n, total):
            status = ProductStatus.DIVERGED
            message = f"|log partial product| exceeded {DIVERGENCE_LEVEL:g} with monotone growth"
            break
    if checkpoints[-1][0] != n:
        checkpoints.append((n, acc.value))
    trend, dyadic_tail = _dyadic_trend(checkpoints)
    if status is ProductStatus.UNDETERMINED and math.isinf(tail):
        tail = dyadic_tail
    s = acc.value
    value = math.exp(s) if s < 700 else math.inf
    return ProductResult(value, s, status, n, tail, trend, checkpoints if trace else None, True, message)


def extrapolated_log(result: ProductResult) -> float:
    """Aitken estimate of the limit from the last three dyadic partial sums.

    Orbits toward a non-hyperbolic end give tails decaying like a power of
    1/n; the dyadic differences then shrink by a fixed ratio.  Falls back
    to the last partial sum when no such ratio is visible.
    """
    sums = result.log_partial_sums or []
    seq = [v for n, v in sums if n >= 16 and (n & (n - 1)) == 0][-6:]
    if result.converged or len(seq) < 3:
        return result.log_value
    # Iterated Aitken: each pass removes the leading power of the tail.
    while len(seq) >= 3:
        nxt = []
        for s1, s2, s4 in zip(seq, seq[1:], seq[2:]):
            d1, d2 = s2 - s1, s4 - s2
            if d1 == 0.0 or not 0.0 < d2 / d1 < 0.95:
                return seq[-1]
            r = d2 / d1
            nxt.append(s4 + d2 * r / (1.0 - r))
        if len(nxt) >= 2 and abs(nxt[-1] - nxt[-2]) > abs(seq[-1] - seq[-2]):
            # Another pass is making things worse; stop at this level.
            return nxt[-1]
        seq = nxt
    return seq[-1]


def _product(f: Diffeo, g: Diffeo, x: float, xi: float, tol, budget, fixed_terms, trace) -> ProductResult:
    gap_f = f.gap_containing(x)
    gap_g = g.gap_containing(xi)
    if gap_f.sign != gap_g.sign:
        raise DiffeoError("paired orbits must move toward corresponding ends")
    return orbit_log_product(f.forward, f.forward.deriv, g.forward, g.forward.deriv, x, xi,
                             gap_f.attracting_end, gap_g.attracting_end, tol, budget, fixed_terms, trace)


def h1(f: Diffeo, g: Diffeo, x: float, xi: float, tol: float = DEFAULT_TOL, budget: int = DEFAULT_BUDGET,
       fixed_terms: Optional[int] = None, trace: bool = False) -> ProductResult:
    """Product of f'(f^n x) / g'(g^n xi) over forward orbits."""
    return _product(f, g, x, xi, tol, budget, fixed_terms, trace)


def h2(f: Diffeo, g: Diffeo, x: float, xi: float, tol: float = DEFAULT_TOL, budget: int = DEFAULT_BUDGET,
       fixed_terms: Optional[int] = None, trace: bool = False) -> ProductResult:
    """Product of g'(g^-n xi) / f'(f^-n x) over n >= 1.

    Equal to the forward product of the inverse maps, which is how it is
    evaluated.
    """
    return _product(f.inverted(), g.inverted(), x, xi, tol, budget, fixed_terms, trace)


def h_two_sided(f: Diffeo, g: Diffeo, x: float, xi: float, tol: float = DEFAULT_TOL,
                budget: int = DEFAULT_BUDGET, fixed_terms: Optional[int] = None) -> ProductResult:
    """Product over all n in Z, i.e. h1 / h2."""
    forward = h1(f, g, x, xi, tol / 2, budget, fixed_terms)
    backward = h2(f, g, x, xi, tol / 2, budget, fixed_terms)
    return combine_two_sided(forward, backward)


def combine_two_sided(forward: ProductResult, backward: ProductResult) -> ProductResult:
    s = forward.log_value - backward.log_value
    statuses = {forward.status, backward.status}
    if ProductStatus.DIVERGED in statuses:
        status = ProductStatus.DIVERGED
    elif statuses == {ProductStatus.CONVERGED}:
        status = ProductStatus.CONVERGED
    else:
        status = ProductStatus.UNDETERMINED
    trends = {forward.trend, backward.trend}
    trend = "divergent" if "divergent" in trends else ("convergent" if trends == {"convergent"} else "unclear")
    value = math.exp(s) if abs(s) < 700 else (math.inf if s > 0 else 0.0)
    return ProductResult(value, s, status, forward.terms_used + backward.terms_used,
                         forward.tail_bound + backward.tail_bound, trend, None, True,
                         f"forward: {forward.message}; backward: {backward.message}")


# ---------------------------------------------------------------- batched products


@dataclass
class BatchProduct:
    """Truncated log-products for many starting points at once.

    ``log_values[i]`` sums log f'(x_n) - log f'(a_n) for n < ``terms``.
    Sharing one truncation keeps the identities between products exact.
    """

    points: np.ndarray
    log_values: np.ndarray
    terms: int


def orbit_log_sums(d: Diffeo, xs: np.ndarray, terms: int) -> tuple[np.ndarray, np.ndarray]:
    """Compensated sum of log d'(x_n) for n < terms, and the final orbit points."""
    x = np.array(xs, dtype=float)
    total = np.zeros_like(x)
    comp = np.zeros_like(x)
    for _ in range(terms):
        nxt, slope = d.value_and_slope_vec(x)
        lt = np.log(slope)
        t = total + lt
        big = np.abs(total) >= np.abs(lt)
        comp += np.where(big, (total - t) + lt, (lt - t) + total)
        total = t
        x = nxt
    return total + comp, x


def choose_terms(f: Diffeo, probe_points: Sequence[float], reference: float, tol: float,
                 max_terms: int) -> tuple[int, float, float]:
    """Pick a common truncation for self-products F(x) = prod f'(x_n)/f'(a_n).

    Iterates the extreme probe points with the reference until every term
    has dropped below machine noise for a run and the heuristic tail is
    below ``tol``, or until ``max_terms``.  Returns (terms, last |term|, tail).
    """
    pts = np.array(list(probe_points) + [reference], dtype=float)
    gap = f.gap_containing(reference)
    end = gap.attracting_end
    quiet = 0
    c_obs = 0.0
    q_obs = 0.0
    dist_prev = float(np.sum(gap.distance_to(pts, end)))
    last = math.inf
    for n in range(1, max_terms + 1):
        nxt, slope = f.value_and_slope_vec(pts)
        lt = np.log(slope)
        t = lt[:-1] - lt[-1]
        last = float(np.max(np.abs(t)))
        pts = nxt
        dist = float(np.sum(gap.distance_to(pts, end)))
        if dist_prev > _ROUNDOFF_DISTANCE:
            c_obs = max(c_obs, last / dist_prev)
            if dist > _ROUNDOFF_DISTANCE:
                q_obs = max(q_obs * 0.999, dist / dist_prev) if n > 1 else dist / dist_prev
        dist_prev = dist
        quiet = quiet + 1 if last < QUIET_LEVEL else 0
        if quiet >= QUIET_RUN:
            tail = c_obs * dist * q_obs / (1 - q_obs) if q_obs < 1 else math.inf
            if tail < tol or c_obs == 0.0:
                return n, last, 0.0 if c_obs == 0.0 else tail
    tail = c_obs * dist_prev * q_obs / (1 - q_obs) if q_obs < 1 else math.inf
    return max_terms, last, tail


# ---------------------------------------------------------------- flat ends
#
# Near a flat fixed point f is, to all orders in its displacement D, the
# time-one map of the vector field v = D (1 - D'/2 + D'^2/3 + D D''/12 + ...).
# Along such a flow (f^n)'(x) = v(f^n x) / v(x), so the divergent sum of
# log f' along an orbit has the finite renormalisation -log|v| at its
# starting point.  Products of a flat pair then need no long orbits.


def log_flow_speed(d: Diffeo, x: float) -> float:
    """log|v(x)| for the vector field whose time-one map matches d near x."""
    sign, log_disp = d.signed_log_displacement(x)
    if sign == 0.0:
        return -math.inf
    slope = d.deriv(x) - 1.0
    corr = slope * (slope / 3.0 - 0.5)
    if abs(slope) > 1e-15:
        second = 2.0 * float(d.jet(x, 2).coeffs[2])
        corr += from_log(sign, log_disp) * second / 12.0
    return log_disp + math.log1p(corr)


def log_flow_speed_vec(d: Diffeo, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    return np.array([log_flow_speed(d, float(x)) for x in xs.ravel()]).reshape(xs.shape)


def is_flat_end(d: Diffeo, end: float, base: float) -> bool:
    """True when log|f(x) - x| / log|x - end| keeps growing toward ``end``.

    A zero of finite order p gives a ratio settling at p; flat zeros such as
    exp(-1/x) make it grow without bound.
    """
    if not math.isfinite(end):
        return False
    side = 1.0 if base > end else -1.0
    scale = min(abs(base - end), 1.0)
    ratios = []
    for k in (3, 5):
        dist = scale * 10.0**-k
        try:
            sign, log_disp = d.signed_log_displacement(end + side * dist)
        except (DiffeoError, DomainError, ArithmeticError):
            return False
        if sign == 0.0:
            return True
        ratios.append(log_disp / math.log(dist))
    return ratios[1] > 2.0 * DEFAULT_JET_ORDER and ratios[1] > 1.5 * ratios[0]


def self_product_batch(d: Diffeo, xs: np.ndarray, reference: float, terms: int) -> BatchProduct:
    """One-sided self-product F_ref(x) for an array of x, shared truncation."""
    xs = np.asarray(xs, dtype=float)
    lv, _ = orbit_log_sums(d, xs, terms)
    ref, _ = orbit_log_sums(d, np.array([reference]), terms)
    return BatchProduct(xs, lv - ref[0], terms)


# ---------------------------------------------------------------- Condition (P)


def condition_p(f: Diffeo, g: Diffeo, gap_f: Gap, a: float, alpha: float, tol: float = 1e-8,
                budget: int = 10**6) -> ConditionStatus:
    """Convergence of the gap's product at one base pair.

    One-sided product for a half-open gap (toward the fixed end), two-sided
    for a compact gap.  A single pair suffices: convergence at one pair is
    equivalent to convergence at all.
    """
    if gap_f.kind == "open":
        return ConditionStatus("P", Status.HOLDS, {"reason": "no fixed end in the gap"})
    results = {}
    if gap_f.kind == "compact":
        results["forward"] = h1(f, g, a, alpha, tol, budget)
        results["backward"] = h2(f, g, a, alpha, tol, budget)
    elif gap_f.attracting_end_fixed:
        results["forward"] = h1(f, g, a, alpha, tol, budget)
    else:
        results["backward"] = h2(f, g, a, alpha, tol, budget)
    evidence = {k: r.to_dict() for k, r in results.items()}
    evidence.update({"a": a, "alpha": alpha})
    if any(r.status is ProductStatus.DIVERGED for r in results.values()):
        bad = next(k for k, r in results.items() if r.status is ProductStatus.DIVERGED)
        evidence["witness"] = {"product": bad, "log_partial": results[bad].log_value,
                               "terms": results[bad].terms_used}
        return ConditionStatus("P", Status.FAILS, evidence)
    if all(r.converged or r.trend == "convergent" for r in results.values()):
        return ConditionStatus("P", Status.HOLDS, evidence)
    return ConditionStatus("P", Status.UNDETERMINED, evidence)


# ---------------------------------------------------------------- shape functions


@dataclass
class ShapeGrid:
    """Two-sided self-product F_a sampled on the fundamental domain [f(a), a].

    ``ratio`` is f'(d)/f'(c): F_a(f(x)) = F_a(x) * ratio extends the grid to
    the whole gap.
    """

    gap: Gap
    base: float
    x: np.ndarray
    values: np.ndarray
    ratio: float
    terms: tuple[int, int]
    converged: bool

    def extend(self, d: Diffeo, x: float, max_steps: int = 10**6) -> float:
        """F_a at any point of the gap via the functional equation."""
        lo, hi = sorted((self.x[0], self.x[-1]))
        k = 0
        y = x
        while not lo <= y <= hi:
            inside_toward_d = (y < lo) == (self.gap.attracting_end < self.base)
            y = d.inverse(y) if inside_toward_d else d(y)
            k += -1 if inside_toward_d else 1
            if abs(k) > max_steps:
                raise DiffeoError("too many steps to reach the fundamental domain")
        # y = f^k(x), so F(x) = F(y) * ratio^(-k)
        return float(np.interp(y, self.x, self.values)) * self.ratio ** (-k)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "F"])
            for a, b in zip(self.x, self.values):
                w.writerow([repr(float(a)), repr(float(b))])


def _two_sided_self_logs(d: Diffeo, xs: np.ndarray, reference: float, tol: float, max_terms: int
                         ) -> tuple[np.ndarray, int, int, bool]:
    inv = d.inverted()
    lo, hi = float(np.min(xs)), float(np.max(xs))
    n_fwd, _, tail_f = choose_terms(d, [lo, hi], reference, tol, max_terms)
    n_bwd, _, tail_b = choose_terms(inv, [lo, hi], reference, tol, max_terms)
    pts = np.append(xs, reference)
    fwd, _ = orbit_log_sums(d, pts, n_fwd)
    # The backward factor is the forward self-product of the inverse map.
    bwd, _ = orbit_log_sums(inv, pts, n_bwd)
    logs = (fwd[:-1] - fwd[-1]) - (bwd[:-1] - bwd[-1])
    return logs, n_fwd, n_bwd, tail_f < tol and tail_b < tol


def shape_grid(d: Diffeo, gap: Gap, a: float, grid: int = 201, tol: float = 1e-12,
               max_terms: int = 200_000) -> ShapeGrid:
    """Sample F_a = H(f, f; x, a) on [f(a), a]."""
    if gap.kind != "compact":
        raise DiffeoError("shape functions need a compact gap")
    fa = d(a)
    xs = np.linspace(min(a, fa), max(a, fa), grid)
    logs, n_fwd, n_bwd, converged = _two_sided_self_logs(d, xs, a, tol, max_terms)
    ratio = d.deriv(gap.attracting_end) / d.deriv(gap.repelling_end)
    return ShapeGrid(gap, a, xs, np.exp(logs), ratio, (n_fwd, n_bwd), converged)


def two_sided_batch(f: Diffeo, g: Diffeo, xs: np.ndarray, xis: np.ndarray, terms: tuple[int, int]) -> np.ndarray:
    """log H(f, g; x, xi) for arrays with a shared truncation."""
    fwd_f, _ = orbit_log_sums(f, xs, terms[0])
    fwd_g, _ = orbit_log_sums(g, xis, terms[0])
    bwd_f, _ = orbit_log_sums(f.inverted(), xs, terms[1])
    bwd_g, _ = orbit_log_sums(g.inverted(), xis, terms[1])
    return (fwd_f - fwd_g) - (bwd_f - bwd_g)


def shape_check(f: Diffeo, g: Diffeo, gap: Gap, h: Callable[[float], float], grid: int = 41,
                tol: float = 1e-6, terms: tuple[int, int] | None = None) -> ConditionStatus:
    """Whether H(x, h(x)) is constant along a fundamental domain of a compact gap."""
    if gap.kind != "compact":
        return ConditionStatus("Shape", Status.UNDETERMINED, {"reason": "shape test needs a compact gap"})
    a = gap.sample_point()
    fa = f(a)
    xs = np.linspace(min(a, fa), max(a, fa), grid)
    hx = np.array([h(float(x)) for x in xs])
    if terms is None:
        n1, _, _ = choose_terms(f, [xs[0], xs[-1]], a, 1e-14, 100_000)
        n2, _, _ = choose_terms(f.inverted(), [xs[0], xs[-1]], a, 1e-14, 100_000)
        terms = (n1, n2)
    logs = two_sided_batch(f, g, xs, hx, terms)
    values = np.exp(logs)
    spread = float(np.max(values) - np.min(values))
    mean = float(np.mean(values))
    evidence = {"constant": mean, "spread": spread, "terms": list(terms)}
    if spread <= tol * max(1.0, mean):
        return ConditionStatus("Shape", Status.HOLDS, evidence)
    i, j = int(np.argmin(values)), int(np.argmax(values))
    evidence["witness"] = {"x1": float(xs[i]), "H1": float(values[i]), "x2": float(xs[j]), "H2": float(values[j])}
    return ConditionStatus("Shape", Status.FAILS, evidence)


# ---------------------------------------------------------------- pattern comparison


class Pattern(str, Enum):
    COMPATIBLE = "Compatible"
    INCOMPATIBLE = "Incompatible"

    def __str__(self) -> str:
        return self.value


def critical_pattern(values: np.ndarray, rel_tol: float = 1e-9) -> tuple[str, ...]:
    """Signs of successive monotone runs, ignoring wiggles below rel_tol.

    A constant function gives ('0',); a strictly increasing one ('+',).
    """
    values = np.asarray(values, dtype=float)
    scale = max(float(np.max(np.abs(values))), 1e-300)
    if float(np.max(values) - np.min(values)) <= rel_tol * scale:
        return ("0",)
    runs: list[str] = []
    anchor = values[0]
    for v in values[1:]:
        if abs(v - anchor) <= rel_tol * scale:
            continue
        s = "+" if v > anchor else "-"
        if not runs or runs[-1] != s:
            runs.append(s)
        anchor = v
    return tuple(runs)


def cyclic_pattern(values: np.ndarray, rel_tol: float = 1e-9) -> tuple[str, ...]:
    """Run pattern of a function on a fundamental domain, read cyclically.

    F_a(f(x)) = F_a(x) * ratio, so after dividing out the ratio trend the
    endpoint values agree and the pattern is a cyclic word.
    """
    runs = critical_pattern(values, rel_tol)
    if len(runs) > 2 and runs[0] == runs[-1]:
        runs = runs[1:]
    return runs


def _same_cyclic(p: tuple[str, ...], q: tuple[str, ...]) -> bool:
    if len(p) != len(q):
        return False
    if not p:
        return True
    return any(p == q[k:] + q[:k] for k in range(len(q)))


def pattern_compare(fa: ShapeGrid, ga: ShapeGrid, rel_tol: float = 1e-9) -> Pattern:
    """Compare the monotonicity patterns of two shape functions.

    Both are first detrended by the functional-equation factor so that a
    pure exponential trend (the flow case) reads as monotone.
    """
    pf = critical_pattern(fa.values, rel_tol)
    pg = critical_pattern(ga.values, rel_tol)
    if (pf == ("0",)) != (pg == ("0",)):
        return Pattern.INCOMPATIBLE
    if len(pf) == 1 and len(pg) == 1:
        return Pattern.COMPATIBLE
    nf = sum(1 for k in range(1, len(pf)) if pf[k] != pf[k - 1])
    ng = sum(1 for k in range(1, len(pg)) if pg[k] != pg[k - 1])
    if nf != ng:
        return Pattern.INCOMPATIBLE
    return Pattern.COMPATIBLE if _same_cyclic(cyclic_pattern(fa.values, rel_tol), cyclic_pattern(ga.values, rel_tol)) or pf == pg else Pattern.INCOMPATIBLE
