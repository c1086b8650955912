"""Diffeomorphisms of real intervals.

A ``Diffeo`` couples a smooth map with its interval, its declared fixed
points and a numerical inverse.  The maps themselves are ``SmoothMap``
objects: a compiled DSL expression, the inverse of another map, or a
composition such as s^{-1} o f o s.  Every map can produce values,
first derivatives (scalar and vectorized), Taylor jets and the
displacement ``f(x) - x`` evaluated without cancellation where the
structure allows it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import expr_core
from .expr_core import DomainError, Expr, Jet
from .status import ConditionStatus, Status

INVERSE_RTOL = 1e-14
_EPS = np.finfo(float).eps
_TINY = 1e-300


class DiffeoError(ValueError):
    pass


class MonotonicityViolation(DiffeoError):
    pass


class UndeclaredFixedPointSuspected(DiffeoError):
    def __init__(self, bracket: tuple[float, float]):
        super().__init__(f"f(x) - x changes sign in [{bracket[0]!r}, {bracket[1]!r}] away from declared fixed points")
        self.bracket = bracket


class FixedPointViolation(DiffeoError):
    pass


class InverseBracketFailure(DiffeoError):
    pass


class CardinalityMismatch(DiffeoError):
    def __init__(self, count_f: int, count_g: int):
        super().__init__(f"fixed sets have {count_f} and {count_g} points")
        self.counts = (count_f, count_g)


class IterationBudgetExceeded(DiffeoError):
    pass


# ---------------------------------------------------------------- intervals


def _parse_bound(value) -> float:
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "+inf", "infinity"):
            return math.inf
        if text in ("-inf", "-infinity"):
            return -math.inf
        return float(text)
    return float(value)


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    lower_closed: bool = True
    upper_closed: bool = True

    def __post_init__(self):
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        if not self.lower < self.upper:
            raise DiffeoError(f"empty interval: lower {self.lower} >= upper {self.upper}")
        if math.isinf(self.lower) and self.lower_closed:
            object.__setattr__(self, "lower_closed", False)
        if math.isinf(self.upper) and self.upper_closed:
            object.__setattr__(self, "upper_closed", False)

    @classmethod
    def from_spec(cls, bounds: Sequence, closed: Sequence[bool] | None = None) -> "Interval":
        lo, hi = (_parse_bound(b) for b in bounds)
        if closed is None:
            closed = (not math.isinf(lo), not math.isinf(hi))
        return cls(lo, hi, bool(closed[0]), bool(closed[1]))

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    def contains(self, x: float) -> bool:
        if x < self.lower or x > self.upper:
            return False
        if x == self.lower and not self.lower_closed:
            return False
        if x == self.upper and not self.upper_closed:
            return False
        return True

    def closed_endpoints(self) -> list[float]:
        ends = []
        if self.lower_closed:
            ends.append(self.lower)
        if self.upper_closed:
            ends.append(self.upper)
        return ends

    def __str__(self) -> str:
        left = "[" if self.lower_closed else "("
        right = "]" if self.upper_closed else ")"
        return f"{left}{_fmt(self.lower)}, {_fmt(self.upper)}{right}"

    def to_list(self) -> list:
        return [_json_bound(self.lower), _json_bound(self.upper)]


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _json_bound(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


REAL_LINE = Interval(-math.inf, math.inf, False, False)


# ---------------------------------------------------------------- smooth maps


class SmoothMap:
    """Interface for maps that expose values, derivatives and jets."""

    description: str = "map"

    def __call__(self, x: float) -> float:
        raise NotImplementedError

    def vec(self, xs: np.ndarray, strict: bool = True) -> np.ndarray:
        return np.array([self(float(x)) for x in np.ravel(xs)]).reshape(np.shape(xs))

    def deriv(self, x: float) -> float:
        raise NotImplementedError

    def deriv_vec(self, xs: np.ndarray, strict: bool = True) -> np.ndarray:
        return np.array([self.deriv(float(x)) for x in np.ravel(xs)]).reshape(np.shape(xs))

    def jet(self, x: float, K: int = expr_core.DEFAULT_JET_ORDER) -> Jet:
        raise NotImplementedError

    def value_and_slope_vec(self, xs, strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
        return self.vec(xs, strict), self.deriv_vec(xs, strict)

    def displacement(self, x: float) -> float:
        return self(x) - x

    def displacement_vec(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return self.vec(xs) - xs

    def signed_log_displacement(self, x: float) -> tuple[float, float]:
        """(sign, log|f(x) - x|), usable where the displacement underflows."""
        return expr_core.signed_log(self.displacement(x))

    def key(self) -> str:
        return self.description


class ExprMap(SmoothMap):
    """A DSL expression with compiled value, derivative and displacement."""

    def __init__(self, expr: Union[Expr, str]):
        self.expr = expr_core.parse(expr) if isinstance(expr, str) else expr
        self.description = expr_core.to_source(self.expr)
        self.derivative_expr = expr_core.differentiate(self.expr)
        self.displacement_source = expr_core.displacement_expr(self.expr)
        self._f = expr_core.compile_scalar(self.expr)
        self._df = expr_core.compile_scalar(self.derivative_expr)
        self._disp = expr_core.compile_scalar(self.displacement_source)
        self._fv = expr_core.compile_vector(self.expr)
        self._dfv = expr_core.compile_vector(self.derivative_expr)
        self._dispv = expr_core.compile_vector(self.displacement_source)

    def __call__(self, x: float) -> float:
        return self._f(x)

    def vec(self, xs, strict: bool = True) -> np.ndarray:
        if strict:
            return self._fv(xs)
        return _lenient(self._fv, xs)

    def deriv(self, x: float) -> float:
        return self._df(x)

    def deriv_vec(self, xs, strict: bool = True) -> np.ndarray:
        if strict:
            return self._dfv(xs)
        return _lenient(self._dfv, xs)

    def jet(self, x: float, K: int = expr_core.DEFAULT_JET_ORDER) -> Jet:
        return expr_core.eval_jet(self.expr, x, K)

    def displacement(self, x: float) -> float:
        return self._disp(x)

    def displacement_vec(self, xs) -> np.ndarray:
        return self._dispv(xs)

    def signed_log_displacement(self, x: float) -> tuple[float, float]:
        return expr_core.log_evaluate(self.displacement_source, x)


def _lenient(fn, xs) -> np.ndarray:
    return fn(xs, strict=False)


class InverseMap(SmoothMap):
    """Numerical inverse of a strictly monotone map on an interval.

    Safeguarded Newton iteration inside a bracket that starts as the whole
    interval and shrinks with every evaluation; Newton steps that leave the
    bracket are replaced by bisection or by doubling toward an infinite end.
    """

    def __init__(self, base: SmoothMap, domain: Interval, increasing: bool = True):
        self.base = base
        self.domain = domain
        self.sign = 1.0 if increasing else -1.0
        self.description = f"inverse({base.description})"

    def key(self) -> str:
        return f"inverse({self.base.key()})"

    def _guess(self, y: float) -> float:
        lo, hi = self.domain.lower, self.domain.upper
        x = y
        if self.sign > 0:
            try:
                x = 2.0 * y - self.base(y) if self.domain.contains(y) else y
            except DomainError:
                x = y
        return _clip_open(x, lo, hi)

    def __call__(self, y: float) -> float:
        y = float(y)
        lo, hi = self.domain.lower, self.domain.upper
        a, b = lo, hi
        x = self._guess(y)
        last_good = None
        for _ in range(400):
            try:
                gx = self.sign * (self.base(x) - y)
                dx = self.sign * self.base.deriv(x)
            except DomainError:
                if last_good is None:
                    x = _clip_open(0.5 * (x + (a if math.isfinite(a) else x - 1.0)), lo, hi)
                else:
                    x = 0.5 * (x + last_good)
                continue
            if not math.isfinite(gx):
                raise InverseBracketFailure(f"non-finite value while inverting at y={y!r}")
            last_good = x
            if gx == 0.0:
                return x
            if gx < 0.0:
                a = x
            else:
                b = x
            xn = x - gx / dx if dx > 0.0 and math.isfinite(dx) else math.nan
            if not (a < xn < b):
                if math.isfinite(a) and math.isfinite(b):
                    xn = 0.5 * (a + b)
                elif gx < 0.0:
                    xn = x + max(1.0, abs(x))
                else:
                    xn = x - max(1.0, abs(x))
            if abs(xn) > 1e300:
                break
            if abs(xn - x) <= 2.0 * _EPS * max(abs(x), _TINY) or (b - a) <= 2.0 * _EPS * max(abs(a), abs(b), _TINY) < math.inf:
                return xn if self.domain.contains(xn) else x
            x = xn
        raise InverseBracketFailure(f"no preimage of {y!r} in {self.domain} under {self.base.description}")

    def vec(self, ys, strict: bool = True) -> np.ndarray:
        ys = np.asarray(ys, dtype=float)
        flat = ys.ravel()
        lo, hi = self.domain.lower, self.domain.upper
        if self.sign > 0:
            with np.errstate(all="ignore"):
                guess = 2.0 * flat - self.base.vec(flat, strict=False)
            guess = np.where(np.isfinite(guess), guess, flat)
        else:
            guess = flat.copy()
        x = np.clip(guess, lo, hi)
        a = np.full_like(flat, lo)
        b = np.full_like(flat, hi)
        done = np.zeros(len(flat), dtype=bool)
        result = np.full(len(flat), np.nan)
        for _ in range(200):
            act = np.nonzero(~done)[0]
            if len(act) == 0:
                break
            xa = x[act]
            with np.errstate(all="ignore"):
                gx = self.sign * (self.base.vec(xa, strict=False) - flat[act])
                dx = self.sign * self.base.deriv_vec(xa, strict=False)
            bad = ~np.isfinite(gx)
            zero = gx == 0.0
            lower = (gx < 0.0) & ~bad
            upper = (gx > 0.0) & ~bad
            a[act[lower]] = xa[lower]
            b[act[upper]] = xa[upper]
            with np.errstate(all="ignore"):
                xn = xa - gx / dx
            aa, bb = a[act], b[act]
            outside = ~((aa < xn) & (xn < bb)) | ~np.isfinite(xn) | (dx <= 0.0)
            both = np.isfinite(aa) & np.isfinite(bb)
            step = np.maximum(1.0, np.abs(xa))
            fallback = np.where(both, 0.5 * (aa + bb), np.where(gx < 0.0, xa + step, xa - step))
            # Points where the map could not be evaluated move halfway back into the bracket.
            back = np.where(np.isfinite(aa), np.where(np.isfinite(bb), 0.5 * (aa + bb), 0.5 * (aa + xa)), 0.5 * (xa + bb))
            fallback = np.where(bad, back, fallback)
            xn = np.where(outside | bad, fallback, xn)
            conv = zero | (
                ~bad
                & (
                    (np.abs(xn - xa) <= 2.0 * _EPS * np.maximum(np.abs(xa), _TINY))
                    | (np.isfinite(bb - aa) & ((bb - aa) <= 2.0 * _EPS * np.maximum(np.maximum(np.abs(aa), np.abs(bb)), _TINY)))
                )
            )
            result[act[zero]] = xa[zero]
            fin = conv & ~zero
            result[act[fin]] = xn[fin]
            done[act[conv]] = True
            runaway = np.abs(xn) > 1e300
            done[act[runaway]] = True
            x[act] = xn
        # Stragglers go through the scalar solver, which raises on failure.
        for idx in np.nonzero(~done | np.isnan(result))[0]:
            if strict:
                result[idx] = self(float(flat[idx]))
            else:
                try:
                    result[idx] = self(float(flat[idx]))
                except (InverseBracketFailure, DomainError):
                    result[idx] = np.nan
        return result.reshape(ys.shape)

    def deriv(self, y: float) -> float:
        return 1.0 / self.base.deriv(self(y))

    def deriv_vec(self, ys, strict: bool = True) -> np.ndarray:
        return self.value_and_slope_vec(ys, strict)[1]

    def value_and_slope_vec(self, ys, strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
        xs = self.vec(ys, strict)
        with np.errstate(all="ignore"):
            return xs, 1.0 / self.base.deriv_vec(xs, strict)

    def jet(self, y: float, K: int = expr_core.DEFAULT_JET_ORDER) -> Jet:
        return self.base.jet(self(y), K).revert()

    def displacement(self, y: float) -> float:
        x = self(y)
        return -self.base.displacement(x)

    def displacement_vec(self, ys) -> np.ndarray:
        return -self.base.displacement_vec(self.vec(ys))

    def signed_log_displacement(self, y: float) -> tuple[float, float]:
        sign, logabs = self.base.signed_log_displacement(self(y))
        return -sign, logabs


def _clip_open(x: float, lo: float, hi: float) -> float:
    if x <= lo:
        x = lo if math.isfinite(lo) else x
    if x >= hi:
        x = hi if math.isfinite(hi) else x
    if math.isfinite(lo) and math.isfinite(hi):
        x = min(max(x, lo), hi)
    return x


class ComposedMap(SmoothMap):
    """Maps applied in order: ``ComposedMap([m1, m2])(x) == m2(m1(x))``."""

    def __init__(self, maps: Sequence[SmoothMap]):
        if not maps:
            raise DiffeoError("empty composition")
        self.maps = list(maps)
        self.description = " then ".join(m.description for m in self.maps)

    def key(self) -> str:
        return "compose(" + ",".join(m.key() for m in self.maps) + ")"

    def __call__(self, x: float) -> float:
        for m in self.maps:
            x = m(x)
        return x

    def vec(self, xs, strict: bool = True) -> np.ndarray:
        for m in self.maps:
            xs = m.vec(xs, strict)
        return xs

    def deriv(self, x: float) -> float:
        d = 1.0
        for m in self.maps:
            d *= m.deriv(x)
            x = m(x)
        return d

    def deriv_vec(self, xs, strict: bool = True) -> np.ndarray:
        return self.value_and_slope_vec(xs, strict)[1]

    def value_and_slope_vec(self, xs, strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
        xs = np.asarray(xs, dtype=float)
        d = np.ones_like(xs)
        for m in self.maps:
            xs, slope = m.value_and_slope_vec(xs, strict)
            d = d * slope
        return xs, d

    def jet(self, x: float, K: int = expr_core.DEFAULT_JET_ORDER) -> Jet:
        j = self.maps[0].jet(x, K)
        for m in self.maps[1:]:
            j = j.compose(m.jet(float(j.coeffs[0]), K))
        return j


class ConjugateMap(ComposedMap):
    """The map s^{-1} o f o s, with its displacement computed through f's."""

    def __init__(self, inner: SmoothMap, by: SmoothMap, by_domain: Interval):
        self.inner = inner
        self.by = by
        self.by_inverse = InverseMap(by, by_domain)
        super().__init__([by, inner, self.by_inverse])
        self.description = f"conjugate({inner.description}, by={by.description})"

    def key(self) -> str:
        return f"conjugate({self.inner.key()},{self.by.key()})"

    def displacement(self, x: float) -> float:
        y = self.by(x)
        d = self.inner.displacement(y)
        if abs(d) > 1e-4 * max(1.0, abs(y)):
            return self.by_inverse(y + d) - x
        # s^{-1}(y + d) - s^{-1}(y) from the jet of s^{-1} at y.
        c = self.by.jet(x, 4).revert().coeffs
        return float(sum(c[k] * d**k for k in range(4, 0, -1)))

    def displacement_vec(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return np.array([self.displacement(float(x)) for x in xs.ravel()]).reshape(xs.shape)

    def signed_log_displacement(self, x: float) -> tuple[float, float]:
        y = self.by(x)
        sign, logabs = self.inner.signed_log_displacement(y)
        if sign == 0.0 or logabs > math.log(1e-4 * max(1.0, abs(y))):
            return expr_core.signed_log(self.displacement(x))
        c = self.by.jet(x, 4).revert().coeffs
        d = expr_core.from_log(sign, logabs)
        t = float(c[1] + d * (c[2] + d * (c[3] + d * c[4])))
        return sign * math.copysign(1.0, t), logabs + math.log(abs(t))


def _default_inverse(forward: SmoothMap, domain: Interval, degree: int) -> SmoothMap:
    # (s^-1 f s)^-1 = s^-1 f^-1 s avoids a Newton solve around another one.
    if isinstance(forward, ConjugateMap) and degree == 1:
        return ConjugateMap(InverseMap(forward.inner, forward.by_inverse.domain), forward.by, forward.by_inverse.domain)
    return InverseMap(forward, domain, degree == 1)


def as_map(value: Union[SmoothMap, Expr, str]) -> SmoothMap:
    if isinstance(value, SmoothMap):
        return value
    return ExprMap(value)


# ---------------------------------------------------------------- diffeomorphisms


class SemigroupClass(str, Enum):
    SPLUS = "SPlus"
    SMINUS = "SMinus"
    MIXED = "Mixed"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Gap:
    """Open gap between consecutive fixed points (or interval ends).

    ``sign`` is the sign of f(x) - x inside.  The attracting end ``d`` is
    where forward orbits go, ``c`` is where backward orbits go.
    """

    lower: float
    upper: float
    lower_fixed: bool
    upper_fixed: bool
    sign: int

    @property
    def kind(self) -> str:
        if self.lower_fixed and self.upper_fixed:
            return "compact"
        if self.lower_fixed or self.upper_fixed:
            return "half-open"
        return "open"

    @property
    def semigroup(self) -> SemigroupClass:
        return SemigroupClass.SPLUS if self.sign > 0 else SemigroupClass.SMINUS

    @property
    def attracting_end(self) -> float:
        return self.upper if self.sign > 0 else self.lower

    @property
    def repelling_end(self) -> float:
        return self.lower if self.sign > 0 else self.upper

    @property
    def attracting_end_fixed(self) -> bool:
        return self.upper_fixed if self.sign > 0 else self.lower_fixed

    @property
    def repelling_end_fixed(self) -> bool:
        return self.lower_fixed if self.sign > 0 else self.upper_fixed

    def contains(self, x: float) -> bool:
        return self.lower < x < self.upper

    def sample_point(self) -> float:
        return _gap_samples(self.lower, self.upper)[0]

    def label(self) -> str:
        left = "[" if self.lower_fixed else "("
        right = "]" if self.upper_fixed else ")"
        return f"{left}{_fmt(self.lower)}, {_fmt(self.upper)}{right}"

    def distance_to(self, x, end: float):
        """Distance to a finite end, or 1/(1+|x|) toward an infinite one."""
        if math.isinf(end):
            return 1.0 / (1.0 + np.abs(x))
        return np.abs(np.asarray(x) - end)


def _gap_samples(lo: float, hi: float, count: int = 1) -> list[float]:
    """Interior points of (lo, hi), the first one central."""
    if math.isfinite(lo) and math.isfinite(hi):
        ts = [0.5] + [0.5 ** (k + 1) for k in range(1, count)]
        return [lo + t * (hi - lo) for t in ts]
    if math.isfinite(lo):
        base = max(1.0, abs(lo))
        return [lo + base * 2.0 ** (-k) for k in range(count)]
    if math.isfinite(hi):
        base = max(1.0, abs(hi))
        return [hi - base * 2.0 ** (-k) for k in range(count)]
    return [0.0] + [2.0 ** (-k) for k in range(1, count)]


class Diffeo:
    """A diffeomorphism of an interval with declared fixed points.

    ``forward`` is the map itself and ``backward`` its inverse; ``inverted``
    swaps the two so that algorithms written for one direction serve both.
    """

    def __init__(
        self,
        forward: Union[SmoothMap, Expr, str],
        domain: Interval = REAL_LINE,
        fixed_points: Iterable[float] = (),
        degree: int | None = None,
        backward: SmoothMap | None = None,
        name: str | None = None,
    ):
        self.forward = as_map(forward)
        self.domain = domain
        if degree is None:
            degree = self._detect_degree()
        if degree not in (1, -1):
            raise DiffeoError("degree must be +1 or -1")
        self.degree = degree
        points = set(float(p) for p in fixed_points)
        if degree == 1:
            points.update(domain.closed_endpoints())
        self.fixed_points = tuple(sorted(points))
        for p in self.fixed_points:
            if not domain.contains(p):
                raise DiffeoError(f"declared fixed point {p!r} is outside {domain}")
        if backward is None:
            backward = _default_inverse(self.forward, domain, degree)
        self.backward = backward
        self.name = name or self.forward.description

    def _detect_degree(self) -> int:
        for x in _gap_samples(self.domain.lower, self.domain.upper, 8):
            try:
                d = self.forward.deriv(x)
            except DomainError:
                continue
            if d > 0:
                return 1
            if d < 0:
                return -1
        raise DiffeoError("cannot determine orientation: derivative vanishes at sample points")

    def __repr__(self) -> str:
        return f"Diffeo({self.name!r}, {self.domain}, fix={list(self.fixed_points)})"

    def key(self) -> str:
        return f"{self.forward.key()}|{self.domain}|{list(self.fixed_points)}"

    # values
    def __call__(self, x: float) -> float:
        return self.forward(x)

    def vec(self, xs, strict: bool = True) -> np.ndarray:
        return self.forward.vec(xs, strict)

    def deriv(self, x: float) -> float:
        return self.forward.deriv(x)

    def deriv_vec(self, xs, strict: bool = True) -> np.ndarray:
        return self.forward.deriv_vec(xs, strict)

    def value_and_slope_vec(self, xs, strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
        return self.forward.value_and_slope_vec(xs, strict)

    def inverse(self, y: float) -> float:
        return self.backward(y)

    def inverse_vec(self, ys, strict: bool = True) -> np.ndarray:
        return self.backward.vec(ys, strict)

    def displacement(self, x: float) -> float:
        return self.forward.displacement(x)

    def displacement_vec(self, xs) -> np.ndarray:
        return self.forward.displacement_vec(xs)

    def signed_log_displacement(self, x: float) -> tuple[float, float]:
        return self.forward.signed_log_displacement(x)

    def jet(self, x: float, K: int = expr_core.DEFAULT_JET_ORDER) -> Jet:
        return self.forward.jet(x, K)

    def inverted(self) -> "Diffeo":
        return Diffeo(self.backward, self.domain, self.fixed_points, self.degree, backward=self.forward,
                      name=f"inverse({self.name})")

    # orbits
    def iterate(self, x: float, n: int) -> float:
        step = self.forward if n >= 0 else self.backward
        for _ in range(abs(n)):
            x = step(x)
        return x

    # gaps
    def gaps(self) -> list[Gap]:
        if self.degree != 1:
            raise DiffeoError("gap decomposition is defined for orientation-preserving maps")
        cuts = [self.domain.lower] + list(self.fixed_points) + [self.domain.upper]
        fixed = [False] + [True] * len(self.fixed_points) + [False]
        gaps = []
        for i in range(len(cuts) - 1):
            lo, hi = cuts[i], cuts[i + 1]
            if lo == hi:
                continue
            gaps.append(Gap(lo, hi, fixed[i], fixed[i + 1], self._gap_sign(lo, hi)))
        return gaps

    def _gap_sign(self, lo: float, hi: float) -> int:
        for x in _gap_samples(lo, hi, 40):
            try:
                d = self.displacement(x)
            except (DomainError, InverseBracketFailure):
                # an inverse map is undefined off the image of the original
                continue
            if d > 0:
                return 1
            if d < 0:
                return -1
        raise DiffeoError(f"cannot determine the sign of f(x) - x on ({lo}, {hi})")

    def gap_containing(self, x: float) -> Gap:
        for gap in self.gaps():
            if gap.contains(x):
                return gap
        raise DiffeoError(f"{x!r} is not inside any gap of {self}")


def semigroup_class(d: Diffeo) -> Union[SemigroupClass, tuple[SemigroupClass, ...]]:
    """SPlus or SMinus when all gaps agree, else the tuple of per-gap classes."""
    classes = tuple(g.semigroup for g in d.gaps())
    if len(set(classes)) == 1:
        return classes[0]
    return classes


def classify_gap(d: Diffeo, gap: Gap) -> SemigroupClass:
    return gap.semigroup


# ---------------------------------------------------------------- verification


@dataclass
class VerificationReport:
    ok: bool
    grid_size: int
    degree: int
    fixed_points: tuple[float, ...]
    gap_signs: list[int]
    messages: list[str] = field(default_factory=list)


def verification_grid(domain: Interval, fixed_points: Sequence[float], grid_size: int) -> np.ndarray:
    lo, hi = domain.lower, domain.upper
    finite = [abs(v) for v in (lo, hi, *fixed_points) if math.isfinite(v)]
    width = max(10.0, 4.0 * max(finite, default=0.0))
    if math.isfinite(lo) and math.isfinite(hi):
        t = np.linspace(0.0, 1.0, grid_size)
        pts = lo + (hi - lo) * t
        span = hi - lo
        # Refine geometrically toward both ends.
        geo = span * np.geomspace(1e-8, 0.5, 60)
        pts = np.concatenate([pts, lo + geo, hi - geo])
    else:
        a = lo if math.isfinite(lo) else -width
        b = hi if math.isfinite(hi) else width
        pts = np.linspace(a, b, grid_size)
        tail = np.geomspace(1.0, 1e8, 60)
        if math.isinf(hi):
            pts = np.concatenate([pts, b + tail])
        if math.isinf(lo):
            pts = np.concatenate([pts, a - tail])
        if math.isfinite(lo):
            pts = np.concatenate([pts, lo + np.geomspace(1e-8, 1.0, 60)])
        if math.isfinite(hi):
            pts = np.concatenate([pts, hi - np.geomspace(1e-8, 1.0, 60)])
    for p in fixed_points:
        pts = np.concatenate([pts, p + np.geomspace(1e-6, 1e-1, 20), p - np.geomspace(1e-6, 1e-1, 20)])
    pts = np.unique(pts)
    keep = np.array([domain.contains(float(x)) for x in pts])
    return pts[keep]


def verify(d: Diffeo, grid_size: int = 2001, tol_fix: float = 1e-12) -> VerificationReport:
    """Spot-check monotonicity and the declared fixed set on a grid.

    Raises on the first violation found.
    """
    grid = verification_grid(d.domain, d.fixed_points, grid_size)
    fixed = np.array(d.fixed_points)
    grid = grid[~np.isin(grid, fixed)]
    values = np.array([d(float(x)) for x in grid])
    slopes = np.array([d.deriv(float(x)) for x in grid])
    if not np.all(np.isfinite(values)) or not np.all(np.isfinite(slopes)):
        raise MonotonicityViolation("non-finite values on the verification grid")
    if np.any(d.degree * slopes <= 0.0):
        bad = float(grid[np.nonzero(d.degree * slopes <= 0.0)[0][0]])
        raise MonotonicityViolation(f"derivative has the wrong sign at x={bad!r}")
    if np.any(d.degree * np.diff(values) < 0.0):
        i = int(np.nonzero(d.degree * np.diff(values) < 0.0)[0][0])
        raise MonotonicityViolation(f"values not monotone between {grid[i]!r} and {grid[i + 1]!r}")
    if np.any((values < d.domain.lower) | (values > d.domain.upper)):
        bad = float(grid[np.nonzero((values < d.domain.lower) | (values > d.domain.upper))[0][0]])
        raise MonotonicityViolation(f"f({bad!r}) leaves {d.domain}")
    for p in d.fixed_points:
        if abs(d(p) - p) > tol_fix * max(1.0, abs(p)):
            raise FixedPointViolation(f"declared fixed point {p!r} has f(p) - p = {d(p) - p!r}")
    messages = []
    if d.degree == -1:
        if len(d.fixed_points) != 1:
            raise FixedPointViolation("an orientation-reversing map has exactly one fixed point")
        p = d.fixed_points[0]
        if d.domain.lower_closed and abs(d(d.domain.lower) - d.domain.upper) > tol_fix * max(1.0, abs(d.domain.upper)):
            raise FixedPointViolation("an orientation-reversing map must swap the interval ends")
        disp = np.array([d.displacement(float(x)) for x in grid])
        wrong = ((grid < p) & (disp <= 0)) | ((grid > p) & (disp >= 0))
        if np.any(wrong):
            raise UndeclaredFixedPointSuspected((float(grid[wrong][0]), float(grid[wrong][0])))
        return VerificationReport(True, len(grid), -1, d.fixed_points, [], messages)
    disp = np.array([d.displacement(float(x)) for x in grid])
    cuts = [d.domain.lower] + list(d.fixed_points) + [d.domain.upper]
    signs = []
    brackets = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mask = (grid > lo) & (grid < hi)
        xs, ds = grid[mask], disp[mask]
        nz = ds != 0.0
        xs, ds = xs[nz], ds[nz]
        if len(xs) == 0:
            if lo != hi:
                messages.append(f"no nonzero displacement sampled on ({lo}, {hi})")
            continue
        s = np.sign(ds)
        change = np.nonzero(s[1:] != s[:-1])[0]
        brackets.extend((float(xs[j]), float(xs[j + 1])) for j in change)
        signs.append(int(s[0]))
    if brackets:
        # Report the sign change closest to the origin, positive side first.
        best = min(brackets, key=lambda b: (round(min(abs(b[0]), abs(b[1])), 6), b[0] < 0))
        raise UndeclaredFixedPointSuspected(best)
    return VerificationReport(True, len(grid), 1, d.fixed_points, signs, messages)


# ---------------------------------------------------------------- sign condition


def sign_condition(f: Diffeo, g: Diffeo) -> ConditionStatus:
    """Whether corresponding gaps lie on the same side of the diagonal."""
    gf, gg = f.gaps(), g.gaps()
    if len(gf) != len(gg):
        return ConditionStatus("Sign", Status.FAILS, {
            "witness": "gap counts differ", "gaps_f": len(gf), "gaps_g": len(gg)})
    for a, b in zip(gf, gg):
        if a.sign != b.sign:
            return ConditionStatus("Sign", Status.FAILS, {
                "witness": {"gap_f": a.label(), "x_f": a.sample_point(), "sign_f": a.sign,
                            "gap_g": b.label(), "x_g": b.sample_point(), "sign_g": b.sign}})
    return ConditionStatus("Sign", Status.HOLDS, {"signs": [a.sign for a in gf]})


# ---------------------------------------------------------------- orbit counting


@dataclass
class OrbitCount:
    """Orbit points of a seed inside a window.

    ``exact`` is true when direct iteration crossed the whole window; then
    ``count`` is exact for the computed orbit.  Otherwise ``count`` is the
    number seen before the budget ran out and ``bounds`` brackets the true
    count using the extreme displacements on the window.
    """

    count: int
    exact: bool
    bounds: tuple[float, float]
    steps: int
    # Natural logs of ``bounds``; finite even when the bounds overflow.
    log_bounds: tuple[float, float] = (-math.inf, math.inf)


def displacement_bounds(d: Diffeo, lo: float, hi: float, samples: int = 2001) -> tuple[float, float]:
    """Smallest and largest log|f(x) - x| on [lo, hi]."""
    xs = np.linspace(lo, hi, samples)
    logs = np.array([d.signed_log_displacement(float(x))[1] for x in xs])
    return float(logs.min()), float(logs.max())


def _walk(step: SmoothMap, x: float, x_lo: float, x_hi: float, leaving_low: bool, budget: int):
    """Iterate until the orbit passes the far side of the window."""
    count = steps = 0
    while steps < budget:
        if x_lo <= x <= x_hi:
            count += 1
        elif (leaving_low and x < x_lo) or (not leaving_low and x > x_hi):
            return count, steps, True
        nxt = step(x)
        steps += 1
        if nxt == x:
            # Stalled in floating point: the rest of the orbit is unresolvable.
            break
        x = nxt
    return count, steps, False


def orbit_count(d: Diffeo, x_lo: float, x_hi: float, seed: float, budget: int = 10**6) -> OrbitCount:
    """Count orbit points of ``seed`` in [x_lo, x_hi], a window inside one gap.

    When the budget runs out the count seen so far is returned with
    ``exact=False`` and bounds from the extreme displacements on the window.
    """
    gap = d.gap_containing(seed)
    if not (gap.lower <= x_lo < x_hi <= gap.upper):
        raise DiffeoError("the window must lie in the gap of the seed")
    down = d.forward if gap.sign < 0 else d.backward
    up = d.backward if gap.sign < 0 else d.forward
    if seed > x_hi:
        count, steps, done = _walk(down, seed, x_lo, x_hi, True, budget)
    elif seed < x_lo:
        count, steps, done = _walk(up, seed, x_lo, x_hi, False, budget)
    else:
        c1, s1, d1 = _walk(down, seed, x_lo, x_hi, True, budget)
        c2, s2, d2 = _walk(up, seed, x_lo, x_hi, False, max(budget - s1, 1))
        count, steps, done = c1 + c2 - 1, s1 + s2, d1 and d2
    if done:
        exact_log = math.log(count) if count else -math.inf
        return OrbitCount(count, True, (float(count), float(count)), steps, (exact_log, exact_log))
    log_dmin, log_dmax = displacement_bounds(d, x_lo, x_hi)
    log_span = math.log(x_hi - x_lo)
    # Consecutive orbit points are at least dmin and at most dmax apart.
    log_lower = max(math.log(count) if count else -math.inf, log_span - log_dmax)
    log_upper = np.logaddexp(log_span - log_dmin, 0.0)
    raw_lower = _safe_exp(log_lower)
    lower = max(float(count), math.floor(raw_lower) if math.isfinite(raw_lower) else raw_lower)
    upper = _safe_exp(log_upper)
    return OrbitCount(count, False, (lower, upper), steps, (float(log_lower), float(log_upper)))


def _safe_exp(v: float) -> float:
    return math.inf if v > 709.0 else math.exp(v)


# ---------------------------------------------------------------- alignment


class AlignmentMap:
    """Increasing map sending fix(f) onto fix(g) in order.

    Identity when the sets agree, a translation for one point, otherwise a
    monotone cubic through the pairs with linear continuation.
    """

    def __init__(self, source: Sequence[float], target: Sequence[float]):
        self.source = tuple(source)
        self.target = tuple(target)
        self.identity = self.source == self.target
        self._spline = None
        if len(self.source) >= 2 and not self.identity:
            self._spline = PchipInterpolator(self.source, self.target, extrapolate=False)
            self._slopes = (
                (self.target[1] - self.target[0]) / (self.source[1] - self.source[0]),
                (self.target[-1] - self.target[-2]) / (self.source[-1] - self.source[-2]),
            )

    def __call__(self, x: float) -> float:
        if self.identity or not self.source:
            return x
        if len(self.source) == 1:
            return x - self.source[0] + self.target[0]
        if x < self.source[0]:
            return self.target[0] + self._slopes[0] * (x - self.source[0])
        if x > self.source[-1]:
            return self.target[-1] + self._slopes[1] * (x - self.source[-1])
        return float(self._spline(x))

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.source, self.target))


def align_fixed_sets(f: Diffeo, g: Diffeo) -> AlignmentMap:
    if len(f.fixed_points) != len(g.fixed_points):
        raise CardinalityMismatch(len(f.fixed_points), len(g.fixed_points))
    return AlignmentMap(f.fixed_points, g.fixed_points)


def diffeo_from_spec(spec: dict) -> Diffeo:
    """Build a Diffeo from a config block {expr, interval, closed, fixed_points, conjugate_by}."""
    if "expr" not in spec:
        raise DiffeoError("a map specification needs an 'expr' entry")
    interval = Interval.from_spec(spec.get("interval", ["-inf", "inf"]), spec.get("closed"))
    base: SmoothMap = ExprMap(spec["expr"])
    if spec.get("conjugate_by"):
        base = ConjugateMap(base, ExprMap(spec["conjugate_by"]), interval)
    return Diffeo(base, interval, [float(p) for p in spec.get("fixed_points", [])], spec.get("degree"))
