"""Exact truncated power series without constant term.

A ``FormalSeries`` holds a_1..a_N as ``Fraction`` values and stands for the
germ a_1 X + ... + a_N X^N mod X^{N+1}.  Composition, compositional inverse,
normal forms under conjugation, the conjugacy test and centralizer
descriptors are all exact.

Normal forms.  A series with multiplier a_1 not in {0, 1, -1} is formally
linearizable: it is conjugate to a_1 X.  A series with a_1 = 1 and first
non-zero higher coefficient b at X^{p+1} is conjugate to
X + b X^{p+1} + beta X^{2p+1} after removing the intermediate terms with
conjugations X + c X^j, lowest degree first.  The resonant invariant is
alpha = beta / b^2, which does not change under the remaining scalings cX.
The final scaling to make |b| = 1 needs c = |b|^(-1/p), which is rarely
rational, so the exact witness stops at the scaled-free form and records b.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

DEFAULT_ORDER = 12


class SeriesError(ValueError):
    pass


class NonInvertibleSeries(SeriesError):
    pass


class IndeterminateAtOrderN(SeriesError):
    """The truncation is too short to resolve the class of the series."""


class UndeterminedAtOrderN(SeriesError):
    """Both series agree with X through the truncation order."""


class NegativeMultiplierError(SeriesError):
    """Multiplier -1 has no canonical form here; classify through ``square``."""


Number = Union[int, Fraction, str]


@dataclass(frozen=True)
class FormalSeries:
    coeffs: tuple[Fraction, ...]

    def __init__(self, coeffs: Iterable[Number], order: int | None = None):
        values = [Fraction(c) for c in coeffs]
        if order is not None:
            values = (values + [Fraction(0)] * order)[:order]
        if not values:
            raise SeriesError("a series needs truncation order N >= 1")
        object.__setattr__(self, "coeffs", tuple(values))

    @property
    def order(self) -> int:
        return len(self.coeffs)

    def __getitem__(self, k: int) -> Fraction:
        """Coefficient of X^k (k >= 1); zero beyond the truncation."""
        if k < 1:
            raise IndexError("series have no constant term")
        return self.coeffs[k - 1] if k <= self.order else Fraction(0)

    @property
    def multiplier(self) -> Fraction:
        return self.coeffs[0]

    @classmethod
    def identity(cls, order: int = DEFAULT_ORDER) -> "FormalSeries":
        return cls([1], order)

    @classmethod
    def monomial(cls, c: Number, k: int, order: int = DEFAULT_ORDER) -> "FormalSeries":
        values = [Fraction(0)] * order
        values[k - 1] = Fraction(c)
        return cls(values)

    def truncate(self, order: int) -> "FormalSeries":
        return FormalSeries(self.coeffs, order)

    def is_identity(self) -> bool:
        return self.coeffs[0] == 1 and all(c == 0 for c in self.coeffs[1:])

    def __add__(self, other: "FormalSeries") -> "FormalSeries":
        n = max(self.order, other.order)
        return FormalSeries([self[k] + other[k] for k in range(1, n + 1)])

    def __sub__(self, other: "FormalSeries") -> "FormalSeries":
        n = max(self.order, other.order)
        return FormalSeries([self[k] - other[k] for k in range(1, n + 1)])

    def scale(self, c: Number) -> "FormalSeries":
        c = Fraction(c)
        return FormalSeries([c * a for a in self.coeffs])

    def __str__(self) -> str:
        return format_series(self)

    def __repr__(self) -> str:
        return f"FormalSeries({format_series(self)!r}, N={self.order})"


# ---------------------------------------------------------------- literal syntax

_TERM_RE = re.compile(
    r"\s*([+-])?\s*(?:\(?\s*(\d+(?:/\d+)?)\s*\)?)?\s*\*?\s*X(?:\s*\^\s*(\d+))?\s*"
)


def parse_series(text: str, order: int | None = None) -> FormalSeries:
    """Parse a literal such as ``"X + 5X^4 + 50X^7"`` or ``"X - 1/2X^2"``."""
    pos = 0
    terms: dict[int, Fraction] = {}
    source = text.strip()
    if not source:
        raise SeriesError("empty series literal")
    while pos < len(source):
        m = _TERM_RE.match(source, pos)
        if m is None or m.end() == pos:
            raise SeriesError(f"cannot parse series literal {text!r} at offset {pos}")
        sign, coef, power = m.groups()
        if pos > 0 and sign is None:
            raise SeriesError(f"missing '+' or '-' before term at offset {pos} in {text!r}")
        c = Fraction(coef) if coef else Fraction(1)
        if sign == "-":
            c = -c
        k = int(power) if power else 1
        if k < 1:
            raise SeriesError("series literals must not have a constant term")
        terms[k] = terms.get(k, Fraction(0)) + c
        pos = m.end()
    n = max(terms) if order is None else order
    if max(terms) > n:
        raise SeriesError(f"term of degree {max(terms)} exceeds truncation order {n}")
    return FormalSeries([terms.get(k, 0) for k in range(1, n + 1)])


def format_series(P: FormalSeries) -> str:
    parts = []
    for k, c in enumerate(P.coeffs, start=1):
        if c == 0:
            continue
        mag = abs(c)
        coef = "" if mag == 1 else (str(mag) if mag.denominator == 1 else f"({mag})")
        mono = "X" if k == 1 else f"X^{k}"
        sign = "-" if c < 0 else "+"
        parts.append((sign, coef + mono))
    if not parts:
        return "0"
    first_sign, first = parts[0]
    text = ("-" if first_sign == "-" else "") + first
    for sign, body in parts[1:]:
        text += f" {sign} {body}"
    return text


def as_series(value: Union[FormalSeries, str], order: int | None = None) -> FormalSeries:
    if isinstance(value, FormalSeries):
        return value if order is None else value.truncate(order)
    return parse_series(value, order)


# ---------------------------------------------------------------- arithmetic


def _poly_mul(a: Sequence[Fraction], b: Sequence[Fraction], n: int) -> list[Fraction]:
    """Product of coefficient lists indexed from X^0, truncated after X^n."""
    out = [Fraction(0)] * (n + 1)
    for i, ai in enumerate(a):
        if ai == 0 or i > n:
            continue
        for j, bj in enumerate(b):
            if i + j > n:
                break
            if bj:
                out[i + j] += ai * bj
    return out


def _dense(P: FormalSeries, n: int) -> list[Fraction]:
    return [Fraction(0)] + [P[k] for k in range(1, n + 1)]


def compose(P: FormalSeries, Q: FormalSeries) -> FormalSeries:
    """P after Q, exact mod X^{N+1}."""
    if P.order != Q.order:
        raise SeriesError("compose needs series of the same truncation order")
    n = P.order
    q = _dense(Q, n)
    acc = [Fraction(0)] * (n + 1)
    # Horner in Q: P(Q) = Q*(a1 + Q*(a2 + ...)).
    for k in range(n, 0, -1):
        acc[0] += P[k]
        acc = _poly_mul(acc, q, n)
    return FormalSeries(acc[1:])


def invert(P: FormalSeries) -> FormalSeries:
    """Compositional inverse, solved one degree at a time."""
    a1 = P.multiplier
    if a1 == 0:
        raise NonInvertibleSeries("series with zero multiplier is not invertible")
    n = P.order
    q = [Fraction(0), 1 / a1] + [Fraction(0)] * (n - 1)
    for k in range(2, n + 1):
        # The X^k coefficient of P(Q) is a1*q_k plus terms in q_1..q_{k-1}.
        trial = compose(P, FormalSeries(q[1:]))
        q[k] = -trial[k] / a1
    return FormalSeries(q[1:])


def square(P: FormalSeries) -> FormalSeries:
    return compose(P, P)


def is_involutive_jet(P: FormalSeries) -> bool:
    return square(P).is_identity()


def conjugate(P: FormalSeries, H: FormalSeries) -> FormalSeries:
    """H^{-1} o P o H."""
    return compose(invert(H), compose(P, H))


# ---------------------------------------------------------------- normal forms


@dataclass(frozen=True)
class Hyperbolic:
    multiplier: Fraction

    def canonical(self, order: int) -> FormalSeries:
        return FormalSeries([self.multiplier], order)


@dataclass(frozen=True)
class Identity:
    def canonical(self, order: int) -> FormalSeries:
        return FormalSeries.identity(order)


@dataclass(frozen=True)
class Parabolic:
    """Class of +-X +- X^{p+1} + alpha X^{2p+1}.

    ``leading`` is the sign of X and ``sign`` the sign of X^{p+1}.
    ``scale_coefficient`` is the X^{p+1} coefficient b of the rational
    pre-normal form X + b X^{p+1} + alpha b^2 X^{2p+1} reached by the witness.
    """

    leading: int
    p: int
    sign: int
    alpha: Fraction
    scale_coefficient: Fraction

    def key(self) -> tuple[int, int, int, Fraction]:
        return (self.leading, self.p, self.sign, self.alpha)

    def canonical(self, order: int) -> FormalSeries:
        values = [Fraction(0)] * order
        values[0] = Fraction(self.leading)
        if self.p + 1 <= order:
            values[self.p] = Fraction(self.sign)
        if 2 * self.p + 1 <= order:
            values[2 * self.p] = self.alpha
        return FormalSeries(values)

    def prenormal(self, order: int) -> FormalSeries:
        b = self.scale_coefficient
        values = [Fraction(0)] * order
        values[0] = Fraction(self.leading)
        if self.p + 1 <= order:
            values[self.p] = b
        if 2 * self.p + 1 <= order:
            values[2 * self.p] = self.alpha * b * b
        return FormalSeries(values)


@dataclass(frozen=True)
class FlatToOrderN:
    order: int

    def canonical(self, order: int) -> FormalSeries:
        return FormalSeries.identity(order)


NormalForm = Union[Hyperbolic, Identity, Parabolic, FlatToOrderN]


def _linearizer(P: FormalSeries) -> FormalSeries:
    """H with P o H = H o (a1 X), so H^{-1} P H = a1 X (non-resonant a1)."""
    n = P.order
    lam = P.multiplier
    h = [Fraction(0), Fraction(1)] + [Fraction(0)] * (n - 1)
    for k in range(2, n + 1):
        # [P o H]_k = lam*h_k + R_k(h_1..h_{k-1}); [H(lam X)]_k = lam^k h_k.
        h[k] = Fraction(0)
        rest = compose(P, FormalSeries(h[1:]))[k]
        denom = lam**k - lam
        h[k] = rest / denom
    return FormalSeries(h[1:])


def _leading_order(P: FormalSeries) -> int | None:
    """p such that P = X + b X^{p+1} + ..., or None when P = X mod X^{N+1}."""
    for k in range(2, P.order + 1):
        if P[k] != 0:
            return k - 1
    return None


def normal_form(P: FormalSeries) -> tuple[NormalForm, FormalSeries]:
    """Normal form and a witness H with H^{-1} o P o H equal to the rational form.

    For ``Hyperbolic`` the rational form is a1 X.  For ``Parabolic`` it is the
    pre-normal form X + b X^{p+1} + alpha b^2 X^{2p+1} (see module docstring).
    """
    n = P.order
    a1 = P.multiplier
    if a1 == 0:
        raise NonInvertibleSeries("series with zero multiplier is not invertible")
    if a1 == -1:
        raise NegativeMultiplierError("multiplier -1: classify the square instead")
    if a1 != 1:
        return Hyperbolic(a1), _linearizer(P)
    p = _leading_order(P)
    if p is None:
        return FlatToOrderN(n), FormalSeries.identity(n)
    if 2 * p + 1 > n:
        raise IndeterminateAtOrderN(
            f"parabolic of order p={p} needs truncation N >= {2 * p + 1}, got N={n}"
        )
    b = P[p + 1]
    H = FormalSeries.identity(n)
    Q = P
    for k in range(p + 2, n + 1):
        if k == 2 * p + 1 or Q[k] == 0:
            continue
        # Conjugating by X + c X^j shifts the X^{p+j} coefficient by c*b*(p+1-j).
        j = k - p
        c = -Q[k] / (b * (p + 1 - j))
        step = FormalSeries.identity(n) + FormalSeries.monomial(c, j, n)
        H = compose(H, step)
        Q = conjugate(P, H)
    beta = Q[2 * p + 1]
    alpha = beta / (b * b)
    return Parabolic(1, p, 1 if b > 0 else -1, alpha, b), H


def _iroot(n: int, p: int) -> int | None:
    """Exact integer p-th root of n >= 0, or None."""
    lo, hi = 0, 1 << (n.bit_length() // p + 1)
    while lo < hi:
        mid = (lo + hi) // 2
        if mid**p < n:
            lo = mid + 1
        else:
            hi = mid
    return lo if lo**p == n else None


def _rational_root(value: Fraction, p: int) -> Fraction | None:
    """Exact positive rational p-th root of a positive rational, if it exists."""
    num, den = _iroot(value.numerator, p), _iroot(value.denominator, p)
    if num is None or den is None:
        return None
    return Fraction(num, den)


def are_conjugate(
    P: FormalSeries, Q: FormalSeries, allow_reversing: bool = True
) -> tuple[bool, FormalSeries | None]:
    """Whether P = H^{-1} o Q o H for some invertible series H.

    Returns a witness when one is rational.  With ``allow_reversing`` the
    conjugating series may have negative multiplier (the full formal group),
    which matters for odd p where -X flips the sign of X^{p+1}.
    """
    if P.order != Q.order:
        raise SeriesError("are_conjugate needs series of the same truncation order")
    n = P.order
    if P.multiplier == -1 or Q.multiplier == -1:
        if P.multiplier != Q.multiplier:
            return False, None
        ok, witness = are_conjugate(square(P), square(Q), allow_reversing)
        if not ok:
            return False, None
        if witness is not None and conjugate(Q, witness) == P:
            return True, witness
        if is_involutive_jet(P) and is_involutive_jet(Q):
            # Formal involutions are conjugate to -X via (X - P)/2.
            hp = (FormalSeries.identity(n) - P).scale(Fraction(1, 2))
            hq = (FormalSeries.identity(n) - Q).scale(Fraction(1, 2))
            return True, compose(invert(hq), hp)
        raise UndeterminedAtOrderN("multiplier -1 with non-involutive jets: use the squaring reduction")
    if P.multiplier != Q.multiplier:
        return False, None
    # Different leading orders already separate the classes, even when the
    # truncation is too short to reach the resonant term.
    if P.multiplier == 1:
        p, q = _leading_order(P), _leading_order(Q)
        if p is not None and q is not None and p != q:
            return False, None
    nf_p, h_p = normal_form(P)
    nf_q, h_q = normal_form(Q)
    if isinstance(nf_p, FlatToOrderN) and isinstance(nf_q, FlatToOrderN):
        raise UndeterminedAtOrderN(f"both series equal X through order {n}")
    if isinstance(nf_p, Hyperbolic) and isinstance(nf_q, Hyperbolic):
        if nf_p.multiplier != nf_q.multiplier:
            return False, None
        return True, compose(h_q, invert(h_p))
    if isinstance(nf_p, Parabolic) and isinstance(nf_q, Parabolic):
        if nf_p.p != nf_q.p or nf_p.alpha != nf_q.alpha:
            return False, None
        p = nf_p.p
        flip = nf_p.sign != nf_q.sign
        if flip and (p % 2 == 0 or not allow_reversing):
            return False, None
        ratio = nf_p.scale_coefficient / nf_q.scale_coefficient
        c = _rational_root(abs(ratio), p)
        if c is None:
            return True, None
        if flip:
            c = -c
        S = FormalSeries([c], n)
        return True, compose(h_q, compose(S, invert(h_p)))
    return False, None


# ---------------------------------------------------------------- centralizers


@dataclass(frozen=True)
class FullLinear:
    multiplier: Fraction


@dataclass(frozen=True)
class OneParameterParabolic:
    p: int


@dataclass(frozen=True)
class TrivialJet:
    order: int


CentralizerDescriptor = Union[FullLinear, OneParameterParabolic, TrivialJet]


def centralizer(P: FormalSeries) -> CentralizerDescriptor:
    """Descriptor of the formal centralizer of P (orientation-preserving part).

    A jet equal to X through order N returns ``TrivialJet``; the truncation
    carries no information about such a centralizer.
    """
    nf, _ = normal_form(P)
    if isinstance(nf, Hyperbolic):
        return FullLinear(nf.multiplier)
    if isinstance(nf, Parabolic):
        return OneParameterParabolic(nf.p)
    return TrivialJet(P.order)


# ---------------------------------------------------------------- floats to rationals


def series_from_floats(
    coeffs: Sequence[float], tol: float = 1e-9, max_denominator: int = 10**6
) -> FormalSeries:
    """Rationalize numerically computed Taylor coefficients.

    Values within ``tol`` (relative to max(1, |c|)) of a rational with a small
    denominator snap to it, values below ``tol`` snap to zero; others keep
    their exact binary value.
    """
    out = []
    for c in coeffs:
        c = float(c)
        if not math.isfinite(c):
            raise SeriesError("non-finite Taylor coefficient")
        if abs(c) <= tol:
            out.append(Fraction(0))
            continue
        r = Fraction(c).limit_denominator(max_denominator)
        out.append(r if abs(float(r) - c) <= tol * max(1.0, abs(c)) else Fraction(c))
    return FormalSeries(out)
