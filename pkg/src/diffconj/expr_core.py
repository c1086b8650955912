"""Expression DSL for smooth functions of one real variable.

The grammar is small: constants, ``x``, the four arithmetic operators,
powers with rational exponents and the functions exp, log, sin, cos, sqrt
and ``flat0``.  ``flat0(e)`` evaluates to ``e`` away from zero and declares
value 0 and all derivatives 0 at exactly ``x = 0``; it is how maps that are
infinitely tangent to the identity are written.

Three evaluators share the tree:

* ``evaluate`` walks the tree with ``math`` and names the failing
  subexpression on a domain error.
* ``eval_jet`` propagates truncated Taylor series (jets), giving exact
  derivatives of any order up to roundoff.
* ``compile_scalar`` and ``compile_vector`` generate Python source for fast
  repeated evaluation (orbit loops, grids).  Their errors are re-raised
  through the tree walker so messages stay informative.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Union

import numpy as np

DEFAULT_JET_ORDER = 12

FUNCTION_NAMES = ("exp", "log", "sin", "cos", "sqrt", "flat0")


class ExprError(Exception):
    """Base class for DSL errors."""


class ParseError(ExprError):
    """Syntax error; ``offset`` is the byte offset into the UTF-8 source."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownIdentifier(ParseError):
    pass


class DomainError(ExprError, ValueError):
    """Evaluation outside the domain of a subexpression."""

    def __init__(self, message: str, subexpression: str):
        super().__init__(f"{message}: {subexpression}")
        self.subexpression = subexpression


# ---------------------------------------------------------------- nodes


@dataclass(frozen=True)
class Constant:
    value: float
    text: str


@dataclass(frozen=True)
class Variable:
    pass


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Sub:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Div:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class PowConst:
    base: "Expr"
    exponent: Fraction


@dataclass(frozen=True)
class Exp:
    arg: "Expr"


@dataclass(frozen=True)
class Log:
    arg: "Expr"


@dataclass(frozen=True)
class Sin:
    arg: "Expr"


@dataclass(frozen=True)
class Cos:
    arg: "Expr"


@dataclass(frozen=True)
class Sqrt:
    arg: "Expr"


@dataclass(frozen=True)
class Flat0:
    arg: "Expr"


Expr = Union[Constant, Variable, Neg, Add, Sub, Mul, Div, PowConst, Exp, Log, Sin, Cos, Sqrt, Flat0]

_FUNCTION_NODES = {"exp": Exp, "log": Log, "sin": Sin, "cos": Cos, "sqrt": Sqrt, "flat0": Flat0}
_NODE_FUNCTIONS = {cls: name for name, cls in _FUNCTION_NODES.items()}
_BINARY_SYMBOLS = {Add: "+", Sub: "-", Mul: "*", Div: "/"}

X = Variable()


def const(value: float) -> Expr:
    value = float(value)
    if value < 0.0:
        return Neg(Constant(-value, repr(-value)))
    return Constant(value, repr(value))


# ---------------------------------------------------------------- parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            start = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ParseError(f"unexpected character {source[start]!r}", _byte_offset(source, start))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), _byte_offset(source, start)))
        pos = m.end()
    tokens.append(_Token("end", "", len(source.encode("utf-8"))))
    return tokens


def _byte_offset(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def take(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.take()
        if tok.text != text:
            found = tok.text or "end of input"
            raise ParseError(f"expected {text!r}, found {found!r}", tok.offset)
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected {tok.text!r}", tok.offset)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        # A leading minus negates the whole product, so "-1/x^2" is -(1/x^2).
        if self.peek().text == "-":
            self.take()
            return Neg(self.term())
        e = self.power()
        while self.peek().text in ("*", "/"):
            op = self.take().text
            rhs = self.factor()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def factor(self) -> Expr:
        if self.peek().text == "-":
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().text == "^":
            self.take()
            return PowConst(base, self.rational())
        return base

    def integer(self) -> int:
        sign = 1
        if self.peek().text == "-":
            self.take()
            sign = -1
        tok = self.take()
        if tok.kind != "number" or not tok.text.isdigit():
            raise ParseError(f"expected an integer exponent, found {tok.text or 'end of input'!r}", tok.offset)
        return sign * int(tok.text)

    def rational(self) -> Fraction:
        if self.peek().text == "(":
            self.take()
            num = self.integer()
            den = 1
            if self.peek().text == "/":
                self.take()
                tok = self.peek()
                den = self.integer()
                if den == 0:
                    raise ParseError("zero denominator in exponent", tok.offset)
            self.expect(")")
            return Fraction(num, den)
        return Fraction(self.integer())

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "number":
            return Constant(float(tok.text), tok.text)
        if tok.kind == "name":
            if tok.text == "x":
                return X
            if tok.text not in _FUNCTION_NODES:
                raise UnknownIdentifier(f"unknown identifier {tok.text!r}", tok.offset)
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return _FUNCTION_NODES[tok.text](arg)
        if tok.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {tok.text or 'end of input'!r}", tok.offset)


def parse(source: str) -> Expr:
    """Parse DSL source into an expression tree."""
    return _Parser(source).parse()


# ---------------------------------------------------------------- printer

_PREC_SUM, _PREC_PRODUCT, _PREC_POWER, _PREC_ATOM = 1, 2, 3, 4


def _precedence(e: Expr) -> int:
    if isinstance(e, (Add, Sub, Neg)):
        return _PREC_SUM
    if isinstance(e, (Mul, Div)):
        return _PREC_PRODUCT
    if isinstance(e, PowConst):
        return _PREC_POWER
    return _PREC_ATOM


def _exponent_text(r: Fraction) -> str:
    if r.denominator == 1 and r >= 0:
        return str(r.numerator)
    if r.denominator == 1:
        return f"({r.numerator})"
    return f"({r.numerator}/{r.denominator})"


def to_source(e: Expr) -> str:
    """Print an expression with the minimum parentheses needed to re-parse it."""
    if isinstance(e, Constant):
        return e.text
    if isinstance(e, Variable):
        return "x"
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, _PREC_PRODUCT)
    if isinstance(e, (Add, Sub)):
        op = _BINARY_SYMBOLS[type(e)]
        return f"{to_source(e.left)} {op} {_wrap_term(e.right)}"
    if isinstance(e, (Mul, Div)):
        op = _BINARY_SYMBOLS[type(e)]
        return f"{_wrap(e.left, _PREC_PRODUCT)}{op}{_wrap(e.right, _PREC_POWER)}"
    if isinstance(e, PowConst):
        return f"{_wrap(e.base, _PREC_ATOM)}^{_exponent_text(e.exponent)}"
    return f"{_NODE_FUNCTIONS[type(e)]}({to_source(e.arg)})"


def _wrap(e: Expr, minimum: int) -> str:
    text = to_source(e)
    return text if _precedence(e) >= minimum else f"({text})"


def _wrap_term(e: Expr) -> str:
    # Right operand of + or -: a sum needs parentheses, a negation does not.
    if isinstance(e, (Add, Sub)):
        return f"({to_source(e)})"
    return to_source(e)


# ---------------------------------------------------------------- tree walker


def _pow_real(base: float, r: Fraction, node: Expr) -> float:
    if r.denominator == 1:
        n = r.numerator
        if base == 0.0 and n < 0:
            raise DomainError("division by zero", to_source(node))
        try:
            return float(base) ** n
        except OverflowError:
            raise DomainError("overflow", to_source(node)) from None
    if base < 0.0 or (base == 0.0 and r < 0):
        raise DomainError("non-integer power of a non-positive base", to_source(node))
    try:
        return math.pow(base, float(r))
    except OverflowError:
        raise DomainError("overflow", to_source(node)) from None


def evaluate(e: Expr, x: float) -> float:
    """Evaluate ``e`` at ``x`` in double precision."""
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, Variable):
        return float(x)
    if isinstance(e, Neg):
        return -evaluate(e.arg, x)
    if isinstance(e, Flat0):
        return 0.0 if x == 0.0 else evaluate(e.arg, x)
    if isinstance(e, (Add, Sub, Mul, Div)):
        a = evaluate(e.left, x)
        b = evaluate(e.right, x)
        if isinstance(e, Add):
            return a + b
        if isinstance(e, Sub):
            return a - b
        if isinstance(e, Mul):
            return a * b
        if b == 0.0:
            raise DomainError("division by zero", to_source(e))
        return a / b
    if isinstance(e, PowConst):
        return _pow_real(evaluate(e.base, x), e.exponent, e)
    u = evaluate(e.arg, x)
    if isinstance(e, Exp):
        try:
            return math.exp(u)
        except OverflowError:
            raise DomainError("overflow", to_source(e)) from None
    if isinstance(e, Log):
        if u <= 0.0:
            raise DomainError("log of a non-positive value", to_source(e))
        return math.log(u)
    if isinstance(e, Sqrt):
        if u < 0.0:
            raise DomainError("sqrt of a negative value", to_source(e))
        return math.sqrt(u)
    if isinstance(e, Sin):
        return math.sin(u)
    if isinstance(e, Cos):
        return math.cos(u)
    raise TypeError(f"not an expression node: {e!r}")


_TINY = 1e-280
_HUGE = 1e280


def signed_log(v: float) -> tuple[float, float]:
    if v == 0.0:
        return 0.0, -math.inf
    return math.copysign(1.0, v), math.log(abs(v))


def from_log(sign: float, logabs: float) -> float:
    if sign == 0.0 or logabs == -math.inf:
        return 0.0
    if logabs > 709.0:
        return math.copysign(math.inf, sign)
    return sign * math.exp(logabs)


def _log_add(a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float]:
    (sa, la), (sb, lb) = a, b
    if sa == 0.0:
        return b
    if sb == 0.0:
        return a
    if la < lb:
        (sa, la), (sb, lb) = (sb, lb), (sa, la)
    r = math.exp(lb - la)
    if sa == sb:
        return sa, la + math.log1p(r)
    if r == 1.0:
        return 0.0, -math.inf
    return sa, la + math.log1p(-r)


def log_evaluate(e: Expr, x: float) -> tuple[float, float]:
    """(sign, log|value|) of ``e`` at ``x``, without underflow or overflow.

    Values that fit comfortably in a double are computed directly; the
    log representation only takes over for tiny or huge intermediates such
    as exp(-1/x^2) near 0.
    """
    try:
        v = evaluate(e, x)
        if v == 0.0 or _TINY < abs(v) < _HUGE:
            if v != 0.0 or not _may_underflow(e):
                return signed_log(v)
    except DomainError:
        if not _may_underflow(e):
            raise
    return _log_eval(e, x)


def _may_underflow(e: Expr) -> bool:
    if isinstance(e, (Exp, Flat0)):
        return True
    for child in _children(e):
        if _may_underflow(child):
            return True
    return False


def _children(e: Expr) -> tuple:
    if isinstance(e, (Add, Sub, Mul, Div)):
        return (e.left, e.right)
    if isinstance(e, PowConst):
        return (e.base,)
    if isinstance(e, (Neg, Exp, Log, Sin, Cos, Sqrt, Flat0)):
        return (e.arg,)
    return ()


def _log_eval(e: Expr, x: float) -> tuple[float, float]:
    if isinstance(e, Constant):
        return signed_log(e.value)
    if isinstance(e, Variable):
        return signed_log(float(x))
    if isinstance(e, Neg):
        s, l = _log_eval(e.arg, x)
        return -s, l
    if isinstance(e, Flat0):
        return (0.0, -math.inf) if x == 0.0 else _log_eval(e.arg, x)
    if isinstance(e, (Add, Sub)):
        a = _log_eval(e.left, x)
        sb, lb = _log_eval(e.right, x)
        return _log_add(a, (sb if isinstance(e, Add) else -sb, lb))
    if isinstance(e, Mul):
        (sa, la), (sb, lb) = _log_eval(e.left, x), _log_eval(e.right, x)
        if sa == 0.0 or sb == 0.0:
            return 0.0, -math.inf
        return sa * sb, la + lb
    if isinstance(e, Div):
        (sa, la), (sb, lb) = _log_eval(e.left, x), _log_eval(e.right, x)
        if sb == 0.0:
            raise DomainError("division by zero", to_source(e))
        if sa == 0.0:
            return 0.0, -math.inf
        return sa * sb, la - lb
    if isinstance(e, PowConst):
        s, l = _log_eval(e.base, x)
        r = e.exponent
        if s == 0.0:
            if r < 0:
                raise DomainError("division by zero", to_source(e))
            return 0.0, -math.inf
        if s < 0.0:
            if r.denominator != 1:
                raise DomainError("non-integer power of a non-positive base", to_source(e))
            return (-1.0 if r.numerator % 2 else 1.0), float(r) * l
        return 1.0, float(r) * l
    s, l = _log_eval(e.arg, x)
    if isinstance(e, Exp):
        # log|exp(u)| = u
        return 1.0, from_log(s, l)
    if isinstance(e, Log):
        if s <= 0.0:
            raise DomainError("log of a non-positive value", to_source(e))
        return signed_log(l)
    if isinstance(e, Sqrt):
        if s < 0.0:
            raise DomainError("sqrt of a negative value", to_source(e))
        return (0.0, -math.inf) if s == 0.0 else (1.0, 0.5 * l)
    u = from_log(s, l)
    if isinstance(e, Sin):
        if abs(u) < 1e-8:
            # sin(u) = u (1 - u^2/6) to double precision here
            return s, l + math.log1p(-u * u / 6.0)
        return signed_log(math.sin(u))
    if isinstance(e, Cos):
        return signed_log(math.cos(u))
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------- jets


class Jet:
    """Truncated Taylor series c_0 + c_1 h + ... + c_K h^K about ``base``.

    ``coeffs[k]`` is the k-th derivative divided by k!.
    """

    __slots__ = ("base", "coeffs")

    def __init__(self, base: float, coeffs):
        self.base = float(base)
        self.coeffs = np.asarray(coeffs, dtype=float)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def derivative(self, k: int) -> float:
        return float(self.coeffs[k] * math.factorial(k))

    def __repr__(self) -> str:
        return f"Jet(base={self.base!r}, coeffs={self.coeffs.tolist()!r})"

    def compose(self, outer: "Jet") -> "Jet":
        """Jet of ``outer`` after ``self``; ``outer`` must be based at ``self.coeffs[0]``."""
        K = min(self.order, outer.order)
        t = self.coeffs[: K + 1].copy()
        t[0] = 0.0
        out = np.zeros(K + 1)
        out[0] = outer.coeffs[K]
        for k in range(K - 1, -1, -1):
            out = series_mul(out, t)
            out[0] += outer.coeffs[k]
        return Jet(self.base, out)

    def revert(self) -> "Jet":
        """Jet of the local inverse map, based at the image point."""
        c = self.coeffs
        K = self.order
        if K == 0:
            return Jet(c[0], [self.base])
        if c[1] == 0.0:
            raise DomainError("non-invertible jet", repr(self))
        s = np.zeros(K + 1)
        s[1] = 1.0 / c[1]
        higher = c.copy()
        higher[0] = higher[1] = 0.0
        for _ in range(K):
            acc = np.zeros(K + 1)
            power = s.copy()
            for k in range(2, K + 1):
                power = series_mul(power, s)
                acc += higher[k] * power
            t = np.zeros(K + 1)
            t[1] = 1.0
            s = (t - acc) / c[1]
        s[0] = self.base
        return Jet(c[0], s)


def series_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Truncated product of two coefficient arrays of equal length."""
    return np.convolve(a, b)[: len(a)]


def _jet_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    K = len(a) - 1
    q = np.zeros(K + 1)
    for k in range(K + 1):
        q[k] = (a[k] - np.dot(b[1 : k + 1], q[k - 1 :: -1][:k])) / b[0]
    return q


def _jet_exp(a: np.ndarray) -> np.ndarray:
    K = len(a) - 1
    e = np.zeros(K + 1)
    e[0] = math.exp(a[0])
    j = np.arange(K + 1)
    for k in range(1, K + 1):
        e[k] = np.dot(j[1 : k + 1] * a[1 : k + 1], e[k - 1 :: -1][:k]) / k
    return e


def _jet_log(a: np.ndarray) -> np.ndarray:
    K = len(a) - 1
    out = np.zeros(K + 1)
    out[0] = math.log(a[0])
    j = np.arange(K + 1)
    for k in range(1, K + 1):
        s = np.dot(j[1:k] * out[1:k], a[k - 1 : 0 : -1]) if k > 1 else 0.0
        out[k] = (a[k] - s / k) / a[0]
    return out


def _jet_sincos(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    K = len(a) - 1
    s = np.zeros(K + 1)
    c = np.zeros(K + 1)
    s[0], c[0] = math.sin(a[0]), math.cos(a[0])
    j = np.arange(K + 1)
    for k in range(1, K + 1):
        w = j[1 : k + 1] * a[1 : k + 1]
        s[k] = np.dot(w, c[k - 1 :: -1][:k]) / k
        c[k] = -np.dot(w, s[k - 1 :: -1][:k]) / k
    return s, c


def _jet_pow(a: np.ndarray, r: Fraction, node: Expr) -> np.ndarray:
    K = len(a) - 1
    if r.denominator == 1 and r >= 0:
        out = np.zeros(K + 1)
        out[0] = 1.0
        base = a.copy()
        n = r.numerator
        while n:
            if n & 1:
                out = series_mul(out, base)
            n >>= 1
            if n:
                base = series_mul(base, base)
        return out
    if a[0] == 0.0:
        if r > 0 and K == 0:
            return np.zeros(1)
        raise DomainError("power is not smooth at a zero base", to_source(node))
    if r.denominator == 1:
        one = np.zeros(K + 1)
        one[0] = 1.0
        return _jet_div(one, _jet_pow(a, -r, node))
    if a[0] < 0.0:
        raise DomainError("non-integer power of a negative base", to_source(node))
    rf = float(r)
    p = np.zeros(K + 1)
    p[0] = a[0] ** rf
    for k in range(1, K + 1):
        j = np.arange(1, k + 1)
        p[k] = np.dot(((rf + 1.0) * j - k) * a[1 : k + 1], p[k - 1 :: -1][:k]) / (k * a[0])
    return p


def _jet_coeffs(e: Expr, a: float, K: int) -> np.ndarray:
    if isinstance(e, Constant):
        out = np.zeros(K + 1)
        out[0] = e.value
        return out
    if isinstance(e, Variable):
        out = np.zeros(K + 1)
        out[0] = a
        if K >= 1:
            out[1] = 1.0
        return out
    if isinstance(e, Neg):
        return -_jet_coeffs(e.arg, a, K)
    if isinstance(e, Flat0):
        return np.zeros(K + 1) if a == 0.0 else _jet_coeffs(e.arg, a, K)
    if isinstance(e, (Add, Sub, Mul, Div)):
        u = _jet_coeffs(e.left, a, K)
        v = _jet_coeffs(e.right, a, K)
        if isinstance(e, Add):
            return u + v
        if isinstance(e, Sub):
            return u - v
        if isinstance(e, Mul):
            return series_mul(u, v)
        if v[0] == 0.0:
            raise DomainError("division by zero", to_source(e))
        return _jet_div(u, v)
    if isinstance(e, PowConst):
        return _jet_pow(_jet_coeffs(e.base, a, K), e.exponent, e)
    u = _jet_coeffs(e.arg, a, K)
    if isinstance(e, Exp):
        try:
            return _jet_exp(u)
        except OverflowError:
            raise DomainError("overflow", to_source(e)) from None
    if isinstance(e, Log):
        if u[0] <= 0.0:
            raise DomainError("log of a non-positive value", to_source(e))
        return _jet_log(u)
    if isinstance(e, Sqrt):
        if u[0] < 0.0:
            raise DomainError("sqrt of a negative value", to_source(e))
        return _jet_pow(u, Fraction(1, 2), e)
    if isinstance(e, Sin):
        return _jet_sincos(u)[0]
    if isinstance(e, Cos):
        return _jet_sincos(u)[1]
    raise TypeError(f"not an expression node: {e!r}")


def eval_jet(e: Expr, a: float, K: int = DEFAULT_JET_ORDER) -> Jet:
    """Taylor coefficients of ``e`` at ``a`` through order ``K``."""
    if K < 0:
        raise ValueError("jet order must be non-negative")
    with np.errstate(over="raise", invalid="raise", divide="raise", under="ignore"):
        try:
            coeffs = _jet_coeffs(e, float(a), K)
        except FloatingPointError as exc:
            raise DomainError(f"floating point failure ({exc})", to_source(e)) from None
    return Jet(a, coeffs)


def derivative(e: Expr, x: float, k: int) -> float:
    """The k-th derivative of ``e`` at ``x``."""
    return eval_jet(e, x, k).derivative(k)


# ---------------------------------------------------------------- symbolic derivative


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Constant) and (value is None or e.value == value)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value + b.value)
    if isinstance(b, Neg):
        return _sub(a, b.arg)
    return Add(a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    if _is_const(a) and _is_const(b):
        return const(a.value - b.value)
    return Sub(a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Neg):
        return a.arg
    if _is_const(a, 0.0):
        return a
    return Neg(a)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return const(a.value * b.value)
    if isinstance(a, Neg):
        return _neg(_mul(a.arg, b))
    if isinstance(b, Neg):
        return _neg(_mul(a, b.arg))
    return Mul(a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return const(0.0)
    if _is_const(b, 1.0):
        return a
    return Div(a, b)


def _pow(base: Expr, r: Fraction) -> Expr:
    if r == 0:
        return const(1.0)
    if r == 1:
        return base
    return PowConst(base, r)


def differentiate(e: Expr) -> Expr:
    """Symbolic derivative with light constant folding."""
    if isinstance(e, Constant):
        return const(0.0)
    if isinstance(e, Variable):
        return const(1.0)
    if isinstance(e, Neg):
        return _neg(differentiate(e.arg))
    if isinstance(e, Add):
        return _add(differentiate(e.left), differentiate(e.right))
    if isinstance(e, Sub):
        return _sub(differentiate(e.left), differentiate(e.right))
    if isinstance(e, Mul):
        return _add(_mul(differentiate(e.left), e.right), _mul(e.left, differentiate(e.right)))
    if isinstance(e, Div):
        du, dv = differentiate(e.left), differentiate(e.right)
        first = _div(du, e.right)
        if _is_const(dv, 0.0):
            return first
        return _sub(first, _div(_mul(e.left, dv), _pow(e.right, Fraction(2))))
    if isinstance(e, PowConst):
        r = e.exponent
        inner = _mul(const(float(r)), _pow(e.base, r - 1))
        return _mul(inner, differentiate(e.base))
    du = differentiate(e.arg)
    if isinstance(e, Exp):
        return _mul(e, du)
    if isinstance(e, Log):
        return _div(du, e.arg)
    if isinstance(e, Sin):
        return _mul(Cos(e.arg), du)
    if isinstance(e, Cos):
        return _neg(_mul(Sin(e.arg), du))
    if isinstance(e, Sqrt):
        return _div(du, _mul(const(2.0), e))
    if isinstance(e, Flat0):
        return const(0.0) if _is_const(du, 0.0) else Flat0(du)
    raise TypeError(f"not an expression node: {e!r}")


def displacement_expr(e: Expr) -> Expr:
    """An expression for ``e(x) - x`` that avoids cancellation when possible.

    Maps written as ``x + E`` or ``x - E`` have displacement ``E`` or ``-E``;
    evaluating that directly keeps flat displacements such as exp(-1/x^2)
    from rounding to zero.
    """
    if isinstance(e, Add):
        if isinstance(e.left, Variable):
            return e.right
        if isinstance(e.right, Variable):
            return e.left
    if isinstance(e, Sub) and isinstance(e.left, Variable):
        return _neg(e.right)
    return Sub(e, X)


# ---------------------------------------------------------------- code generation


def _codegen(e: Expr, lib: str) -> str:
    if isinstance(e, Constant):
        return repr(e.value)
    if isinstance(e, Variable):
        return "x"
    if isinstance(e, Neg):
        return f"(-{_codegen(e.arg, lib)})"
    if isinstance(e, (Add, Sub, Mul, Div)):
        op = _BINARY_SYMBOLS[type(e)]
        return f"({_codegen(e.left, lib)} {op} {_codegen(e.right, lib)})"
    if isinstance(e, PowConst):
        base = _codegen(e.base, lib)
        r = e.exponent
        if r.denominator == 1:
            return f"({base} ** {r.numerator})"
        if lib == "math":
            return f"_math.pow({base}, {float(r)!r})"
        return f"_np.power({base}, {float(r)!r})"
    inner = _codegen(e.arg, lib)
    if isinstance(e, Flat0):
        if lib == "math":
            return f"(0.0 if x == 0.0 else {inner})"
        return f"_np.where(x == 0.0, 0.0, {inner})"
    name = _NODE_FUNCTIONS[type(e)]
    if lib == "math":
        return f"_math.{name}({inner})"
    return f"_np.{name}({inner})"


def compile_scalar(e: Expr) -> Callable[[float], float]:
    """A fast float -> float function; domain errors are re-raised by the tree walker."""
    code = f"def _fn(x):\n    return {_codegen(e, 'math')}\n"
    namespace: dict = {"_math": math}
    exec(compile(code, "<diffconj-expr>", "exec"), namespace)
    raw = namespace["_fn"]

    def fn(x: float) -> float:
        try:
            return float(raw(x))
        except (ValueError, ZeroDivisionError, OverflowError):
            return evaluate(e, x)

    fn.raw = raw
    return fn


def compile_vector(e: Expr) -> Callable[[np.ndarray], np.ndarray]:
    """A numpy ufunc-style evaluator; non-finite results are re-checked pointwise."""
    code = f"def _fn(x):\n    return {_codegen(e, 'np')}\n"
    namespace: dict = {"_np": np}
    exec(compile(code, "<diffconj-expr>", "exec"), namespace)
    raw = namespace["_fn"]

    def fn(xs, strict: bool = True) -> np.ndarray:
        """With ``strict=False`` points outside the domain give nan instead of raising."""
        xs = np.asarray(xs, dtype=float)
        with np.errstate(all="ignore"):
            out = np.broadcast_to(raw(xs), xs.shape).astype(float)
        bad = ~np.isfinite(out) & np.isfinite(xs)
        if bad.any():
            out = out.copy()
            for idx in zip(*np.nonzero(bad)):
                try:
                    out[idx] = evaluate(e, float(xs[idx]))
                except DomainError:
                    if strict:
                        raise
                    out[idx] = np.nan
        return out

    return fn
