"""Linearizing coordinates at hyperbolic fixed points and derived invariants.

At a fixed point p with multiplier m = f'(p) in (0, 1), the limit
alpha(x) = lim (f^n(x) - p) / m^n exists, has alpha'(p) = 1, and turns f
into multiplication by m.  Near p it is evaluated from its formal
series, so orbits only need to come moderately close to p.  Two such
coordinates at the ends of a compact gap give Robbin's modulus
gamma = beta o alpha^-1.  The Sternberg
iteration g^-n(lam * f^n(x)) builds conjugacies directly when both maps
share the multiplier.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.optimize import brentq, minimize_scalar

from .diffeo_model import Diffeo, DiffeoError, Gap, InverseBracketFailure
from .expr_core import DEFAULT_JET_ORDER, DomainError, series_mul
from .products import is_flat_end


class NotHyperbolic(DiffeoError):
    """The multiplier at the requested fixed point is 1."""


class FlatEnd(DiffeoError):
    """f - x is flat at the requested end."""


class NonConvergent(RuntimeError):
    """An iteration did not settle within its budget."""

    def __init__(self, message: str, trace: Optional[list] = None):
        super().__init__(message)
        self.trace = trace or []


# ---------------------------------------------------------------- Sternberg iteration


@dataclass
class SternbergResult:
    x: float
    value: float
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)
    reason: str = ""

    @property
    def status(self) -> str:
        return "Converged" if self.converged else "NonConvergent"


def _forward_toward(d: Diffeo, x: float, p: float) -> tuple:
    """Steps (toward p, away from p) for a point in a gap ending at p."""
    gap = d.gap_containing(x)
    if gap.attracting_end == p:
        return d.__call__, d.inverse
    if gap.repelling_end == p:
        return d.inverse, d.__call__
    raise DiffeoError(f"{p!r} is not an end of the gap containing {x!r}")


def sternberg_iterate(f: Diffeo, g: Diffeo, lam: float, x: float, n_max: int = 200, tol: float = 1e-12,
                      endpoint: float = 0.0, quiet_run: int = 3, blowup: float = 1e12) -> SternbergResult:
    """h_n(x) = G^-n(p + lam (F^n(x) - p)), with F, G the steps toward p.

    For maps attracted to p this is the usual g^-n o lam o f^n; for maps
    repelled from p the roles of the maps and their inverses swap.  The
    iteration stops once successive values agree within ``tol`` for
    ``quiet_run`` steps; values leaving the domain or growing beyond
    ``blowup`` are reported as non-convergent.
    """
    f_in, _ = _forward_toward(f, x, endpoint)
    g_probe = endpoint + lam * (x - endpoint)
    g_in, g_out = _forward_toward(g, g_probe, endpoint)
    trace: list[tuple[int, float]] = []
    y = x
    prev = math.nan
    quiet = 0
    for n in range(1, n_max + 1):
        y = f_in(y)
        z = endpoint + lam * (y - endpoint)
        try:
            for _ in range(n):
                z = g_out(z)
                if not math.isfinite(z) or abs(z) > blowup or not g.domain.contains(z):
                    raise OverflowError
        except (OverflowError, InverseBracketFailure, DomainError, ValueError):
            trace.append((n, math.inf))
            return SternbergResult(x, math.nan, False, n, trace, "iterate left the domain")
        trace.append((n, z))
        if abs(z - prev) <= tol * max(1.0, abs(z)):
            quiet += 1
            if quiet >= quiet_run:
                return SternbergResult(x, z, True, n, trace)
        else:
            quiet = 0
        prev = z
    return SternbergResult(x, prev, False, n_max, trace, "no Cauchy convergence within the budget")


def sternberg_map(f: Diffeo, g: Diffeo, lam: float, xs, n: int, endpoint: float = 0.0) -> np.ndarray:
    """h_n on an array for a fixed n (maps attracted to ``endpoint``)."""
    y = np.asarray(xs, dtype=float).copy()
    for _ in range(n):
        y = f.vec(y)
    z = endpoint + lam * (y - endpoint)
    for _ in range(n):
        z = g.inverse_vec(z)
    return z


# ---------------------------------------------------------------- linearizers


def multiplier_at(d: Diffeo, p: float) -> float:
    return float(d.deriv(p))


def koenigs_series(f: Diffeo, p: float, order: int = DEFAULT_JET_ORDER) -> np.ndarray:
    """Coefficients b (b[1] = 1) of the formal solution of alpha(f(z)) = m alpha(z).

    ``f`` is expanded about p; alpha(p + z) = sum b_k z^k.
    """
    c = np.array(f.jet(p, order).coeffs, dtype=float)
    c[0] = 0.0
    m = c[1]
    b = np.zeros(order + 1)
    b[1] = 1.0
    # powers[j] = (f(p+z) - p)^j truncated
    powers = [np.zeros(order + 1), c.copy()]
    for j in range(2, order + 1):
        powers.append(series_mul(powers[-1], c)[: order + 1])
    for k in range(2, order + 1):
        lower = sum(b[j] * powers[j][k] for j in range(1, k))
        b[k] = -lower / (m**k - m)
    return b


def _series_radius(b: np.ndarray, tol: float) -> float:
    """Radius where the dropped terms of the series are below ``tol`` relative.

    The size of the first dropped term is judged from the last two kept ones.
    """
    radius = 0.1
    for k in (len(b) - 2, len(b) - 1):
        if b[k] != 0.0:
            radius = min(radius, (tol / abs(b[k])) ** (1.0 / (k - 1)))
    return radius


def _limit_array(step, xs: np.ndarray, p: float, scale: float, series: np.ndarray, tol: float,
                 n_max: int) -> tuple[np.ndarray, int]:
    """alpha(x) = scale^n * alpha(step^n(x)), with alpha near p from its series.

    Each point is iterated until it is inside the series radius, then one
    step further as a Cauchy check.
    """
    radius = _series_radius(series, tol)
    y = np.asarray(xs, dtype=float).copy()
    factor = np.ones_like(y)
    steps = 0
    while True:
        far = np.abs(y - p) > radius
        if not far.any():
            break
        steps += 1
        if steps > n_max:
            raise NonConvergent(f"orbits did not reach the series radius {radius:.3g} in {n_max} steps")
        y[far] = step(y[far])
        factor[far] *= scale
    values = factor * np.polynomial.polynomial.polyval(y - p, series)
    check = factor * scale * np.polynomial.polynomial.polyval(step(y) - p, series)
    change = float(np.max(np.abs(check - values) / np.maximum(np.abs(values), 1e-300)))
    if change > max(100.0 * tol, 1e-12):
        raise NonConvergent(f"linearizer changes by {change:.3g} after one more step")
    return values, steps


@dataclass
class LinearizerGrid:
    """Samples of the linearizing coordinate at a hyperbolic fixed point."""

    endpoint: float
    multiplier: float
    xs: np.ndarray
    values: np.ndarray
    iterations: int
    residual: float

    def __call__(self, x):
        return PchipInterpolator(self.xs, self.values)(x)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "alpha"])
            for x, v in zip(self.xs, self.values):
                w.writerow([repr(float(x)), repr(float(v))])


def linearizer_values(f: Diffeo, p: float, xs, tol: float = 1e-13, n_max: int = 5000) -> tuple[np.ndarray, int]:
    """alpha_f at the points ``xs`` (all in one gap ending at p)."""
    m = multiplier_at(f, p)
    if not m > 0:
        raise DiffeoError("linearizers are defined for orientation-preserving maps")
    if abs(m - 1.0) < 1e-12:
        raise NotHyperbolic(f"multiplier at {p!r} is 1")
    xs = np.asarray(xs, dtype=float)
    series = koenigs_series(f, p)
    if m < 1.0:
        return _limit_array(f.vec, xs, p, 1.0 / m, series, tol, n_max)
    return _limit_array(f.inverse_vec, xs, p, m, series, tol, n_max)


def linearizer(f: Diffeo, p: float, window: tuple[float, float], tol: float = 1e-10, samples: int = 201,
               n_max: int = 5000) -> LinearizerGrid:
    """alpha_f on ``window`` with alpha(f(x)) = f'(p) alpha(x) and alpha'(p) = 1."""
    lo, hi = window
    xs = np.linspace(lo, hi, samples)
    values, n = linearizer_values(f, p, xs, min(tol, 1e-13), n_max)
    m = multiplier_at(f, p)
    # Functional equation on points whose image stays in the window.
    fx = f.vec(xs)
    keep = (fx >= lo) & (fx <= hi)
    residual = 0.0
    if keep.any():
        img, _ = linearizer_values(f, p, fx[keep], min(tol, 1e-13), n_max)
        residual = float(np.max(np.abs(img - m * values[keep])))
    diffs = np.diff(values)
    if not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise NonConvergent("linearizer samples are not strictly monotone")
    if residual > tol * max(1.0, float(np.max(np.abs(values)))):
        raise NonConvergent(f"functional equation residual {residual:.3g} exceeds {tol:.3g}")
    return LinearizerGrid(p, m, xs, values, n, residual)


# ---------------------------------------------------------------- Robbin modulus


@dataclass
class Modulus:
    """gamma = beta o alpha^-1 sampled over one period in log coordinates.

    alpha linearizes at the attracting end c (multiplier m_c < 1) and beta
    at the repelling end d (m_d > 1).  With s = log|alpha|,
    log|gamma| = k s + P(s) where k = log m_d / log m_c and P has period
    |log m_c|; P is stored on a uniform grid of one period.
    """

    gap: Gap
    attracting_multiplier: float
    repelling_multiplier: float
    t: np.ndarray
    gamma: np.ndarray
    period: float
    periodic_part: np.ndarray

    @property
    def slope(self) -> float:
        return math.log(self.repelling_multiplier) / math.log(self.attracting_multiplier)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "gamma"])
            for t, v in zip(self.t, self.gamma):
                w.writerow([repr(float(t)), repr(float(v))])


def robbin_modulus(f: Diffeo, gap: Gap, samples: int = 256, tol: float = 1e-13) -> Modulus:
    """Modulus of f on a compact gap whose ends are both hyperbolic."""
    if gap.kind != "compact":
        raise DiffeoError("the modulus needs a compact gap")
    c, d = gap.attracting_end, gap.repelling_end
    mc, md = multiplier_at(f, c), multiplier_at(f, d)
    for p, m in ((c, mc), (d, md)):
        if abs(m - 1.0) < 1e-12:
            raise NotHyperbolic(f"end {p!r} has multiplier 1; use the product and smoothness checks")
    # One fundamental domain in the middle of the gap.
    x0 = 0.5 * (gap.lower + gap.upper)
    x1 = f(x0)
    xs = np.linspace(min(x0, x1), max(x0, x1), samples + 1)
    alpha, _ = linearizer_values(f, c, xs, tol)
    beta, _ = linearizer_values(f, d, xs, tol)
    order = np.argsort(np.abs(alpha))
    t, gamma = np.abs(alpha[order]), beta[order]
    period = abs(math.log(mc))
    s = np.log(t)
    k = math.log(md) / math.log(mc)
    p = np.log(np.abs(gamma)) - k * s
    # Resample P on a uniform periodic grid.
    s0 = s[0]
    grid = s0 + period * np.arange(samples) / samples
    spline = CubicSpline(s, p)
    periodic = spline(grid)
    return Modulus(gap, mc, md, t, gamma, period, periodic)


@dataclass
class ModulusComparison:
    equal: bool
    distance: float
    shift: float
    offset: float
    reason: str = ""


def modulus_equal(gf: Modulus, gg: Modulus, tol: float = 1e-8) -> ModulusComparison:
    """Decide gamma_g(t) = gamma_f(A t) / B for some A, B > 0.

    In log coordinates that is P_g(s) = P_f(s + a) - b, so the periodic
    parts are compared up to a shift and an additive constant.
    """
    for name in ("attracting_multiplier", "repelling_multiplier"):
        mf, mg = getattr(gf, name), getattr(gg, name)
        if abs(mf - mg) > tol * max(1.0, abs(mf)):
            return ModulusComparison(False, abs(mf - mg), 0.0, 0.0, f"{name.replace('_', ' ')}s differ")
    n = len(gf.periodic_part)
    period = gf.period
    pf = np.concatenate([gf.periodic_part, gf.periodic_part[:1]])
    pf_spline = CubicSpline(np.linspace(0.0, period, n + 1), pf - 0.0, bc_type="periodic") if n > 2 else None
    pg = gg.periodic_part
    grid = np.arange(len(pg)) * period / len(pg)

    def spread(shift: float) -> float:
        vals = pf_spline((grid + shift) % period) if pf_spline is not None else np.full_like(grid, pf[0])
        diff = pg - vals
        return 0.5 * float(np.max(diff) - np.min(diff))

    coarse = np.linspace(0.0, period, 97)[:-1]
    scores = [spread(a) for a in coarse]
    i = int(np.argmin(scores))
    step = period / 96
    res = minimize_scalar(spread, bounds=(coarse[i] - step, coarse[i] + step), method="bounded",
                          options={"xatol": 1e-12 * period})
    best_shift, best = float(res.x) % period, float(res.fun)
    if scores[i] < best:
        best_shift, best = float(coarse[i]), scores[i]
    vals = pf_spline((grid + best_shift) % period) if pf_spline is not None else np.full_like(grid, pf[0])
    offset = float(np.mean(pg - vals))
    return ModulusComparison(best <= tol, best, best_shift, offset)


def modulus_symmetry(g: Modulus, tol: float = 1e-8, max_order: int = 12) -> int:
    """Largest k such that P has period period/k (1 for a generic P).

    A flowable map has constant P; that case returns 0, meaning every
    shift is a symmetry.
    """
    p = g.periodic_part
    if float(np.ptp(p)) <= tol:
        return 0
    n = len(p)
    pts = np.concatenate([p, p[:1]])
    spline = CubicSpline(np.linspace(0.0, g.period, n + 1), pts, bc_type="periodic")
    grid = np.arange(n) * g.period / n
    best = 1
    for k in range(2, max_order + 1):
        shifted = spline((grid + g.period / k) % g.period)
        if float(np.max(np.abs(shifted - p))) <= tol:
            best = k
    return best


def matching_base_point(f: Diffeo, g: Diffeo, gf: Modulus, gg: Modulus, cmp: ModulusComparison,
                        a: float, tol: float = 1e-13) -> float:
    """A point alpha in g's gap with h(a) = alpha for a conjugacy h read off the moduli.

    The conjugacy satisfies alpha_g(h(x)) = A alpha_f(x) where log A is
    fixed modulo the period by the shift found in ``cmp``.
    """
    c_f, c_g = gf.gap.attracting_end, gg.gap.attracting_end
    log_a = math.log(gg.t[0]) - math.log(gf.t[0]) - cmp.shift
    af, _ = linearizer_values(f, c_f, np.array([a]), tol)
    target = math.log(abs(float(af[0]))) + log_a
    y0 = 0.5 * (gg.gap.lower + gg.gap.upper)
    y1 = g(y0)
    ends = np.array([y0, y1])
    vals, _ = linearizer_values(g, c_g, ends, tol)
    lo_log, hi_log = sorted(np.log(np.abs(vals)))
    # Any representative of log A modulo the period gives a conjugacy.
    target = lo_log + (target - lo_log) % gf.period

    def excess(y: float) -> float:
        v, _ = linearizer_values(g, c_g, np.array([y]), tol)
        return math.log(abs(float(v[0]))) - target

    lo, hi = sorted((y0, y1))
    return float(brentq(excess, lo, hi, xtol=1e-15 * max(1.0, abs(hi)), rtol=1e-15))


# ---------------------------------------------------------------- conventional multipliers


@dataclass
class ConventionalMultiplier:
    """u(x) = lim (f^n(x) - f^n(a)) / (f^(n+1)(a) - f^n(a)) on a grid."""

    a: float
    direction: str
    xs: np.ndarray
    values: np.ndarray
    error: np.ndarray
    levels: int

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "u", "error_estimate"])
            for x, v, e in zip(self.xs, self.values, self.error):
                w.writerow([repr(float(x)), repr(float(v)), repr(float(e))])


def _richardson(seq: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Extrapolate values at n = n0 * 2^j to n = inf assuming powers of 1/n."""
    table = [np.asarray(v, dtype=float) for v in seq]
    best = table[-1]
    err = np.full_like(best, np.inf)
    row = table
    level = 0
    while len(row) > 1:
        level += 1
        factor = 2.0**level
        row = [(factor * row[j + 1] - row[j]) / (factor - 1.0) for j in range(len(row) - 1)]
        new_err = np.abs(row[-1] - best)
        better = new_err < err
        err = np.where(better, new_err, err)
        best = np.where(better, row[-1], best)
    return best, err


def conventional_multiplier(f: Diffeo, a: float, xs, direction: str = "+", levels: int = 12,
                            start: int = 8, tol: float = 1e-8) -> ConventionalMultiplier:
    """u_+ (forward orbits) or u_- (backward orbits) sampled at ``xs``.

    Orbits toward a non-hyperbolic end converge like 1/n, so the ratios at
    n = start * 2^j are extrapolated (Richardson).  The reported error is
    the last change of the extrapolation, not a bound.
    """
    if direction not in ("+", "-"):
        raise ValueError("direction must be '+' or '-'")
    d = f if direction == "+" else f.inverted()
    gap = d.gap_containing(a)
    end = gap.attracting_end
    if is_flat_end(d, end, a):
        raise FlatEnd(f"f - x is flat at {end!r}; the limits need a non-flat end")
    xs = np.asarray(xs, dtype=float)
    pts = np.concatenate([xs, [a]])
    checkpoints = {start * 2**j for j in range(levels)}
    last = max(checkpoints)
    seq = []
    for n in range(1, last + 1):
        pts = d.vec(pts)
        if n in checkpoints:
            fa = pts[-1]
            fa_next = d(float(fa))
            seq.append((pts[:-1] - fa) / (fa_next - fa))
    values, err = _richardson(seq)
    if np.any(~np.isfinite(values)):
        raise NonConvergent("orbit reached the end before the ratios settled")
    return ConventionalMultiplier(a, direction, xs, values, err, levels)
