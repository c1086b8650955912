"""Shooting construction of conjugating maps on a gap.

For maps f, g whose forward orbits run toward the end d of their gaps, a
conjugacy phi (with g o phi = phi o f) through (a, alpha) solves

    phi'(x) = lam * H1(x, phi(x)),    phi(a) = alpha,

where H1 is the one-sided derivative-ratio product.  The product factors
as H1(a, alpha) * F(x) / G(phi), with F, G the self-products of f and g
based at a and alpha.  F and G are tabulated once on a few fundamental
domains with a shared truncation, and the shooting parameter is the slope
phi'(a).  The one value of lam for which phi(f(a)) = g(alpha) gives a map
that extends to the whole gap by phi(f(x)) = g(phi(x)).

Truncating both products after N factors gives exactly
g^-N o A o f^N, where A is the secant through the N-th images of the
fundamental domain, so moderate N already gives small errors.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.optimize import brentq

from .diffeo_model import Diffeo, DiffeoError, Gap, InverseBracketFailure
from .expr_core import DomainError
from .products import (choose_terms, extrapolated_log, h1, is_flat_end, log_flow_speed, log_flow_speed_vec,
                       orbit_log_sums)

_EPS = np.finfo(float).eps


class SolverError(RuntimeError):
    pass


class BracketFailure(SolverError):
    pass


class StepBudgetExceeded(SolverError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    nodes_per_domain: int = 201
    max_terms: int = 4000
    term_tol: float = 1e-14
    rtol: float = 1e-10
    atol: float = 1e-13
    shoot_rtol: float = 1e-10
    max_bisections: int = 200
    step_budget: int = 10**6
    # Longer scalar product used only to report lam = phi'(a) / H1(a, alpha).
    lambda_terms: int = 50_000
    # Flat pairs: orbits run until |f' - 1| drops below this, then the flow
    # asymptotics supply the tail.
    flat_slope_tol: float = 1e-4


DEFAULT_OPTIONS = SolverOptions()


# ---------------------------------------------------------------- product tables


def _orient(d: Diffeo, base: float) -> tuple[Gap, float]:
    gap = d.gap_containing(base)
    width = base - d(base)
    if width == 0.0:
        raise SolverError(f"{base!r} is a fixed point")
    return gap, width


@dataclass
class ProductTable:
    """log of the one-sided self-product s |-> log F_base(base - width*s).

    Nodes cover s in [lo, hi], a few fundamental domains around the base
    domain [0, 1].  ``base_sum`` is the truncated raw sum of log f' along the
    base orbit, needed to assemble H1(a, alpha).
    """

    diffeo: Diffeo
    base: float
    width: float
    s: np.ndarray
    logs: np.ndarray
    terms: int
    base_sum: float
    spline: CubicSpline = field(repr=False)

    @property
    def lo(self) -> float:
        return float(self.s[0])

    @property
    def hi(self) -> float:
        return float(self.s[-1])

    def log_at_s(self, s: float) -> float:
        return float(self.spline(s))

    def log_at_x(self, x: float) -> float:
        return float(self.spline((self.base - x) / self.width))


def _domain_nodes(d: Diffeo, base: float, width: float, back: int, ahead: int, per_domain: int) -> np.ndarray:
    """Local coordinates of points spread over fundamental domains
    f^-back(base) .. f^(ahead)(base), uniform within each domain."""
    edges = [base]
    x = base
    for _ in range(back):
        # Maps that are not onto (x/(1+x) on [0, inf)) lose backward domains.
        try:
            x = d.inverse(x)
        except (InverseBracketFailure, DomainError):
            break
        if not d.domain.contains(x) or abs(x - base) > 1e3 * abs(width):
            break
        edges.insert(0, x)
    x = base
    for _ in range(ahead):
        x = d(x)
        edges.append(x)
    s_edges = [(base - e) / width for e in edges]
    pieces = [np.linspace(s0, s1, per_domain)[:-1] for s0, s1 in zip(s_edges[:-1], s_edges[1:])]
    pieces.append(np.array([s_edges[-1]]))
    return np.concatenate(pieces)


def build_table(d: Diffeo, base: float, terms: int, back: int, ahead: int, per_domain: int,
                flat: bool = False) -> ProductTable:
    _, width = _orient(d, base)
    s = _domain_nodes(d, base, width, back, ahead, per_domain)
    xs = base - width * s
    sums, finals = orbit_log_sums(d, np.append(xs, base), terms)
    if flat:
        sums = sums - log_flow_speed_vec(d, finals)
    logs = sums[:-1] - sums[-1]
    return ProductTable(d, base, width, s, logs, terms, float(sums[-1]), CubicSpline(s, logs))


def _probe_points(d: Diffeo, base: float) -> list[float]:
    pts = [d(d(base))]
    try:
        back = d.inverse(base)
        if d.domain.contains(back) and abs(back - base) <= 1e3 * abs(base - d(base)):
            pts.append(back)
    except (InverseBracketFailure, DomainError):
        pass
    return pts


def common_terms(f: Diffeo, a: float, g: Diffeo, alpha: float, options: SolverOptions) -> int:
    nf, _, _ = choose_terms(f, _probe_points(f, a), a, options.term_tol, options.max_terms)
    ng, _, _ = choose_terms(g, _probe_points(g, alpha), alpha, options.term_tol, options.max_terms)
    return max(nf, ng)


def flat_terms(F: Diffeo, a: float, G: Diffeo, alpha: float, options: SolverOptions) -> int:
    """Steps after which both base orbits sit where the flow asymptotics are sharp."""
    x, xi = a, alpha
    for n in range(options.max_terms):
        if abs(F.deriv(x) - 1.0) < options.flat_slope_tol and abs(G.deriv(xi) - 1.0) < options.flat_slope_tol:
            return n
        x, xi = F(x), G(xi)
    return options.max_terms


_TABLE_CACHE: dict[tuple, ProductTable] = {}


def cached_table(d: Diffeo, base: float, terms: int, back: int, ahead: int, per_domain: int,
                 flat: bool = False) -> ProductTable:
    key = (d.key(), base, terms, back, ahead, per_domain, flat)
    table = _TABLE_CACHE.get(key)
    if table is None:
        table = build_table(d, base, terms, back, ahead, per_domain, flat)
        if len(_TABLE_CACHE) > 64:
            _TABLE_CACHE.clear()
        _TABLE_CACHE[key] = table
    return table


class _SelfShifted:
    """G table for a self-pair: G_alpha(xi) = F_a(xi) / F_a(alpha)."""

    def __init__(self, table: ProductTable, alpha: float, width: float):
        self.table = table
        self.alpha = alpha
        self.width = width
        self.offset = table.log_at_x(alpha)
        # Local u-range where the shared table is valid.
        u_a = (alpha - (table.base - table.width * table.s[0])) / width
        u_b = (alpha - (table.base - table.width * table.s[-1])) / width
        self.lo, self.hi = sorted((u_a, u_b))

    def log_at_u(self, u: float) -> float:
        return self.table.log_at_x(self.alpha - self.width * u) - self.offset


class _TableInU:
    def __init__(self, table: ProductTable):
        self.table = table
        self.lo, self.hi = table.lo, table.hi

    def log_at_u(self, u: float) -> float:
        return float(self.table.spline(u))


# ---------------------------------------------------------------- conjugacy maps


@dataclass
class ConjugacyMap:
    """Candidate conjugacy phi with G o phi = phi o F on one gap.

    ``F`` and ``G`` are the maps the ODE was solved for (the inverses of the
    user's maps for a backward solution).  Samples are stored on a window of
    fundamental domains around [F(a), a] in the local coordinates
    s = (a - x)/w and u = (alpha - phi)/w_g; values on the base domain plus
    the rule phi(F(x)) = G(phi(x)) define phi on the whole gap.
    """

    F: Diffeo
    G: Diffeo
    gap: Gap
    a: float
    alpha: float
    width: float
    width_g: float
    lam: float
    slope_at_base: float
    s: np.ndarray
    u: np.ndarray
    du: np.ndarray
    mismatch: float
    terms: int
    direction: str = "plus"
    residual: float = math.nan
    overlap_error: float = math.nan
    step_budget: int = 10**6
    smoothness: list = field(default_factory=list)
    continuation: Optional["FlatContinuation"] = None

    def __post_init__(self):
        self._rebuild()

    def _rebuild(self) -> None:
        self._interp = CubicHermiteSpline(self.s, self.u, self.du)

    @property
    def mu(self) -> Optional[float]:
        return self.lam if self.direction == "minus" else None

    @property
    def endpoint(self) -> float:
        return self.gap.attracting_end

    def perturbed(self, index: int, delta: float) -> "ConjugacyMap":
        """Copy with one sample of phi moved by ``delta`` (in x units)."""
        u = self.u.copy()
        u[index] -= delta / self.width_g
        return replace(self, u=u, residual=math.nan)

    # direct evaluation on the sample window
    def window(self) -> tuple[float, float]:
        xs = sorted((self.a - self.width * self.s[0], self.a - self.width * self.s[-1]))
        return xs[0], xs[1]

    def direct(self, xs) -> np.ndarray:
        s = (self.a - np.asarray(xs, dtype=float)) / self.width
        return self.alpha - self.width_g * self._interp(s)

    def direct_slope(self, xs) -> np.ndarray:
        s = (self.a - np.asarray(xs, dtype=float)) / self.width
        return self._interp(s, 1) * self.width_g / self.width

    # evaluation on the whole gap
    def _base_bounds(self) -> tuple[float, float]:
        fa = self.a - self.width
        return (min(fa, self.a), max(fa, self.a))

    def __call__(self, x: float) -> float:
        return float(self.evaluate(np.array([x]))[0])

    def evaluate(self, xs, budget: Optional[int] = None) -> np.ndarray:
        """phi on arbitrary points of the gap via the extension rule."""
        budget = self.step_budget if budget is None else budget
        xs = np.asarray(xs, dtype=float)
        if self.continuation is not None:
            start = self.continuation.a
            deep = (xs < start) if self.width > 0 else (xs > start)
            if deep.any():
                out = np.empty(xs.shape)
                out[deep] = self.continuation.evaluate(xs[deep])
                rest = ~deep
                if rest.any():
                    out[rest] = self._extend(xs[rest], budget)
                return out
        return self._extend(xs, budget)

    def _extend(self, xs: np.ndarray, budget: int) -> np.ndarray:
        flat = xs.ravel().copy()
        lo, hi = self._base_bounds()
        toward_d_is_low = self.width > 0
        k = np.zeros(len(flat), dtype=np.int64)
        y = flat.copy()
        for _ in range(budget + 1):
            below, above = y < lo, y > hi
            # Points between the base domain and d are pulled back with F^-1.
            back = below if toward_d_is_low else above
            fwd = above if toward_d_is_low else below
            if not (back.any() or fwd.any()):
                break
            if back.any():
                y[back] = self.F.inverse_vec(y[back])
                k[back] -= 1
            if fwd.any():
                y[fwd] = self.F.vec(y[fwd])
                k[fwd] += 1
        else:
            raise StepBudgetExceeded(f"more than {budget} steps to reach the base domain")
        # y = F^k(x) and phi(x) = G^-k(phi(y)).
        out = self.direct(y)
        kmax = int(np.max(np.abs(k))) if len(k) else 0
        for step in range(kmax):
            pos = k > step
            neg = -k > step
            if pos.any():
                out[pos] = self.G.inverse_vec(out[pos])
            if neg.any():
                out[neg] = self.G.vec(out[neg])
        return out.reshape(xs.shape)

    def reach(self, distance_budget: int) -> float:
        """Closest distance to the end d reachable within the step budget."""
        if self.continuation is not None:
            return 0.0
        x = self.a
        for _ in range(distance_budget):
            nxt = self.F(x)
            if nxt == x:
                break
            x = nxt
        return float(self.gap.distance_to(x, self.endpoint))

    # export
    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.a - self.width * self.s
        phis = self.alpha - self.width_g * self.u
        order = np.argsort(xs)
        return xs[order], phis[order]

    def sidecar(self) -> dict:
        return {
            "a": self.a,
            "alpha": self.alpha,
            "direction": self.direction,
            "lambda": self.lam if self.direction == "plus" else None,
            "mu": self.mu,
            "residual": self.residual,
            "overlap_error": self.overlap_error,
            "shooting_mismatch": self.mismatch,
            "terms": self.terms,
            "flat_end": self.continuation is not None,
            "smoothness": [s.to_dict() for s in self.smoothness],
        }

    def write(self, csv_path, json_path=None) -> None:
        xs, phis = self.samples()
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "phi"])
            for x, p in zip(xs, phis):
                w.writerow([repr(float(x)), repr(float(p))])
        if json_path is not None:
            with open(json_path, "w") as fh:
                json.dump(self.sidecar(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------- shooting


@dataclass
class _Problem:
    F: Diffeo
    G: Diffeo
    gap: Gap
    a: float
    alpha: float
    width: float
    width_g: float
    ftab: ProductTable
    gtab: object
    log_h1_base: float
    terms: int
    options: SolverOptions
    flat: bool = False

    def rhs_factor(self) -> float:
        """kappa per unit lam: du/ds = kappa F/G with kappa = lam*H1(a,alpha)*w/w_g."""
        return math.exp(self.log_h1_base) * self.width / self.width_g

    def integrate(self, kappa: float, s_end: float, dense: bool = False):
        ftab, gtab = self.ftab, self.gtab

        def rhs(s, u):
            return [kappa * math.exp(min(ftab.log_at_s(s) - gtab.log_at_u(u[0]), 700.0))]

        # u is monotone in s, so it can only leave the table through the end it moves toward.
        def leave(s, u):
            return u[0] - (gtab.hi if s_end > 0 else gtab.lo)

        leave.terminal = True
        return solve_ivp(rhs, (0.0, s_end), [0.0], method="DOP853", rtol=self.options.rtol,
                         atol=self.options.atol, events=leave, dense_output=dense)

    def mismatch(self, kappa: float) -> float:
        """u(1) - 1, or a surrogate that keeps growing with kappa once the
        solution leaves the tabulated range."""
        sol = self.integrate(kappa, 1.0)
        if sol.status == 1:
            s_exit = float(sol.t[-1])
            return (self.gtab.hi - 1.0) + (1.0 - s_exit)
        return float(sol.y[0, -1]) - 1.0


def _problem(F: Diffeo, G: Diffeo, a: float, alpha: float, options: SolverOptions) -> _Problem:
    gap, width = _orient(F, a)
    gap_g, width_g = _orient(G, alpha)
    if (width > 0) != (width_g > 0):
        raise SolverError("the maps move points in opposite directions")
    flat = is_flat_end(F, gap.attracting_end, a) and is_flat_end(G, gap_g.attracting_end, alpha)
    terms = flat_terms(F, a, G, alpha, options) if flat else common_terms(F, a, G, alpha, options)
    per = options.nodes_per_domain
    if F is G:
        ftab = cached_table(F, a, terms, 3, 4, per, flat)
        gtab = _SelfShifted(ftab, alpha, width_g)
        g_base_sum, g_final = orbit_log_sums(G, np.array([alpha]), terms)
        if flat:
            g_base_sum = g_base_sum - log_flow_speed_vec(G, g_final)
        log_h1 = ftab.base_sum - float(g_base_sum[0])
    else:
        ftab = cached_table(F, a, terms, 1, 2, per, flat)
        gtab_raw = cached_table(G, alpha, terms, 2, 3, per, flat)
        gtab = _TableInU(gtab_raw)
        log_h1 = ftab.base_sum - gtab_raw.base_sum
    return _Problem(F, G, gap, a, alpha, width, width_g, ftab, gtab, log_h1, terms, options, flat)


def _build_map(problem: _Problem, kappa: float, mismatch: float, direction: str) -> ConjugacyMap:
    opts = problem.options
    s_lo, s_hi = problem.ftab.lo, problem.ftab.hi
    up = problem.integrate(kappa, s_hi, dense=True)
    down = problem.integrate(kappa, s_lo, dense=True)
    if up.status == 1 or down.status == 1:
        # Restrict the window to where the solution stayed in range.
        s_hi = min(s_hi, float(up.t[-1]))
        s_lo = max(s_lo, float(down.t[-1]))
    nodes = problem.ftab.s
    nodes = nodes[(nodes >= s_lo) & (nodes <= s_hi)]
    u = np.where(nodes >= 0.0, up.sol(np.clip(nodes, 0.0, None))[0] if up.sol else 0.0,
                 down.sol(np.clip(nodes, None, 0.0))[0] if down.sol else 0.0)
    logs_f = np.array([problem.ftab.log_at_s(s) for s in nodes])
    logs_g = np.array([problem.gtab.log_at_u(v) for v in u])
    du = kappa * np.exp(logs_f - logs_g)
    slope = kappa * problem.width_g / problem.width
    continuation = None
    if problem.flat:
        # Start where the asymptotics are sharp: phi(F^N a) = G^N(alpha).
        sums_f, xs_n = orbit_log_sums(problem.F, np.array([problem.a]), problem.terms)
        sums_g, xis_n = orbit_log_sums(problem.G, np.array([problem.alpha]), problem.terms)
        start_slope = slope * math.exp(float(sums_g[0] - sums_f[0]))
        continuation = FlatContinuation(problem.F, problem.G, problem.gap, float(xs_n[0]), float(xis_n[0]),
                                        start_slope)
        lam = math.nan
    else:
        lam = _endpoint_slope(problem, slope)
    phi = ConjugacyMap(problem.F, problem.G, problem.gap, problem.a, problem.alpha, problem.width,
                       problem.width_g, lam, slope, nodes, u, du, mismatch, problem.terms, direction,
                       step_budget=opts.step_budget, continuation=continuation)
    if continuation is not None:
        # Slopes from the ODE lose digits deep in the flat zone; fitted ones do not.
        phi.lam = probe_smoothness(phi, orders=1).order(1).limit
        phi.smoothness = []
    phi.overlap_error = overlap_error(phi)
    phi.residual = verify_residual(phi)
    return phi


class FlatContinuation:
    """phi between the base point and a flat end.

    For a flat pair the conjugacy ODE keeps the form
    phi'(x) = C v_G(phi) / v_F(x) all the way to the end, with v the
    vector fields of the flow asymptotics and C fixed by phi'(a).  The
    equation contracts strongly toward the end, so an implicit method
    follows it with steps on the scale of the distance to the end.
    """

    def __init__(self, F: Diffeo, G: Diffeo, gap: Gap, a: float, alpha: float, slope_at_base: float,
                 rtol: float = 1e-12):
        # (a, alpha) is any point of the graph of phi, with slope_at_base = phi'(a).
        self.F, self.G, self.gap = F, G, gap
        self.a, self.alpha = a, alpha
        self.end = gap.attracting_end
        self.log_scale = math.log(slope_at_base) + log_flow_speed(F, a) - log_flow_speed(G, alpha)
        self.rtol = rtol

    def slope(self, x: float, phi: float) -> float:
        return math.exp(self.log_scale + log_flow_speed(self.G, phi) - log_flow_speed(self.F, x))

    def evaluate(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        flat = xs.ravel()
        dist = np.abs(flat - self.end)
        if np.any(np.abs(flat - self.a) > abs(self.a - self.end)) or np.any(dist == 0.0):
            raise SolverError("continuation points must lie between the base point and the end")
        targets, inverse = np.unique(flat, return_inverse=True)
        if self.a > self.end:
            targets = targets[::-1]
            inverse = len(targets) - 1 - inverse
        atol = 1e-15 * float(np.min(dist))
        sol = solve_ivp(lambda x, y: [self.slope(x, y[0])], (self.a, float(targets[-1])), [self.alpha],
                        method="Radau", rtol=self.rtol, atol=atol, t_eval=targets)
        if sol.status != 0:
            raise SolverError(f"flat continuation failed: {sol.message}")
        return sol.y[0][inverse].reshape(xs.shape)


def _endpoint_slope(problem: _Problem, slope_at_base: float) -> float:
    """lam = phi'(a) / H1(a, alpha) with H1 taken further than the table truncation."""
    log_h1 = problem.log_h1_base
    extra = problem.options.lambda_terms
    if extra > problem.terms:
        res = h1(problem.F, problem.G, problem.a, problem.alpha, budget=extra, trace=True)
        if res.terms_used > problem.terms and math.isfinite(res.log_value):
            log_h1 = extrapolated_log(res)
    return slope_at_base / math.exp(log_h1)


def overlap_error(phi: ConjugacyMap, samples: int = 101) -> float:
    """Direct solution on the next fundamental domain against G(phi(F^-1 x))."""
    lo, hi = phi.window()
    fa = phi.a - phi.width
    # The second domain is [F^2 a, F a].
    ffa = phi.F(fa)
    xs = np.linspace(min(fa, ffa), max(fa, ffa), samples)
    xs = xs[(xs >= lo) & (xs <= hi)]
    if len(xs) == 0:
        return math.nan
    direct = phi.direct(xs)
    extended = phi.G.vec(phi.direct(phi.F.inverse_vec(xs)))
    return float(np.max(np.abs(direct - extended)))


def verify_residual(phi: ConjugacyMap, f: Optional[Diffeo] = None, g: Optional[Diffeo] = None,
                    samples: int = 401) -> float:
    """sup |G(phi(x)) - phi(F(x))| over the sample window, using direct values.

    Only points x with F(x) still inside the window are used.  ``f`` and
    ``g`` default to the maps the solution was built for.
    """
    F = f if f is not None else phi.F
    G = g if g is not None else phi.G
    lo, hi = phi.window()
    xs = np.linspace(lo, hi, samples)
    fx = F.vec(xs)
    keep = (fx >= lo) & (fx <= hi)
    xs, fx = xs[keep], fx[keep]
    u = G.vec(phi.direct(xs)) - phi.direct(fx)
    value = float(np.max(np.abs(u))) if len(u) else math.nan
    if f is None and g is None:
        phi.residual = value
    return value


def _solve(F: Diffeo, G: Diffeo, a: float, alpha: float, lam: Optional[float], options: SolverOptions,
           direction: str) -> ConjugacyMap:
    problem = _problem(F, G, a, alpha, options)
    unit = problem.rhs_factor()
    if lam is not None:
        kappa = lam * unit
        return _build_map(problem, kappa, problem.mismatch(kappa), direction)
    # Geometric bracket from lam = 1; mismatch in u increases with kappa.
    lo = hi = unit
    m_lo = m_hi = problem.mismatch(unit)
    grow = 0
    while m_lo > 0.0:
        hi, m_hi = lo, m_lo
        lo /= 2.0
        m_lo = problem.mismatch(lo)
        grow += 1
        if grow > 200:
            raise BracketFailure("no sign change while shrinking lam")
    while m_hi < 0.0:
        lo, m_lo = hi, m_hi
        hi *= 2.0
        m_hi = problem.mismatch(hi)
        grow += 1
        if grow > 400:
            raise BracketFailure("no sign change while growing lam")
    if m_lo == 0.0:
        kappa = lo
    elif m_hi == 0.0:
        kappa = hi
    else:
        kappa = brentq(problem.mismatch, lo, hi, xtol=1e-300, rtol=4 * _EPS, maxiter=options.max_bisections)
    m = problem.mismatch(kappa)
    if abs(m) > max(options.shoot_rtol, 1e-12) * 10:
        # Check monotonicity around the root before reporting.
        left, right = problem.mismatch(kappa * (1 - 1e-6)), problem.mismatch(kappa * (1 + 1e-6))
        if not left <= m <= right:
            raise BracketFailure(f"shooting mismatch is not monotone near lam={kappa / unit!r}")
    return _build_map(problem, kappa, m, direction)


# ---------------------------------------------------------------- public entry points


def solve_d1(f: Diffeo, g: Diffeo, a: float, alpha: float, lam: float,
             options: SolverOptions = DEFAULT_OPTIONS) -> ConjugacyMap:
    """Integrate the forward ODE for a given lam, without shooting."""
    if lam <= 0:
        raise SolverError("lam must be positive")
    return _solve(f, g, a, alpha, lam, options, "plus")


def shooting_mismatch(f: Diffeo, g: Diffeo, a: float, alpha: float, lam: float,
                      options: SolverOptions = DEFAULT_OPTIONS) -> float:
    """phi_lam(f(a)) - g(alpha) for the forward ODE (x units)."""
    problem = _problem(f, g, a, alpha, options)
    m = problem.mismatch(lam * problem.rhs_factor())
    return -m * problem.width_g


def phi_plus(f: Diffeo, g: Diffeo, a: float, alpha: float, options: SolverOptions = DEFAULT_OPTIONS
             ) -> ConjugacyMap:
    """Shooting solution built from forward orbits (toward f's attracting end)."""
    return _solve(f, g, a, alpha, None, options, "plus")


def phi_minus(f: Diffeo, g: Diffeo, a: float, alpha: float, options: SolverOptions = DEFAULT_OPTIONS
              ) -> ConjugacyMap:
    """Shooting solution built from backward orbits (toward the repelling end).

    It is the forward solution for the inverse maps; its ``mu`` is the
    derivative at the repelling end.
    """
    return _solve(f.inverted(), g.inverted(), a, alpha, None, options, "minus")


def find_lambda(f: Diffeo, g: Diffeo, a: float, alpha: float, options: SolverOptions = DEFAULT_OPTIONS
                ) -> float:
    return phi_plus(f, g, a, alpha, options).lam


def conjugacy_toward_fixed_end(f: Diffeo, g: Diffeo, a: float, alpha: float,
                               options: SolverOptions = DEFAULT_OPTIONS) -> ConjugacyMap:
    """phi_plus when orbits of f approach a fixed end, otherwise phi_minus."""
    gap = f.gap_containing(a)
    if gap.attracting_end_fixed:
        return phi_plus(f, g, a, alpha, options)
    if gap.repelling_end_fixed:
        return phi_minus(f, g, a, alpha, options)
    raise SolverError("the gap has no fixed end")


# ---------------------------------------------------------------- smoothness probe


@dataclass
class OrderDiagnostic:
    """Behaviour of the k-th derivative approaching the endpoint."""

    order: int
    kind: str  # "finite", "blowup" or "inconclusive"
    limit: Optional[float] = None
    exponent: Optional[float] = None
    r_squared: Optional[float] = None
    values: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    note: str = ""

    def to_dict(self) -> dict:
        return {"order": self.order, "kind": self.kind, "limit": self.limit, "exponent": self.exponent,
                "r_squared": self.r_squared, "note": self.note}


@dataclass
class SmoothnessDiagnostics:
    endpoint: float
    orders: list[OrderDiagnostic]
    ladder: list[float]

    def order(self, k: int) -> OrderDiagnostic:
        return self.orders[k - 1]

    @property
    def smooth_evidence(self) -> bool:
        return all(o.kind == "finite" for o in self.orders)

    @property
    def blowup(self) -> Optional[OrderDiagnostic]:
        for o in self.orders:
            if o.kind == "blowup":
                return o
        return None

    def to_dict(self) -> dict:
        return {"endpoint": self.endpoint, "ladder": self.ladder, "orders": [o.to_dict() for o in self.orders]}


def _fit_derivatives(t: np.ndarray, ys: np.ndarray, radius: float, orders: int
                     ) -> tuple[np.ndarray, np.ndarray]:
    points = len(t)
    degree = orders + 3
    coeffs = np.polynomial.polynomial.polyfit(t, ys - ys[points // 2], degree)
    fitted = np.polynomial.polynomial.polyval(t, coeffs)
    sigma = float(np.sqrt(np.mean((fitted - (ys - ys[points // 2])) ** 2)))
    sigma = max(sigma, _EPS * float(np.max(np.abs(ys))))
    derivs = np.array([math.factorial(k) * coeffs[k] / radius**k for k in range(1, orders + 1)])
    # Noise in the k-th coefficient of a least-squares fit grows like sigma * k!/radius^k.
    noise = np.array([sigma * math.factorial(k) * 4.0**k / radius**k / math.sqrt(points) for k in range(1, orders + 1)])
    return derivs, noise


def _classify_order(order: int, dist: np.ndarray, vals: np.ndarray, noise: np.ndarray,
                    blowup_slope: float, min_r2: float) -> OrderDiagnostic:
    diag = OrderDiagnostic(order, "inconclusive", values=[float(v) for v in vals],
                           distances=[float(d) for d in dist])
    # Values lost in noise read as a zero limit.
    if np.all(np.abs(vals) <= 10.0 * noise):
        diag.kind, diag.limit, diag.note = "finite", 0.0, "values at noise level"
        return diag
    signs = np.sign(vals)
    if np.all(signs == signs[0]) and np.all(np.abs(vals) > 10.0 * noise):
        lx, ly = np.log(dist), np.log(np.abs(vals))
        slope, intercept = np.polyfit(lx, ly, 1)
        pred = slope * lx + intercept
        ss_res = float(np.sum((ly - pred) ** 2))
        ss_tot = float(np.sum((ly - ly.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        if slope < blowup_slope and r2 >= min_r2:
            diag.kind, diag.exponent, diag.r_squared = "blowup", float(slope), float(r2)
            return diag
        diag.exponent, diag.r_squared = float(slope), float(r2)
    # Finite limit: differences shrink geometrically toward the endpoint.
    order_idx = np.argsort(dist)
    v = vals[order_idx]
    diffs = np.diff(v)
    scale = float(np.max(np.abs(v)))
    big = np.abs(diffs) > np.maximum(3.0 * noise[order_idx][1:], 1e-9 * scale)
    if not big.any():
        diag.kind, diag.limit, diag.note = "finite", float(np.mean(v[:3])), "flat within noise"
        return diag
    ratios = diffs[:-1] / diffs[1:]
    ratios = ratios[np.isfinite(ratios) & big[:-1] & big[1:]]
    if len(ratios) >= 3:
        r = float(np.median(ratios))
        if 0.0 < r < 0.98:
            diag.kind = "finite"
            diag.limit = float(v[0] - diffs[0] * r / (1.0 - r))
            diag.note = f"geometric extrapolation, ratio {r:.3g}"
    return diag


def probe_smoothness(phi: ConjugacyMap, orders: int = 4, ladder_size: int = 12, ratio: float = 0.7,
                     reach_budget: int = 10**5, fit_points: int = 41, blowup_slope: float = -0.1,
                     min_r2: float = 0.9, step_budget: Optional[int] = None) -> SmoothnessDiagnostics:
    """Estimate phi^(k) on a geometric ladder approaching the attracting end.

    The ladder's lowest rung is the closest point reachable within
    ``reach_budget`` steps (but no closer than 1e-3 of the base distance).
    Each derivative comes from a local least-squares polynomial fit.
    """
    end = phi.endpoint
    if math.isinf(end):
        raise SolverError("smoothness probe needs a finite endpoint")
    base_dist = float(phi.gap.distance_to(phi.a, end))
    lowest = max(phi.reach(reach_budget), 1e-3 * base_dist)
    side = 1.0 if phi.a > end else -1.0
    dists = lowest / ratio ** np.arange(ladder_size)
    # Do not let the ladder cross the far end of the gap.
    far = phi.gap.repelling_end
    if math.isfinite(far):
        room = abs(far - end)
        if dists[-1] > 0.8 * room:
            dists = dists * (0.8 * room / dists[-1])
    vals = np.zeros((ladder_size, orders))
    noise = np.zeros((ladder_size, orders))
    t = np.linspace(-1.0, 1.0, fit_points)
    stencils = (end + side * dists)[:, None] + 0.3 * dists[:, None] * t[None, :]
    ys = phi.evaluate(stencils, step_budget)
    for j, dist in enumerate(dists):
        vals[j], noise[j] = _fit_derivatives(t, ys[j], 0.3 * dist, orders)
    diags = [_classify_order(k + 1, dists, vals[:, k], noise[:, k], blowup_slope, min_r2) for k in range(orders)]
    result = SmoothnessDiagnostics(end, diags, [float(end + side * d) for d in dists])
    phi.smoothness = diags
    return result


# ---------------------------------------------------------------- compositional roots


@dataclass
class RootResult:
    root: ConjugacyMap
    k: int
    alpha: float
    residual: float


def _power(phi: ConjugacyMap, x: np.ndarray, k: int) -> np.ndarray:
    for _ in range(k):
        x = phi.evaluate(x)
    return x


def compositional_root(f: Diffeo, k: int, a: float, options: SolverOptions = DEFAULT_OPTIONS,
                       residual_samples: int = 101) -> RootResult:
    """psi with psi^k = f on the gap of a, as a self-conjugacy of f."""
    if k < 1:
        raise SolverError("k must be a positive integer")
    gap = f.gap_containing(a)
    F = f if gap.attracting_end_fixed or not gap.repelling_end_fixed else f.inverted()
    fa = f(a)
    target = fa
    direction = "plus" if F is f else "minus"
    lo, hi = sorted((fa, a))
    if k == 1:
        root = _solve(F, F, a, fa, None, options, direction)
        return RootResult(root, 1, fa, _root_residual(root, f, 1, residual_samples))

    def excess(alpha: float) -> float:
        psi = _solve(F, F, a, alpha, None, options, direction)
        return float(_power(psi, np.array([a]), k)[0]) - target

    span = hi - lo
    alpha = brentq(excess, lo + 1e-9 * span, hi - 1e-9 * span, xtol=1e-15 * max(1.0, abs(a)),
                   rtol=4 * _EPS, maxiter=options.max_bisections)
    root = _solve(F, F, a, alpha, None, options, direction)
    return RootResult(root, k, alpha, _root_residual(root, f, k, residual_samples))


def _root_residual(psi: ConjugacyMap, f: Diffeo, k: int, samples: int) -> float:
    a = psi.a
    fa = f(a)
    xs = np.linspace(min(a, fa), max(a, fa), samples)
    return float(np.max(np.abs(_power(psi, xs, k) - f.vec(xs))))


# ---------------------------------------------------------------- Sergeraert's criterion


@dataclass
class SergeraertResult:
    satisfied: bool
    kappa: float
    worst_x: float
    endpoint: float

    @property
    def label(self) -> str:
        return "Satisfied" if self.satisfied else "NotDetected"


def sergeraert_criterion(f: Diffeo, delta: float, kappa_max: float = 100.0, endpoint: Optional[float] = None,
                         samples: int = 200_000) -> SergeraertResult:
    """Test sup_{y between p and x} D(y) <= kappa * D(x) for |x - p| < delta.

    D is the absolute displacement |f(x) - x| and p a fixed end; the grid
    is uniform in 1/distance so oscillations of the form sin(c/x) are seen.
    """
    if endpoint is None:
        endpoint = f.fixed_points[0]
    gap = None
    for gp in f.gaps():
        if gp.lower == endpoint or gp.upper == endpoint:
            gap = gp
            break
    if gap is None:
        raise DiffeoError(f"{endpoint!r} is not an end of any gap")
    side = 1.0 if gap.lower == endpoint else -1.0
    inv = np.linspace(1.0 / delta, 700.0, samples)
    dist = np.sort(1.0 / inv)
    xs = endpoint + side * dist
    disp = np.abs(np.array([f.displacement(float(x)) for x in xs]))
    positive = disp > 0
    dist, disp = dist[positive], disp[positive]
    running = np.maximum.accumulate(disp)
    ratio = running / disp
    i = int(np.argmax(ratio))
    kappa = float(ratio[i])
    return SergeraertResult(kappa <= kappa_max, kappa, float(endpoint + side * dist[i]), endpoint)
