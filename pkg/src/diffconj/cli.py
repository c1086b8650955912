"""Command-line front end.

Every task reads one JSON job file (``series`` takes its two series on the
command line instead) and writes ``report.json``, ``summary.txt`` and any
sampled grids under ``grids/`` in the output directory.

Exit codes: 0 when the job ran (whatever the verdict), 1 for bad input,
2 for an internal failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import series_core
from .classifier import ClassifyOptions, classify, flowability_check
from .conjugacy_solver import (ConjugacyMap, SolverError, SolverOptions, compositional_root, phi_minus,
                               phi_plus, probe_smoothness, verify_residual)
from .diffeo_model import Diffeo, DiffeoError, diffeo_from_spec, orbit_count, verify
from .expr_core import ExprError, ParseError
from .linearization import NotHyperbolic, modulus_equal, modulus_symmetry, robbin_modulus
from .products import ShapeGrid, h1, h2, h_two_sided, shape_grid

log = logging.getLogger("diffconj")

TASKS = ("classify", "product", "conjugate", "modulus", "series", "flow", "root", "orbit")
SIGNIFICANT_DIGITS = 12


class InputError(ValueError):
    """A job the user has to fix: bad config, bad option, bad expression."""


# ---------------------------------------------------------------- serialization

def _round(v: float):
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v == 0.0:
        return 0.0
    return float(f"{v:.{SIGNIFICANT_DIGITS}g}")


def to_jsonable(obj: Any) -> Any:
    """Plain JSON data with every float cut to a fixed number of digits."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, Enum):
        return to_jsonable(obj.value)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round(float(obj))
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if dataclasses.is_dataclass(obj):
        return to_jsonable(dataclasses.asdict(obj))
    return str(obj)


def dumps(report: dict) -> str:
    return json.dumps(to_jsonable(report), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- grid cache

class GridCache:
    """Sampled grids on disk, keyed by the map, its interval and the tolerances used."""

    def __init__(self, root: Optional[Path]):
        self.root = root
        self.hits = 0

    @staticmethod
    def key(d: Diffeo, kind: str, **params) -> str:
        payload = {"map": d.key(), "interval": d.domain.to_list(), "kind": kind, "params": to_jsonable(params)}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:24]

    def _path(self, key: str) -> Optional[Path]:
        return None if self.root is None else self.root / f"{key}.npz"

    def shape_grid(self, d: Diffeo, gap, a: float, grid: int, tol: float) -> ShapeGrid:
        key = self.key(d, "shape", gap=[gap.lower, gap.upper], a=a, grid=grid, tol=tol)
        path = self._path(key)
        if path is not None and path.exists():
            data = np.load(path)
            self.hits += 1
            return ShapeGrid(gap, a, data["x"], data["values"], float(data["ratio"]),
                             tuple(int(t) for t in data["terms"]), bool(data["converged"]))
        sg = shape_grid(d, gap, a, grid, tol)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            np.savez(path, x=sg.x, values=sg.values, ratio=sg.ratio, terms=np.array(sg.terms),
                     converged=sg.converged)
        return sg


# ---------------------------------------------------------------- job context

@dataclasses.dataclass
class Job:
    task: str
    config: dict
    out: Path
    tol: float
    budget: int
    grid: int
    probe_order: int
    seed: int
    plots: bool
    cache: GridCache
    grids: dict = dataclasses.field(default_factory=dict)

    def diffeo(self, name: str) -> Diffeo:
        spec = self.config.get(name)
        if not isinstance(spec, dict):
            raise InputError(f"the job needs a map block '{name}'")
        d = diffeo_from_spec(spec)
        if self.config.get("verify", True):
            rep = verify(d)
            if not rep.ok:
                raise InputError(f"map '{name}' failed verification: {'; '.join(rep.messages)}")
        return d

    def number(self, name: str, default=None) -> float:
        value = self.config.get(name, default)
        if value is None:
            raise InputError(f"the job needs a numeric '{name}'")
        try:
            return float(Fraction(str(value))) if isinstance(value, str) else float(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise InputError(f"'{name}' is not a number: {value!r}") from exc

    def write_rows(self, name: str, header: list[str], rows) -> None:
        path = self.out / "grids" / f"{name}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(_round(float(v))) if isinstance(v, (float, np.floating)) else v for v in row])
        self.grids[name] = header

    def write_map(self, name: str, phi: ConjugacyMap) -> None:
        xs, ys = phi.samples()
        self.write_rows(name, ["x", "phi"], zip(xs, ys))

    def solver_options(self) -> SolverOptions:
        return SolverOptions(step_budget=self.budget)

    def classify_options(self) -> ClassifyOptions:
        pairs = self.config.get("base_pairs")
        return ClassifyOptions(tol=self.tol, budget=self.budget, grid=self.grid, probe_order=self.probe_order,
                               base_pairs=[tuple(p) for p in pairs] if pairs else None,
                               solver=self.solver_options())


# ---------------------------------------------------------------- tasks

def task_classify(job: Job) -> tuple[dict, str]:
    f, g = job.diffeo("f"), job.diffeo("g")
    verdict, report = classify(f, g, job.classify_options())
    for i, gap in enumerate(report.gaps):
        if isinstance(gap.witness, ConjugacyMap):
            job.write_map(f"gap{i}_conjugacy", gap.witness)
    out = report.to_dict()
    lams = [gap.lam for gap in report.gaps if gap.lam is not None]
    lines = [f"verdict: {verdict.kind.value}"]
    if verdict.failing is not None:
        lines.append(f"first failing condition: {verdict.failing.name}")
    if verdict.inconclusive:
        lines.append("undetermined: " + ", ".join(verdict.inconclusive))
    lines += [f"gap {i}: lambda = {lam:.12g}" for i, lam in enumerate(lams)]
    return out, "\n".join(lines)


def task_product(job: Job) -> tuple[dict, str]:
    f, g = job.diffeo("f"), job.diffeo("g")
    x, xi = job.number("x"), job.number("xi")
    gap = f.gap_containing(x)
    out: dict[str, Any] = {"x": x, "xi": xi, "gap": gap.label()}
    if gap.kind == "compact":
        res = h_two_sided(f, g, x, xi, job.tol, job.budget)
        out["h"] = res.to_dict()
        sg = job.cache.shape_grid(f, gap, x, job.grid, job.tol)
        job.write_rows("shape_f", ["x", "F"], zip(sg.x, sg.values))
        summary = f"H(f, g; x, xi) = {res.value:.12g} ({res.status.value})"
    else:
        forward = gap.attracting_end_fixed
        res = (h1 if forward else h2)(f, g, x, xi, job.tol, job.budget)
        back = (h1 if forward else h2)(g, f, xi, x, job.tol, job.budget)
        out["h1" if forward else "h2"] = res.to_dict()
        out["reciprocity_error"] = abs(res.log_value + back.log_value)
        summary = f"{'h1' if forward else 'h2'}(f, g; x, xi) = {res.value:.12g} ({res.status.value})"
    samples = int(job.config.get("random_pairs", 0))
    if samples and gap.kind != "compact":
        rng = np.random.default_rng(job.seed)
        gg = g.gap_containing(xi)
        fx, gxi = f(x), g(xi)
        xs = rng.uniform(min(x, fx), max(x, fx), samples)
        xis = rng.uniform(min(xi, gxi), max(xi, gxi), samples)
        rows = []
        for u, v in zip(xs, xis):
            r = (h1 if gap.attracting_end_fixed else h2)(f, g, float(u), float(v), job.tol, job.budget)
            rows.append((u, v, r.value, r.status.value))
        job.write_rows("random_pairs", ["x", "xi", "value", "status"], rows)
        out["random_pairs"] = {"count": samples, "gap_g": gg.label()}
    return out, summary


def task_conjugate(job: Job) -> tuple[dict, str]:
    f, g = job.diffeo("f"), job.diffeo("g")
    a, alpha = job.number("a"), job.number("alpha")
    direction = job.config.get("direction", "plus")
    if direction not in ("plus", "minus"):
        raise InputError("direction must be 'plus' or 'minus'")
    solve = phi_plus if direction == "plus" else phi_minus
    phi = solve(f, g, a, alpha, job.solver_options())
    residual = verify_residual(phi)
    diag = probe_smoothness(phi, orders=job.probe_order)
    job.write_map("conjugacy", phi)
    out = {"conjugacy": phi.sidecar(), "residual": residual, "smoothness": diag.to_dict()}
    summary = f"lambda = {phi.lam:.12g}, residual = {residual:.3g}"
    return out, summary


def task_modulus(job: Job) -> tuple[dict, str]:
    f = job.diffeo("f")
    gap = f.gap_containing(job.number("x"))
    mod_f = robbin_modulus(f, gap)
    job.write_rows("modulus_f", ["t", "gamma"], zip(mod_f.t, mod_f.gamma))
    out: dict[str, Any] = {"slope": mod_f.slope, "period": mod_f.period,
                           "periodic_spread": float(np.ptp(mod_f.periodic_part)),
                           "symmetry_order": modulus_symmetry(mod_f, job.tol)}
    summary = f"slope k = {mod_f.slope:.12g}, spread of P = {out['periodic_spread']:.3g}"
    if "g" in job.config:
        g = job.diffeo("g")
        mod_g = robbin_modulus(g, g.gap_containing(job.number("xi", job.config.get("x"))))
        job.write_rows("modulus_g", ["t", "gamma"], zip(mod_g.t, mod_g.gamma))
        cmp = modulus_equal(mod_f, mod_g, job.tol)
        out["comparison"] = cmp
        summary += f"\nmoduli {'agree' if cmp.equal else 'differ'} (distance {cmp.distance:.3g})"
    return out, summary


def task_series(job: Job, first: str, second: str) -> tuple[dict, str]:
    try:
        n = max(series_core.parse_series(first).order, series_core.parse_series(second).order)
        P, Q = series_core.parse_series(first, n), series_core.parse_series(second, n)
    except series_core.SeriesError as exc:
        raise InputError(str(exc)) from exc
    out: dict[str, Any] = {"P": series_core.format_series(P), "Q": series_core.format_series(Q), "order": n}
    try:
        ok, witness = series_core.are_conjugate(P, Q)
        verdict = "conjugate-as-jets" if ok else "not-conjugate-as-jets"
        if witness is not None:
            out["witness"] = series_core.format_series(witness)
    except series_core.SeriesError as exc:
        verdict = "undetermined"
        out["reason"] = str(exc)
    for name, S in (("normal_form_P", P), ("normal_form_Q", Q)):
        try:
            nf = series_core.normal_form(S)[0]
            out[name] = {"class": type(nf).__name__, **dataclasses.asdict(nf)}
        except series_core.SeriesError as exc:
            out[name] = f"unavailable: {exc}"
    out["verdict"] = verdict
    return out, f"verdict: {verdict}"


def task_flow(job: Job) -> tuple[dict, str]:
    f = job.diffeo("f")
    gap = f.gap_containing(job.number("x", f.gaps()[0].sample_point()))
    rep = flowability_check(f, gap, grid=max(job.grid, 21))
    sg = job.cache.shape_grid(f, gap, gap.sample_point(), max(job.grid, 21), 1e-12)
    job.write_rows("shape_f", ["x", "F"], zip(sg.x, sg.values))
    out = {"status": rep.status, "pattern": list(rep.pattern), "multipliers": list(rep.multipliers),
           "witness": rep.witness, "gap": gap.label()}
    return out, f"flowability: {rep.status} (pattern {''.join(rep.pattern)})"


def task_root(job: Job, k: Optional[int]) -> tuple[dict, str]:
    f = job.diffeo("f")
    k = int(k if k is not None else job.config.get("k", 2))
    if k < 1:
        raise InputError("root order must be a positive integer")
    res = compositional_root(f, k, job.number("a"), job.solver_options())
    job.write_map("root", res.root)
    out = {"k": k, "alpha": res.alpha, "residual": res.residual, "root": res.root.sidecar()}
    return out, f"root of order {k}: psi(a) = {res.alpha:.12g}, residual {res.residual:.3g}"


def task_orbit(job: Job) -> tuple[dict, str]:
    window = job.config.get("window")
    if not (isinstance(window, list) and len(window) == 2):
        raise InputError("orbit needs 'window': [lo, hi]")
    lo, hi = (float(v) for v in window)
    seed = job.number("seed_point")
    out: dict[str, Any] = {"window": [lo, hi], "seed_point": seed}
    lines = []
    for name in ("f", "g"):
        if name not in job.config:
            continue
        oc = orbit_count(job.diffeo(name), lo, hi, seed, job.budget)
        out[name] = dataclasses.asdict(oc)
        lines.append(f"{name}: {oc.count} orbit points ({'exact' if oc.exact else 'bounded'}), "
                     f"log bounds [{oc.log_bounds[0]:.6g}, {oc.log_bounds[1]:.6g}]")
    if not lines:
        raise InputError("orbit needs a map block 'f' or 'g'")
    return out, "\n".join(lines)


# ---------------------------------------------------------------- driver

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffconj", description="Smooth conjugacy of interval diffeomorphisms.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=1e-7, help="verdict tolerance")
    common.add_argument("--budget", type=int, default=10**6, help="iteration budget for products and orbits")
    common.add_argument("--grid", type=int, default=41, help="grid size for sampled checks")
    common.add_argument("--probe-order", type=int, default=4, help="highest derivative order probed")
    common.add_argument("--out", type=Path, default=Path("diffconj_out"), help="output directory")
    common.add_argument("--seed", type=int, default=0, help="seed for any random sampling")
    common.add_argument("--plots", action="store_true", help="render grids to PNG (needs matplotlib)")
    common.add_argument("--no-cache", action="store_true", help="do not reuse cached grids")
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task, parents=[common])
        if task == "series":
            p.add_argument("P")
            p.add_argument("Q")
        else:
            p.add_argument("config", type=Path)
        if task == "root":
            p.add_argument("-k", type=int, default=None, help="order of the compositional root")
    return parser


def _check_ranges(args) -> None:
    if not (args.tol > 0 and math.isfinite(args.tol)):
        raise InputError("--tol must be positive")
    if args.budget < 1 or args.grid < 3 or not 1 <= args.probe_order <= 8:
        raise InputError("--budget >= 1, --grid >= 3 and 1 <= --probe-order <= 8 are required")


def _load_config(path: Path) -> dict:
    if not path.exists():
        raise InputError(f"config file {path} does not exist")
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise InputError("config must be a JSON object")
    return config


def run(args) -> int:
    _check_ranges(args)
    config = {} if args.task == "series" else _load_config(args.config)
    args.out.mkdir(parents=True, exist_ok=True)
    cache = GridCache(None if args.no_cache else args.out / "cache")
    job = Job(args.task, config, args.out, args.tol, args.budget, args.grid, args.probe_order, args.seed,
              args.plots, cache)
    if args.task == "series":
        body, summary = task_series(job, args.P, args.Q)
    elif args.task == "root":
        body, summary = task_root(job, args.k)
    else:
        body, summary = globals()[f"task_{args.task}"](job)
    report = {"task": args.task, "seed": args.seed,
              "options": {"tol": args.tol, "budget": args.budget, "grid": args.grid,
                          "probe_order": args.probe_order},
              "grids": sorted(job.grids), **body}
    (args.out / "report.json").write_text(dumps(report))
    (args.out / "summary.txt").write_text(summary + "\n")
    if args.plots:
        from .plotting import render_grids
        for note in render_grids(args.out / "grids"):
            log.warning(note)
    print(summary)
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 1
    except (InputError, ExprError, DiffeoError, NotHyperbolic) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - anything else is our bug
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
