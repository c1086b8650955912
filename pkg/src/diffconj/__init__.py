"""Smooth conjugacy of one-dimensional diffeomorphisms.

Decides whether two diffeomorphisms of an interval are smoothly conjugate,
builds the conjugating maps where it can, and reports the evidence behind
each verdict.
"""

from .classifier import (ClassifyOptions, ConjugacyReport, ConjugacyVerdict, Verdict, classify,
                         flowability_check, match_jets, reduce_orientation_reversing)
from .conjugacy_solver import (ConjugacyMap, SolverOptions, compositional_root, find_lambda, phi_minus,
                               phi_plus, probe_smoothness, sergeraert_criterion, solve_d1, verify_residual)
from .diffeo_model import (ConjugateMap, Diffeo, ExprMap, Interval, align_fixed_sets, diffeo_from_spec,
                           orbit_count, sign_condition, verify)
from .expr_core import derivative, eval_jet, evaluate, parse, to_source
from .linearization import (conventional_multiplier, linearizer, robbin_modulus, modulus_equal,
                            sternberg_iterate, sternberg_map)
from .products import condition_p, h1, h2, h_two_sided, pattern_compare, shape_check, shape_grid
from .series_core import FormalSeries, are_conjugate, centralizer, compose, invert, normal_form, parse_series
from .status import ConditionStatus, Status

__version__ = "0.1.0"

__all__ = [
    "ClassifyOptions", "ConditionStatus", "ConjugacyMap", "ConjugacyReport", "ConjugacyVerdict",
    "ConjugateMap", "Diffeo", "ExprMap", "FormalSeries", "Interval", "SolverOptions", "Status", "Verdict",
    "align_fixed_sets", "are_conjugate", "centralizer", "classify", "compose", "compositional_root",
    "condition_p", "conventional_multiplier", "derivative", "diffeo_from_spec", "eval_jet", "evaluate",
    "find_lambda", "flowability_check", "h1", "h2", "h_two_sided", "invert", "linearizer", "match_jets",
    "modulus_equal", "normal_form", "orbit_count", "parse", "parse_series", "pattern_compare", "phi_minus",
    "phi_plus", "probe_smoothness", "reduce_orientation_reversing", "robbin_modulus", "sergeraert_criterion",
    "shape_check", "shape_grid", "sign_condition", "solve_d1", "sternberg_iterate", "sternberg_map",
    "to_source", "verify", "verify_residual",
]
