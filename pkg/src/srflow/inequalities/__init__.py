"""Functional inequalities along a time-dependent mm-space."""

from .bank import TestFunctionBank, make_bank, to_positive
from .checks import (
    PairContext,
    check_E3,
    check_E4,
    check_E5,
    check_E6,
    check_E7,
    check_E8,
    check_E9,
    check_E10,
    check_E11,
    check_E12,
    check_uniform_bound,
    default_tol,
    pair_contexts,
)
from .curvature import curvature_profile, estimate_curvature
from .static import c1, c2, check_static
from .suite import SuiteResult, default_pairs, reevaluate, run_suite
