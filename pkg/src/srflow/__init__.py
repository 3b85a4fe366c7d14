"""Numerical lab for super-Ricci flows on time-dependent finite mm-spaces.

Submodules: ``flow`` (state spaces and flows), ``gamma`` (carre du champ
calculus), ``propagator`` (heat propagators), ``transport`` (Wasserstein
distances), ``inequalities`` (margin checkers and suite), ``scenarios``
(named flows with expected verdicts) and ``cli``.  Transport pulls in POT, so
it is not imported here.
"""

from .errors import (
    DomainError,
    FlowError,
    GridAlignmentError,
    MarginalError,
    OrderingError,
    ResolutionError,
    ScenarioError,
    StructuralError,
)
from .flow import FlowSpec, Measure, ProbabilityMeasure, TimeGrid, build_circle1d, build_graph
from .report import CheckReport

__version__ = "0.1.0"
