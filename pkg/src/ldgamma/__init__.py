"""Finite-grid toolkit for large deviations and Gamma-convergence.

Measures, functionals and rate functions live on finite metric spaces;
asymptotic statements are checked through windowed limit estimates with
explicit schedules and traces.
"""

__version__ = "0.1.0"

from .errors import CycleError, EnumerationCapError, InvariantViolation, ScheduleError, ZeroMassError
from .gamma import Functional, FunctionalSequence, LimitEstimate, Window, gamma_liminf, gamma_limsup
from .ld_rate import MeasureSequence, Speed, Verdict, estimate_rate_ball, verify_equivalence
from .measure import DiscreteMeasure
from .metric_space import MetricSpace, PointSet, build_grid_space, space_from_coords, space_from_matrix

__all__ = [
    "CycleError",
    "DiscreteMeasure",
    "EnumerationCapError",
    "Functional",
    "FunctionalSequence",
    "InvariantViolation",
    "LimitEstimate",
    "MeasureSequence",
    "MetricSpace",
    "PointSet",
    "ScheduleError",
    "Speed",
    "Verdict",
    "Window",
    "ZeroMassError",
    "build_grid_space",
    "estimate_rate_ball",
    "gamma_liminf",
    "gamma_limsup",
    "space_from_coords",
    "space_from_matrix",
    "verify_equivalence",
]
