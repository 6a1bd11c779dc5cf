"""Asymptotics and finite-size algorithms for multi-class teacher-student perceptrons."""

__version__ = "0.1.0"

from .prior import PriorSpec
from .state_evolution import FixedPoint, OverlapState, SEConfig, StudentSpec, run_fixed_point
from .free_entropy import TransitionReport, phi_bayes, scan_transitions
from .generalization import gen_error_bayes, gen_error_erm

__all__ = [
    "PriorSpec",
    "SEConfig",
    "StudentSpec",
    "OverlapState",
    "FixedPoint",
    "run_fixed_point",
    "phi_bayes",
    "scan_transitions",
    "TransitionReport",
    "gen_error_bayes",
    "gen_error_erm",
    "__version__",
]
