"""Branching-diffusion laboratory.

Mechanisms and their critical constants, travelling waves and the exit-line
branching processes they embed, reaction-diffusion solvers, an event-driven
branching-particle simulator, martingale estimators and spine changes of
measure; every statistical claim is cross-checked against an analytic route.
"""

__version__ = "0.1.0"

from .mechanism import (
    BranchingMechanism,
    FormulaMechanism,
    CriticalConstants,
    builtin,
    critical_constants,
    check_condition_A3,
    classify_moments,
)

__all__ = [
    "BranchingMechanism",
    "FormulaMechanism",
    "CriticalConstants",
    "builtin",
    "critical_constants",
    "check_condition_A3",
    "classify_moments",
    "__version__",
]
