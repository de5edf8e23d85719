"""Exponential-utility hedging and liquidation with linear temporary impact in the Bachelier model."""

from .dual import DualValueReport, dual_value, gamma_hat, i_instance, j_instance, m0_hat
from .model import DerivedConstants, ProblemError, ProblemSpec, derived_constants, validate_problem
from .simulate import McEstimate, PricePath, mc_certainty_equivalent, sample_path
from .strategy import StrategyPath, feedback_rate, initial_rate, integrate_closed_loop, target_position
from .variational import VariationalInstance, VariationalSolution, solve_closed_form, solve_discretized

__all__ = [
    "DerivedConstants", "DualValueReport", "McEstimate", "PricePath", "ProblemError", "ProblemSpec",
    "StrategyPath", "VariationalInstance", "VariationalSolution", "derived_constants", "dual_value",
    "feedback_rate", "gamma_hat", "i_instance", "initial_rate", "integrate_closed_loop", "j_instance",
    "m0_hat", "mc_certainty_equivalent", "sample_path", "solve_closed_form", "solve_discretized",
    "target_position", "validate_problem",
]
