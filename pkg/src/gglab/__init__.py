"""Threshold equilibria of global games in which agents share noisy copies of their signals."""

from .belief import (BeliefCoefficients, GameParams, ObservationVector, build_V, compute_coefficients,
                     fuse_gaussian_observations, peer_conditional_law, peer_signal_means)
from .engine import (ConditionReport, IntegrationScheme, SolveDiagnostics, apply_T, banach_params,
                     check_conditions, eval_M, solve)
from .errors import DivergenceError, InvalidInputError, NumericalFailureError
from .grid import GridFunction, GridSpec, ThresholdFunction, check_lipschitz, eval_g, eval_h, g_to_Ih
from .verify import (Strategy, best_response_gap, nonexistence_witness, simulate_playout,
                     verify_equilibrium)

__version__ = "0.1.0"

__all__ = [
    "BeliefCoefficients",
    "ConditionReport",
    "DivergenceError",
    "GameParams",
    "GridFunction",
    "GridSpec",
    "IntegrationScheme",
    "InvalidInputError",
    "NumericalFailureError",
    "ObservationVector",
    "SolveDiagnostics",
    "Strategy",
    "ThresholdFunction",
    "apply_T",
    "banach_params",
    "best_response_gap",
    "build_V",
    "check_conditions",
    "check_lipschitz",
    "compute_coefficients",
    "eval_M",
    "eval_g",
    "eval_h",
    "fuse_gaussian_observations",
    "g_to_Ih",
    "nonexistence_witness",
    "peer_conditional_law",
    "peer_signal_means",
    "simulate_playout",
    "solve",
    "verify_equilibrium",
]
