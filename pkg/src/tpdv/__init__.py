"""Transformed primal-dual solvers with variable preconditioners."""
from .numerics import (EigPair, GradientOracle, SpdOperator, bregman_divergence,
                       contraction_defect, e_map, estimate_extreme_eigs, quadratic_oracle,
                       weighted_inner, weighted_norm_sq)
from .solver import (ConvergenceRecord, PrimalDualState, SaddleProblem, TpdvParams,
                     compute_theorem_params, lyapunov, solve, tpdv_imex_step, tpdv_step,
                     update_iq, verify_sandwich)

__version__ = "0.1.0"
