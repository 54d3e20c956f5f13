"""Robust L2 / optimal-transport registration of point clouds with thin-plate splines."""

from .cost import CostBreakdown, CostConfig, full_cost, l2_divergence
from .density import (
    Correspondences,
    KdeModel,
    SemiSupervised,
    Supervised,
    Unsupervised,
    joint_eval,
    marginal_eval,
)
from .kernel import LossKind, RobustCostParams, emit_loss_curves, gaussian_pdf, rho, robust_cost
from .solver import NumericalFailure, SolveReport, SolverConfig, solve
from .transform import PenaltyParams, TpsTransform, bending_energy, tps_fit_landmarks

__version__ = "0.1.0"

__all__ = [
    "CostBreakdown",
    "CostConfig",
    "Correspondences",
    "KdeModel",
    "LossKind",
    "NumericalFailure",
    "PenaltyParams",
    "RobustCostParams",
    "SemiSupervised",
    "SolveReport",
    "SolverConfig",
    "Supervised",
    "TpsTransform",
    "Unsupervised",
    "bending_energy",
    "emit_loss_curves",
    "full_cost",
    "gaussian_pdf",
    "joint_eval",
    "l2_divergence",
    "marginal_eval",
    "rho",
    "robust_cost",
    "solve",
    "tps_fit_landmarks",
]
