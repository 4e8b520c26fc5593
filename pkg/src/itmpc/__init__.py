"""Sampling-based model predictive control with information-theoretic and cross-entropy weights."""

__version__ = "0.1.0"

from .core import (ControlInput, ControlPlan, PerturbationBatch, SamplingParams, VEHICLE_DEFAULTS, VehicleState,
                   sample_perturbations)
from .dynamics import (BasisFunctionModel, BicycleModel, BicycleParams, ControlBounds, LinearModel, MLPModel,
                       MLPWeights, fit_theta, load_theta, save_theta, step_basis_model, step_bicycle_truth)
from .costs import CostMap, CostParams, DrivingCost, OvalTrack, QuadraticCost, generate_oval_costmap
from .weights import CEMWeights, ITWeights, cem_weights, it_weights
from .smoothing import SGFilter, sg_coefficients, sg_smooth
from .controller import (ControllerState, MPPIController, mpc_step, optimize_to_convergence, rollout_batch,
                         update_plan)
from .simulator import FailureCriteria, StartLine, classify_laps, simulate_episode, summarize
from .config import ExperimentConfig

__all__ = [
    "ControlInput", "ControlPlan", "PerturbationBatch", "SamplingParams", "VEHICLE_DEFAULTS", "VehicleState",
    "sample_perturbations", "BasisFunctionModel", "BicycleModel", "BicycleParams", "ControlBounds",
    "LinearModel", "MLPModel", "MLPWeights", "fit_theta", "load_theta", "save_theta", "step_basis_model",
    "step_bicycle_truth", "CostMap", "CostParams", "DrivingCost", "OvalTrack", "QuadraticCost",
    "generate_oval_costmap", "CEMWeights", "ITWeights", "cem_weights", "it_weights", "SGFilter",
    "sg_coefficients", "sg_smooth", "ControllerState", "MPPIController", "mpc_step",
    "optimize_to_convergence", "rollout_batch", "update_plan", "FailureCriteria", "StartLine",
    "classify_laps", "simulate_episode", "summarize", "ExperimentConfig",
]
