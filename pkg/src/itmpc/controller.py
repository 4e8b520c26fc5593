"""Receding-horizon sampling controller (information-theoretic or cross-entropy weights).

One control period:

1. draw ``K`` noise sequences for the current iteration counter,
2. roll each perturbed input sequence through the model and accumulate its cost,
3. turn costs into weights (softmin or elite average),
4. add the smoothed weighted noise average to the plan,
5. emit the clamped first input and shift the plan one step.

Rollouts are split into fixed-size chunks that are mapped over a thread
pool.  The chunking does not depend on the number of threads and the weighted
sum runs in ascending sample order, so results are bit-identical for any
thread count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .core import (ControlInput, ControlPlan, PerturbationBatch, SamplingParams, VehicleState,
                   sample_perturbations)
from .rollout import rollout_costs
from .dynamics import ControlBounds
from .smoothing import SGFilter, sg_smooth
from .weights import CEMWeights, ITWeights, WeightResult

logger = logging.getLogger(__name__)

CHUNK_SIZE = 256
DIVERGED_COST = 1e30  # stands in for rollouts whose cost is not finite


def make_weight_rule(name: str, lambda_: float = 12.5, delta: float = 0.8):
    if name == "it":
        return ITWeights(lambda_)
    if name == "cem":
        return CEMWeights(delta)
    raise ValueError(f"unknown weight rule {name!r}; expected 'it' or 'cem'")


@dataclass(frozen=True, eq=False)
class ControllerState:
    plan: ControlPlan
    params: SamplingParams
    weight_rule: object = None
    filter: SGFilter = field(default_factory=SGFilter)
    bounds: Optional[ControlBounds] = None
    iteration: int = 0

    def __post_init__(self):
        if self.plan.horizon != self.params.horizon or self.plan.dim != self.params.dim:
            raise ValueError(f"plan shape {self.plan.values.shape} does not match "
                             f"(horizon, dim) = {(self.params.horizon, self.params.dim)}")
        if self.weight_rule is None:
            object.__setattr__(self, "weight_rule", ITWeights(self.params.lambda_))
        if self.bounds is None:
            object.__setattr__(self, "bounds", ControlBounds.unbounded(self.params.dim))

    @classmethod
    def initial(cls, params: SamplingParams, **kwargs) -> "ControllerState":
        return cls(ControlPlan.zeros(params.horizon, params.dim), params, **kwargs)


def realized_inputs(plan: np.ndarray, batch: PerturbationBatch):
    """Sampled inputs ``v`` and the effective perturbations ``v - u``.

    Regular samples use ``v = u + eps``; zero-mean samples use ``v = eps``.
    """
    V = plan[None] + batch.eps
    if np.any(batch.zero_mean):
        V[batch.zero_mean] = batch.eps[batch.zero_mean]
    return V, V - plan[None]


def _state_array(x0) -> np.ndarray:
    return x0.to_array() if isinstance(x0, VehicleState) else np.asarray(x0, dtype=float).reshape(-1)


def rollout_batch(x0, cs: ControllerState, batch: PerturbationBatch, model, cost,
                  workers: int = 1, chunk_size: int = CHUNK_SIZE) -> np.ndarray:
    """Trajectory cost ``S_k`` of every sample in ``batch`` around the current plan."""
    plan = cs.plan.values
    V, _ = realized_inputs(plan, batch)
    x = _state_array(x0)
    K = V.shape[0]
    bounds = [(s, min(s + chunk_size, K)) for s in range(0, K, chunk_size)]

    def run(span):
        a, b = span
        return rollout_costs(x, plan, V[a:b], model, cost, cs.params, cs.bounds, cs.params.base_mean)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(span) for span in bounds]
    S = np.concatenate(parts)
    bad = ~np.isfinite(S)
    if np.any(bad):
        logger.debug("%d of %d rollouts diverged", int(bad.sum()), K)
        S[bad] = DIVERGED_COST
    return S


def weighted_perturbation(weights: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """``sum_k w_k eps^k`` accumulated in ascending ``k``."""
    acc = np.zeros(eps.shape[1:])
    for k in range(eps.shape[0]):
        acc += weights[k] * eps[k]
    return acc


def update_plan(cs: ControllerState, batch: PerturbationBatch, weights: WeightResult) -> ControlPlan:
    """``U + SG * (sum_k w_k eps^k)``; the plan itself is never clamped."""
    _, eps = realized_inputs(cs.plan.values, batch)
    delta = weighted_perturbation(weights.weights, eps)
    return ControlPlan(cs.plan.values + sg_smooth(delta, cs.filter))


@dataclass(frozen=True, eq=False)
class StepInfo:
    costs: np.ndarray
    weights: WeightResult
    plan: ControlPlan  # optimized plan before the warm-start shift


def optimize_once(x0, cs: ControllerState, model, cost, workers: int = 1):
    batch = sample_perturbations(cs.params, cs.iteration)
    S = rollout_batch(x0, cs, batch, model, cost, workers)
    w = cs.weight_rule(S)
    plan = update_plan(cs, batch, w)
    return replace(cs, plan=plan, iteration=cs.iteration + 1), StepInfo(S, w, plan)


def mpc_step(x0, cs: ControllerState, model, cost, workers: int = 1, return_info: bool = False):
    """One control period: optimize, emit the clamped first input, warm-start shift."""
    cs_opt, info = optimize_once(x0, cs, model, cost, workers)
    u0 = ControlInput.from_array(cs.bounds.clip(info.plan.values[0])) if cs.params.dim == 2 \
        else cs.bounds.clip(info.plan.values[0])
    cs_next = replace(cs_opt, plan=info.plan.shifted(0.0))
    return (u0, cs_next, info) if return_info else (u0, cs_next)


def optimize_to_convergence(x0, cs: ControllerState, iterations: int, model, cost,
                            workers: int = 1, return_state: bool = False):
    """Repeat sample/weight/update passes from a fixed ``x0`` without shifting."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    for _ in range(iterations):
        cs, _ = optimize_once(x0, cs, model, cost, workers)
    return (cs.plan, cs) if return_state else cs.plan


def plan_cost(x0, plan, model, cost, params: SamplingParams, bounds=None) -> float:
    """Deterministic cost of executing ``plan`` exactly (zero noise)."""
    U = plan.values if isinstance(plan, ControlPlan) else np.asarray(plan, dtype=float)
    return float(rollout_costs(_state_array(x0), U, U[None], model, cost, params, bounds,
                               params.base_mean)[0])


class MPPIController(BaseEstimator):
    """Estimator-style wrapper holding hyperparameters and the running controller state.

    Parameters mirror :class:`SamplingParams` plus the weight rule
    (``"it"`` or ``"cem"``), smoothing window and control bounds.  ``reset``
    builds the state; ``step`` runs one control period and returns the
    clamped input to apply.
    """

    def __init__(self, model=None, cost=None, samples=1200, horizon=80, dt=1.0 / 40.0,
                 sigma=(0.0306, 0.0506), lambda_=12.5, gamma=0.1, explore_fraction=0.01,
                 base_mean=None, seed=0, weight_rule="it", delta=0.8, sg_window=9, sg_degree=3,
                 bounds=None, workers=1):
        self.model = model
        self.cost = cost
        self.samples = samples
        self.horizon = horizon
        self.dt = dt
        self.sigma = sigma
        self.lambda_ = lambda_
        self.gamma = gamma
        self.explore_fraction = explore_fraction
        self.base_mean = base_mean
        self.seed = seed
        self.weight_rule = weight_rule
        self.delta = delta
        self.sg_window = sg_window
        self.sg_degree = sg_degree
        self.bounds = bounds
        self.workers = workers

    def sampling_params(self) -> SamplingParams:
        return SamplingParams(samples=self.samples, horizon=self.horizon, dt=self.dt,
                              sigma=self.sigma, lambda_=self.lambda_, gamma=self.gamma,
                              explore_fraction=self.explore_fraction, base_mean=self.base_mean,
                              seed=self.seed)

    def reset(self, plan=None) -> "MPPIController":
        params = self.sampling_params()
        bounds = self.bounds if self.bounds is not None else ControlBounds.unbounded(params.dim)
        init = ControlPlan.zeros(params.horizon, params.dim) if plan is None else ControlPlan(plan)
        self.state_ = ControllerState(init, params, make_weight_rule(self.weight_rule, self.lambda_, self.delta),
                                      SGFilter(self.sg_window, self.sg_degree), bounds)
        self.last_info_ = None
        return self

    def fit(self, X=None, y=None):
        return self.reset()

    def _ensure_state(self):
        if not hasattr(self, "state_"):
            self.reset()

    def step(self, x0):
        self._ensure_state()
        u0, self.state_, self.last_info_ = mpc_step(x0, self.state_, self.model, self.cost,
                                                    self.workers, return_info=True)
        return u0

    def optimize(self, x0, iterations: int) -> ControlPlan:
        self._ensure_state()
        plan, self.state_ = optimize_to_convergence(x0, self.state_, iterations, self.model, self.cost,
                                                    self.workers, return_state=True)
        return plan

    @property
    def plan_(self) -> ControlPlan:
        self._ensure_state()
        return self.state_.plan
