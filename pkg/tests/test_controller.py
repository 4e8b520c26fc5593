import numpy as np
import pytest

from itmpc.controller import (ControllerState, MPPIController, mpc_step, optimize_to_convergence, plan_cost,
                              rollout_batch, update_plan, weighted_perturbation)
from itmpc.core import VEHICLE_DEFAULTS, ControlPlan, PerturbationBatch, SamplingParams, sample_perturbations
from itmpc.costs import DrivingCost, OvalTrack, QuadraticCost, ZeroCost, generate_oval_costmap
from itmpc.dynamics import BicycleModel, ControlBounds, LinearModel
from itmpc.smoothing import SGFilter
from itmpc.verification import double_integrator
from itmpc.weights import CEMWeights, WeightResult, it_weights

TRACK = OvalTrack()
CMAP = generate_oval_costmap(TRACK, resolution=0.2)
X0 = TRACK.start_pose(3.0)


def driving_state(samples=600, horizon=20, seed=5, rule=None, explore=0.01):
    p = SamplingParams(samples=samples, horizon=horizon, seed=seed, explore_fraction=explore)
    return ControllerState.initial(p, weight_rule=rule, bounds=ControlBounds())


def null_model():
    return LinearModel(np.zeros((1, 1)), np.zeros((1, 2)))


def test_plan_shape_validated():
    p = SamplingParams(samples=4, horizon=5)
    with pytest.raises(ValueError):
        ControllerState(ControlPlan.zeros(6, 2), p)


@pytest.mark.parametrize("rule", [None, CEMWeights(0.8)])
def test_mpc_step_independent_of_workers(rule):
    model, cost = BicycleModel(), DrivingCost(CMAP)
    outs = []
    for workers in (1, 3):
        cs = driving_state(rule=rule)
        us = []
        for _ in range(3):
            u, cs = mpc_step(X0, cs, model, cost, workers=workers)
            us.append(u.to_array())
        outs.append((np.array(us), cs.plan.values, cs.iteration))
    np.testing.assert_array_equal(outs[0][0], outs[1][0])
    np.testing.assert_array_equal(outs[0][1], outs[1][1])
    assert outs[0][2] == outs[1][2] == 3


def test_rollout_costs_independent_of_chunking():
    cs = driving_state(samples=300)
    batch = sample_perturbations(cs.params, 0)
    model, cost = BicycleModel(), DrivingCost(CMAP)
    a = rollout_batch(X0, cs, batch, model, cost, chunk_size=256)
    b = rollout_batch(X0, cs, batch, model, cost, workers=4, chunk_size=7)
    c = rollout_batch(X0, cs, batch, model, cost, chunk_size=1000)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)


def test_weighted_sum_matches_sequential_reference():
    rng = np.random.default_rng(0)
    eps = rng.normal(size=(257, 9, 2))
    w = it_weights(rng.uniform(0, 5, 257), 0.7).weights
    ref = np.zeros((9, 2))
    for k in range(257):
        ref = ref + w[k] * eps[k]
    np.testing.assert_array_equal(weighted_perturbation(w, eps), ref)


def test_single_noiseless_sample_equals_plan_cost():
    cs = driving_state(samples=1)
    plan = np.random.default_rng(1).normal(0, 0.2, (20, 2))
    cs = ControllerState(ControlPlan(plan), cs.params, bounds=ControlBounds())
    model, cost = BicycleModel(), DrivingCost(CMAP)
    S = rollout_batch(X0, cs, PerturbationBatch(np.zeros((1, 20, 2))), model, cost)
    assert S[0] == plan_cost(X0, cs.plan, model, cost, cs.params, ControlBounds())


def test_duplicate_rows_duplicate_costs():
    cs = driving_state(samples=4)
    row = np.random.default_rng(2).normal(0, 0.2, (20, 2))
    S = rollout_batch(X0, cs, PerturbationBatch(np.stack([row, row * 0.5, row, row])), BicycleModel(),
                      DrivingCost(CMAP))
    assert S[0] == S[2] == S[3]
    assert S[1] != S[0]


def test_zero_mean_flag_is_noop_at_zero_plan():
    cs = driving_state(samples=2)
    row = np.random.default_rng(3).normal(0, 0.2, (20, 2))
    flagged = PerturbationBatch(np.stack([row, row]), zero_mean=[False, True])
    S = rollout_batch(X0, cs, flagged, BicycleModel(), DrivingCost(CMAP))
    assert S[0] == S[1]


def test_zero_mean_flag_uses_effective_perturbation():
    p = SamplingParams(samples=2, horizon=4, gamma=0.0)
    plan = np.full((4, 2), 0.3)
    cs = ControllerState(ControlPlan(plan), p, filter=SGFilter.identity())
    eps = np.full((2, 4, 2), 0.1)
    batch = PerturbationBatch(eps, zero_mean=[False, True])
    w = WeightResult(np.array([0.0, 1.0]), 0.0, 1.0)
    # the flagged sample realized v = eps, so the plan moves to v
    np.testing.assert_allclose(update_plan(cs, batch, w).values, eps[1], atol=1e-15)


def test_update_single_weight_identity_filter():
    p = SamplingParams(samples=3, horizon=6)
    plan = np.random.default_rng(4).normal(size=(6, 2))
    cs = ControllerState(ControlPlan(plan), p, filter=SGFilter.identity())
    eps = np.random.default_rng(5).normal(size=(3, 6, 2))
    w = WeightResult(np.array([0.0, 1.0, 0.0]), 0.0, 1.0)
    np.testing.assert_allclose(update_plan(cs, PerturbationBatch(eps), w).values, plan + eps[1], atol=1e-15)


def test_update_symmetric_pairs_cancel():
    p = SamplingParams(samples=4, horizon=6)
    plan = np.random.default_rng(6).normal(size=(6, 2))
    cs = ControllerState(ControlPlan(plan), p)
    e = np.random.default_rng(7).normal(size=(2, 6, 2))
    eps = np.concatenate([e, -e])
    w = WeightResult(np.full(4, 0.25), 0.0, 4.0)
    np.testing.assert_allclose(update_plan(cs, PerturbationBatch(eps), w).values, plan, atol=1e-15)


def test_update_equal_costs_bounded_by_noise_mean():
    K = 10_000
    p = SamplingParams(samples=K, horizon=10, explore_fraction=0.0, seed=11, **{"sigma": VEHICLE_DEFAULTS["sigma"]})
    cs = ControllerState.initial(p, filter=SGFilter.identity())
    w = it_weights(np.zeros(K), 1.0)
    new = update_plan(cs, sample_perturbations(p, 0), w).values
    bound = 4 * np.sqrt(p.sigma) / np.sqrt(K)
    assert np.all(np.abs(new) <= bound)


@pytest.mark.parametrize("fraction", [0.0, 0.01, 0.25, 0.5])
def test_zero_mean_fraction_unbiased_at_zero_plan(fraction):
    K = 20_000
    p = SamplingParams(samples=K, horizon=5, explore_fraction=fraction, gamma=0.0, seed=12)
    cs = ControllerState.initial(p, filter=SGFilter.identity())
    batch = sample_perturbations(p, 0)
    S = rollout_batch(np.zeros(1), cs, batch, null_model(), ZeroCost())
    assert np.all(S == S[0])
    new = update_plan(cs, batch, cs.weight_rule(S)).values
    assert np.all(np.abs(new) <= 4 * np.sqrt(p.sigma) / np.sqrt(K))


def test_zero_cost_pulls_plan_toward_zero():
    # expected update is -(gamma / lambda) U, so the unsmoothed iteration contracts
    p = SamplingParams(samples=500, horizon=10, lambda_=1.0, gamma=0.5, sigma=(0.05, 0.05), seed=2,
                       explore_fraction=0.0)
    cs = ControllerState(ControlPlan(np.full((10, 2), 0.5)), p, filter=SGFilter.identity())
    norms = [np.linalg.norm(cs.plan.values)]
    for _ in range(5):
        cs = optimize_to_convergence(np.zeros(1), cs, 1, null_model(), ZeroCost(), return_state=True)[1]
        norms.append(np.linalg.norm(cs.plan.values))
    assert np.all(np.diff(norms) < 0)
    # then it settles at the sampling-noise floor
    plan = optimize_to_convergence(np.zeros(1), cs, 30, null_model(), ZeroCost())
    assert np.linalg.norm(plan.values) < 0.05 * norms[0]


def test_smoother_negative_response_mode():
    # SG kernels respond negatively at high frequency, so under a pure control cost the
    # expected iteration U <- (I - gamma / lambda * SG) U amplifies those modes
    T = 80
    M = SGFilter(9, 3).transform(np.eye(T))
    ev = np.linalg.eigvalsh(0.5 * (M + M.T))
    assert ev.min() < -0.2
    p = SamplingParams(samples=2000, horizon=T, lambda_=1.0, gamma=0.5, sigma=(0.05, 0.05), seed=4,
                       explore_fraction=0.0)
    alt = np.where(np.arange(T) % 2 == 0, 1.0, -1.0)
    cs = ControllerState(ControlPlan(np.column_stack([alt, alt]) * 0.05), p)
    start = np.abs(cs.plan.values).mean()
    plan = optimize_to_convergence(np.zeros(1), cs, 10, null_model(), ZeroCost())
    assert np.abs(plan.values).mean() > start


def test_mpc_step_shift_and_clamp():
    p = SamplingParams(samples=50, horizon=8, seed=3)
    plan = np.linspace(-2, 2, 16).reshape(8, 2)
    cs = ControllerState(ControlPlan(plan), p, bounds=ControlBounds())
    model, cost = LinearModel(np.eye(2), np.eye(2)), QuadraticCost(np.eye(2), np.eye(2))
    u0, nxt, info = mpc_step(np.zeros(2), cs, model, cost, return_info=True)
    np.testing.assert_array_equal(u0.to_array(), np.clip(info.plan.values[0], -1, 1))
    np.testing.assert_array_equal(nxt.plan.values[:-1], info.plan.values[1:])
    np.testing.assert_array_equal(nxt.plan.values[-1], [0.0, 0.0])
    assert nxt.iteration == 1


def test_one_iteration_equals_mpc_step_without_shift():
    cs = driving_state(samples=300)
    model, cost = BicycleModel(), DrivingCost(CMAP)
    plan = optimize_to_convergence(X0, cs, 1, model, cost)
    _, _, info = mpc_step(X0, cs, model, cost, return_info=True)
    np.testing.assert_array_equal(plan.values, info.plan.values)
    with pytest.raises(ValueError):
        optimize_to_convergence(X0, cs, 0, model, cost)


def test_vehicle_defaults_configuration_runs():
    ctrl = MPPIController(model=BicycleModel(), cost=DrivingCost(CMAP), bounds=ControlBounds(), **VEHICLE_DEFAULTS)
    ctrl.reset()
    p = ctrl.state_.params
    assert (p.samples, p.horizon, p.lambda_, p.gamma) == (1200, 80, 12.5, 0.1)
    np.testing.assert_array_equal(p.sigma, [0.0306, 0.0506])
    u = ctrl.step(X0)
    assert np.all(np.abs(u.to_array()) <= 1)
    assert ctrl.last_info_.costs.shape == (1200,)
    assert ctrl.get_params()["lambda_"] == 12.5


def test_controller_estimator_is_reproducible():
    def run():
        c = MPPIController(model=BicycleModel(), cost=DrivingCost(CMAP), samples=200, horizon=15,
                           bounds=ControlBounds(), seed=9).fit()
        return np.array([c.step(X0).to_array() for _ in range(3)])
    np.testing.assert_array_equal(run(), run())


def test_median_plan_cost_trend_on_quadratic_problem():
    inst = double_integrator()
    model, cost = LinearModel(inst.A, inst.B), QuadraticCost(inst.Q, inst.Q_f)
    checkpoints = (0, 5, 10, 20, 40)
    costs = np.empty((20, len(checkpoints)))
    for seed in range(20):
        p = SamplingParams(samples=256, horizon=inst.T, dt=1.0, sigma=inst.sigma, lambda_=inst.lambda_,
                           gamma=inst.lambda_, explore_fraction=0.0, seed=seed)
        cs = ControllerState.initial(p, filter=SGFilter.identity())
        done = 0
        for j, n in enumerate(checkpoints):
            if n > done:
                _, cs = optimize_to_convergence(inst.x0, cs, n - done, model, cost, return_state=True)
                done = n
            costs[seed, j] = inst.cost(cs.plan.values)
    med = np.median(costs, axis=0)
    assert np.all(np.diff(med) <= 0)
    assert med[-1] < 0.5 * med[0]
