import math

import numpy as np
import pytest

from itmpc.verification import (FreeEnergyProbe, LQInstance, check_free_energy_bound, check_weighted_mean,
                                double_integrator, free_energy_quadrature, lq_convergence_error, lqr_oracle,
                                optimal_gaussian_posterior, pi_it_equivalence, random_equivalence_instance,
                                random_scalar_probe)


def brute_force_plan(inst):
    """Minimize the quadratic ``inst.cost`` by recovering its Hessian and gradient from evaluations."""
    n = inst.T * inst.B.shape[1]
    E = np.eye(n)

    def c(u):
        return inst.cost(u.reshape(inst.T, -1))

    c0 = c(np.zeros(n))
    ci = np.array([c(E[i]) for i in range(n)])
    H = np.array([[c(E[i] + E[j]) - ci[i] - ci[j] + c0 for j in range(n)] for i in range(n)])
    g = ci - c0 - 0.5 * np.diag(H)
    return np.linalg.solve(H, -g).reshape(inst.T, -1)


def test_riccati_scalar_example():
    inst = LQInstance([[1.0]], [[1.0]], [[0.0]], [[1.0]], 1, [1.0], [1.0], 2.0)
    np.testing.assert_allclose(lqr_oracle(inst), [[-0.5]], atol=1e-12)


def test_riccati_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(5):
        n, m, T = 3, 2, 6
        A = np.eye(n) + 0.2 * rng.normal(size=(n, n))
        B = rng.normal(size=(n, m))
        L = rng.normal(size=(n, n))
        inst = LQInstance(A, B, 0.3 * L @ L.T, np.diag(rng.uniform(0, 3, n)), T, rng.normal(size=n),
                          rng.uniform(0.2, 2, m), float(rng.uniform(0.1, 3)))
        np.testing.assert_allclose(lqr_oracle(inst), brute_force_plan(inst), atol=1e-8)
    di = double_integrator()
    np.testing.assert_allclose(lqr_oracle(di), brute_force_plan(di), atol=1e-8)


def test_riccati_zero_cost_and_scale_invariance():
    di = double_integrator()
    zero = LQInstance(di.A, di.B, np.zeros((2, 2)), np.zeros((2, 2)), di.T, di.x0, di.sigma, di.lambda_)
    np.testing.assert_array_equal(lqr_oracle(zero), np.zeros((di.T, 1)))
    doubled = LQInstance(di.A, di.B, 2 * di.Q, 2 * di.Q_f, di.T, di.x0, di.sigma, 2 * di.lambda_)
    np.testing.assert_allclose(lqr_oracle(doubled), lqr_oracle(di), rtol=1e-12, atol=1e-14)


def test_riccati_rejects_bad_inputs():
    di = double_integrator()
    bad = LQInstance(di.A, di.B, np.diag([1.0, -1.0]), di.Q_f, di.T, di.x0, di.sigma, di.lambda_)
    with pytest.raises(ValueError, match="semidefinite"):
        lqr_oracle(bad)
    asym = LQInstance(di.A, di.B, np.array([[1.0, 0.5], [0.0, 1.0]]), di.Q_f, di.T, di.x0, di.sigma, di.lambda_)
    with pytest.raises(ValueError, match="symmetric"):
        lqr_oracle(asym)
    with pytest.raises(ValueError):
        LQInstance(di.A, di.B, di.Q, di.Q_f, di.T, [1.0], di.sigma, di.lambda_)


def test_posterior_examples():
    assert optimal_gaussian_posterior(0.0, 3.0, 2.0)[0] == 0.0
    np.testing.assert_allclose(optimal_gaussian_posterior(1.0, 2.0, 1.0), (0.5, 0.5), atol=1e-15)
    mean, var = optimal_gaussian_posterior(1.0, 1e12, 0.7)
    np.testing.assert_allclose([mean, var], [0.0, 0.7], atol=1e-10)
    with pytest.raises(ValueError):
        optimal_gaussian_posterior(1.0, 0.0, 1.0)


def test_posterior_matches_quadrature():
    # E_{q*}[v] by direct integration of exp(-(v - a)^2 / lambda) N(v; 0, s2)
    a, lam, s2 = 0.8, 1.5, 0.6
    v = np.linspace(-10, 10, 200_001)
    dens = np.exp(-(v - a) ** 2 / lam - 0.5 * v * v / s2)
    mean = np.sum(v * dens) / np.sum(dens)
    var = np.sum((v - mean) ** 2 * dens) / np.sum(dens)
    np.testing.assert_allclose(optimal_gaussian_posterior(a, lam, s2), (mean, var), rtol=1e-8)


def test_weighted_mean_estimates():
    est = check_weighted_mean(1.0, 2.0, 1.0, 100_000, seed=3)
    assert abs(est.value - 0.5) <= 4 * est.se
    zero = check_weighted_mean(0.0, 2.0, 1.0, 20_000, seed=4)
    assert abs(zero.value) <= 4 * zero.se
    with pytest.raises(ValueError):
        check_weighted_mean(1.0, 2.0, 1.0, 999)


@pytest.mark.parametrize("proposal", [-0.5, 0.4, 1.0])
def test_weighted_mean_proposal_invariance(proposal):
    est = check_weighted_mean(1.0, 2.0, 1.0, 100_000, seed=5, proposal_mean=proposal)
    assert abs(est.value - 0.5) <= 4 * est.se
    # moving both the base and the target by 0.5 moves the optimal mean by 0.5
    shifted = check_weighted_mean(1.5, 2.0, 1.0, 100_000, seed=6, proposal_mean=proposal + 0.5, base_mean=0.5)
    assert abs(shifted.value - 1.0) <= 4 * shifted.se


def test_free_energy_constant_cost_equality():
    probe = FreeEnergyProbe(lambda V: np.full(V.shape[0], 3.7), [[0.0, 0.0]], [[0.0, 0.0]], [1.0, 2.0], 2.0, 1000)
    r = check_free_energy_bound(probe)
    assert r.lhs == r.rhs == 3.7 and r.margin == 0.0


def test_free_energy_quadratic_probe():
    probe = FreeEnergyProbe(lambda V: (V[:, 0, 0] - 1.0) ** 2, [[0.0]], [[0.5]], [1.0], 2.0, 40_000, seed=1)
    r = check_free_energy_bound(probe)
    exact = free_energy_quadrature(lambda v: (v - 1.0) ** 2, 2.0, 0.0, 1.0)
    # closed form: -lambda log( sqrt(lambda / (lambda + 2 s2)) exp(-a^2 / (lambda + 2 s2)) )
    closed = -2.0 * math.log(math.sqrt(2.0 / 4.0) * math.exp(-1.0 / 4.0))
    np.testing.assert_allclose(exact, closed, rtol=1e-9)
    assert abs(r.lhs - exact) <= 4 * r.se
    assert r.rhs - exact > 0
    assert r.holds


def test_free_energy_bound_tight_at_optimal_density():
    # for S = (v - a)^2 the optimal density is Gaussian; at its mean the gap is only the variance mismatch
    a, lam = 1.0, 2.0
    mean, _ = optimal_gaussian_posterior(a, lam, 1.0)
    exact = free_energy_quadrature(lambda v: (v - a) ** 2, lam, 0.0, 1.0)
    rhs_exact = (mean - a) ** 2 + 1.0 + lam * 0.5 * mean ** 2
    assert rhs_exact > exact
    assert rhs_exact - exact < 0.5


def test_random_probe_suite():
    rng = np.random.default_rng(7)
    ok = sum(check_free_energy_bound(random_scalar_probe(rng, i)[0]).holds for i in range(100))
    assert ok >= 99


def test_probe_validation():
    with pytest.raises(ValueError):
        FreeEnergyProbe(lambda V: V[:, 0, 0], [[0.0]], [[0.0]], [1.0], 1.0, 999)


@pytest.mark.parametrize("tall", [False, True])
def test_equivalence_holds(tall):
    rng = np.random.default_rng(11 + tall)
    for _ in range(10):
        r = pi_it_equivalence(*random_equivalence_instance(rng, tall))
        assert r.max_diff <= 1e-10


def test_equivalence_detects_mismatch_and_rank_deficiency():
    rng = np.random.default_rng(13)
    eps, costs, G, sigma, lam = random_equivalence_instance(rng, tall=True)
    B_bad = G @ np.diag(np.sqrt(sigma)) + 0.5 * rng.normal(size=G.shape)
    assert pi_it_equivalence(eps, costs, G, sigma, lam, B=B_bad).max_diff > 1e-3
    G_bad = np.column_stack([G[:, 0], G[:, 0]])
    with pytest.raises(np.linalg.LinAlgError):
        pi_it_equivalence(eps[..., :1].repeat(2, -1), costs, G_bad, [1.0, 1.0], lam)


def test_lq_sampling_approaches_riccati():
    rel_small, _ = lq_convergence_error(256, 40, seed=0)
    rel_big, _ = lq_convergence_error(1024, 60, seed=0)
    assert rel_big < 0.10
    assert rel_big < rel_small
