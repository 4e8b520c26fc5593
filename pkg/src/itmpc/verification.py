"""Executable checks of the sampling-based control theory.

* A finite-horizon Riccati solver for linear-quadratic problems, used as the
  reference the iterative importance-sampling scheme must converge to.
* The free-energy bound ``-lambda F <= E_Q[S] + lambda KL(Q || P)``.
* The optimal input density ``q*(v) ~ exp(-S(v) / lambda) p(v)`` in closed form
  for a quadratic cost and Gaussian base, and its weighted-mean estimator.
* Equivalence of the path-integral control law
  ``R^-1 G^T (G R^-1 G^T)^-1 B sum w eps`` and the information-theoretic law
  ``sqrt(Sigma) sum w eps`` when ``B = G sqrt(Sigma)`` and ``R = lambda Sigma^-1``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .controller import ControllerState, optimize_to_convergence, weighted_perturbation
from .core import ControlPlan, SamplingParams, counter_normals
from .costs import QuadraticCost
from .dynamics import LinearModel
from .smoothing import SGFilter, sg_coefficients, sg_smooth
from .weights import it_weights


# -- linear-quadratic reference ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class LQInstance:
    """``x_{t+1} = A x_t + B u_t`` with cost ``sum_{t=1..T} x_t^T Q x_t + x_T^T Q_f x_T + sum_t u_t^T (lambda/2) Sigma^-1 u_t``."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    Q_f: np.ndarray
    T: int
    x0: np.ndarray
    sigma: np.ndarray  # diagonal variances
    lambda_: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        Q_f = np.atleast_2d(np.asarray(self.Q_f, dtype=float))
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if A.shape != (n, n) or Q.shape != (n, n) or Q_f.shape != (n, n) or x0.shape != (n,):
            raise ValueError("inconsistent LQ dimensions")
        if sigma.shape != (B.shape[1],):
            raise ValueError("sigma must hold one variance per input")
        if int(self.T) < 1:
            raise ValueError("horizon must be >= 1")
        for name, val in (("A", A), ("B", B), ("Q", Q), ("Q_f", Q_f), ("x0", x0), ("sigma", sigma)):
            object.__setattr__(self, name, val)

    @property
    def R(self) -> np.ndarray:
        """Control weight in the ``1/2 u^T R u`` convention: ``lambda Sigma^-1``."""
        return np.diag(self.lambda_ / self.sigma)

    def cost(self, U) -> float:
        U = np.asarray(U, dtype=float).reshape(self.T, -1)
        x = self.x0
        total = 0.0
        for t in range(self.T):
            total += 0.5 * U[t] @ self.R @ U[t]
            x = self.A @ x + self.B @ U[t]
            total += x @ self.Q @ x
        return float(total + x @ self.Q_f @ x)


def _check_psd(M, name, strict=False):
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError(f"{name} must be symmetric")
    ev = np.linalg.eigvalsh(M)
    tol = 1e-12 * max(1.0, np.abs(ev).max())
    if strict and ev.min() <= tol:
        raise ValueError(f"{name} must be positive definite")
    if ev.min() < -tol:
        raise ValueError(f"{name} must be positive semidefinite")


def lqr_oracle(inst: LQInstance) -> np.ndarray:
    """Optimal open-loop inputs ``(T, m)`` by a backward Riccati pass and forward rollout."""
    _check_psd(inst.Q, "Q")
    _check_psd(inst.Q_f, "Q_f")
    R_half = 0.5 * inst.R  # the state cost carries no 1/2, so match conventions
    _check_psd(R_half, "R", strict=True)
    A, B, T = inst.A, inst.B, inst.T
    P = inst.Q + inst.Q_f
    gains = [None] * T
    for t in range(T - 1, -1, -1):
        K = np.linalg.solve(R_half + B.T @ P @ B, B.T @ P @ A)
        gains[t] = K
        Q_t = inst.Q if t > 0 else np.zeros_like(inst.Q)
        P = Q_t + A.T @ P @ (A - B @ K)
        P = 0.5 * (P + P.T)
    U = np.empty((T, B.shape[1]))
    x = inst.x0
    for t in range(T):
        U[t] = -gains[t] @ x
        x = A @ x + B @ U[t]
    return U


def double_integrator(T: int = 20, dt: float = 0.05, lambda_: float = 0.02, sigma: float = 1.0,
                      q: float = 1.0, q_f: float = 10.0, x0=(1.0, 0.0)) -> LQInstance:
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.5 * dt * dt], [dt]])
    return LQInstance(A, B, np.diag([q, 0.1 * q]), np.diag([q_f, 0.1 * q_f]), T, np.asarray(x0), [sigma], lambda_)


def solve_lq_by_sampling(inst: LQInstance, samples: int, iterations: int, seed: int = 0, workers: int = 1):
    """Run the importance-sampling optimizer on an LQ instance.

    The control cost coefficient equals ``lambda`` (base distribution centred
    on zero) and the smoother is the identity, so the fixed point is the mean
    of the optimal input density, which for LQ problems is the Riccati plan.
    """
    params = SamplingParams(samples=samples, horizon=inst.T, dt=1.0, sigma=inst.sigma, lambda_=inst.lambda_,
                            gamma=inst.lambda_, explore_fraction=0.0, seed=seed)
    cs = ControllerState.initial(params, filter=SGFilter.identity())
    return optimize_to_convergence(inst.x0, cs, iterations, LinearModel(inst.A, inst.B),
                                   QuadraticCost(inst.Q, inst.Q_f), workers).values


# -- free energy ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FreeEnergyProbe:
    """``cost`` maps an ``(N, T, m)`` batch of input sequences to ``N`` costs."""

    cost: Callable[[np.ndarray], np.ndarray]
    base_mean: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    lambda_: float
    samples: int = 4000
    seed: int = 0

    def __post_init__(self):
        base = np.atleast_2d(np.asarray(self.base_mean, dtype=float))
        mean = np.atleast_2d(np.asarray(self.mean, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if base.shape != mean.shape or sigma.shape != (base.shape[1],):
            raise ValueError("base_mean, mean and sigma dimensions disagree")
        if self.samples < 1000:
            raise ValueError("free-energy probes need at least 1000 samples")
        if not self.lambda_ > 0 or np.any(sigma <= 0):
            raise ValueError("lambda and sigma must be positive")
        object.__setattr__(self, "base_mean", base)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class BoundResult:
    lhs: float
    rhs: float
    margin: float
    se: float  # standard error of the margin

    @property
    def holds(self) -> bool:
        return self.margin >= -3.0 * self.se


def _standard_normals(seed: int, stream: int, n: int, shape) -> np.ndarray:
    size = int(np.prod(shape))
    per = -(-size // 4)
    z = counter_normals((seed, stream), 0, n * per).reshape(n, 4 * per)[:, :size]
    return z.reshape((n,) + tuple(shape))


def check_free_energy_bound(probe: FreeEnergyProbe) -> BoundResult:
    """Monte-Carlo estimates of both sides of ``-lambda F <= E_Q[S] + lambda KL``.

    ``lhs = -lambda log E_P[exp(-S / lambda)]`` uses samples from the base
    ``P = N(U~, Sigma)``; ``rhs`` uses the same noise shifted to
    ``Q = N(U, Sigma)`` plus ``lambda`` times the closed-form Gaussian KL.
    """
    lam = probe.lambda_
    eps = _standard_normals(probe.seed, 0, probe.samples, probe.base_mean.shape) * np.sqrt(probe.sigma)
    S_p = np.asarray(probe.cost(probe.base_mean[None] + eps), dtype=float)
    S_q = np.asarray(probe.cost(probe.mean[None] + eps), dtype=float)
    n = probe.samples
    rho = S_p.min()
    e = np.exp(-(S_p - rho) / lam)
    lhs = rho - lam * math.log(e.mean())
    se_lhs = lam * e.std() / (math.sqrt(n) * e.mean())
    d = probe.mean - probe.base_mean
    kl = 0.5 * float(np.sum(d * d / probe.sigma))
    rho_q = S_q.min()
    rhs = rho_q + float(np.mean(S_q - rho_q)) + lam * kl
    se_rhs = float(S_q.std() / math.sqrt(n))
    return BoundResult(float(lhs), float(rhs), float(rhs - lhs), float(math.hypot(se_lhs, se_rhs)))


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10, max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature with Richardson correction."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return rec(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


def free_energy_quadrature(cost_1d, lambda_: float, base_mean: float, sigma2: float) -> float:
    """``-lambda log E_P[exp(-S/lambda)]`` for scalar ``P = N(base_mean, sigma2)`` by quadrature over +-8 sd."""
    sd = math.sqrt(sigma2)

    def integrand(v):
        return math.exp(-cost_1d(v) / lambda_ - 0.5 * (v - base_mean) ** 2 / sigma2) / math.sqrt(2 * math.pi * sigma2)

    return -lambda_ * math.log(adaptive_simpson(integrand, base_mean - 8 * sd, base_mean + 8 * sd))


def random_scalar_probe(rng: np.random.Generator, seed: int, samples: int = 4000):
    """A random 1-D probe with a smooth non-quadratic cost; returns ``(probe, scalar cost)``."""
    a, c, amp, freq = rng.uniform(-2, 2), rng.uniform(0.2, 3.0), rng.uniform(0, 1), rng.uniform(0.5, 3)

    def scalar(v):
        return c * (v - a) ** 2 + amp * math.sin(freq * v)

    def batch(V):
        v = V[:, 0, 0]
        return c * (v - a) ** 2 + amp * np.sin(freq * v)

    probe = FreeEnergyProbe(batch, [[0.0]], [[rng.uniform(-2, 2)]], [rng.uniform(0.2, 2.0)],
                            float(rng.uniform(0.5, 5.0)), samples, seed)
    return probe, scalar


# -- optimal density ------------------------------------------------------------------

def optimal_gaussian_posterior(a: float, lambda_: float, sigma2: float):
    """Mean and variance of ``q*(v) ~ exp(-(v - a)^2 / lambda) N(v; 0, sigma2)``."""
    if not (lambda_ > 0 and sigma2 > 0):
        raise ValueError("lambda and sigma2 must be positive")
    precision = 1.0 / sigma2 + 2.0 / lambda_
    return (2.0 * a / lambda_) / precision, 1.0 / precision


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float


def check_weighted_mean(a: float, lambda_: float, sigma2: float, K: int, seed: int = 0,
                        proposal_mean: float = 0.0, base_mean: float = 0.0) -> Estimate:
    """Importance-sampled ``E_{q*}[v]`` from ``K`` draws of ``N(proposal_mean, sigma2)``.

    The weight is ``exp(-(S + lambda (u^ - u~) v / sigma2) / lambda)``, which
    corrects for sampling around ``u^`` instead of the base mean ``u~``.
    """
    if K < 1000:
        raise ValueError("need K >= 1000 samples")
    v = proposal_mean + math.sqrt(sigma2) * _standard_normals(seed, 1, K, (1,))[:, 0]
    S = (v - a) ** 2 + lambda_ * (proposal_mean - base_mean) * v / sigma2
    w = it_weights(S, lambda_).weights
    est = float(weighted_perturbation(w, v[:, None])[0])
    se = float(math.sqrt(np.sum(w * w * (v - est) ** 2)))
    return Estimate(est, se)


# -- path integral / information theoretic equivalence ------------------------------

@dataclass(frozen=True)
class EquivalenceResult:
    u_pi: np.ndarray
    u_it: np.ndarray
    max_diff: float


def pi_it_equivalence(eps, costs, G, sigma, lambda_: float, B=None) -> EquivalenceResult:
    """Evaluate both control laws on shared standard-normal samples ``eps`` (``(K, m)`` or ``(K, T, m)``).

    ``B`` defaults to ``G sqrt(Sigma)``.  A pseudo-inverse handles tall ``G``,
    where ``G R^-1 G^T`` has rank ``m``; ``G`` must have full column rank.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    sigma = np.asarray(sigma, dtype=float)
    Sigma = np.diag(sigma) if sigma.ndim == 1 else sigma
    m = Sigma.shape[0]
    if G.shape[1] != m:
        raise ValueError(f"G must have {m} columns")
    if np.linalg.matrix_rank(G) < m:
        raise np.linalg.LinAlgError("G R^-1 G^T is singular on the input space: G lacks full column rank")
    sqrt_sigma = np.linalg.cholesky(Sigma)
    B = G @ sqrt_sigma if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    R_inv = np.linalg.inv(lambda_ * np.linalg.inv(Sigma))
    proj = R_inv @ G.T @ np.linalg.pinv(G @ R_inv @ G.T) @ B
    w = it_weights(costs, lambda_).weights
    avg = weighted_perturbation(w, np.asarray(eps, dtype=float))
    u_pi = avg @ proj.T
    u_it = avg @ sqrt_sigma.T
    return EquivalenceResult(u_pi, u_it, float(np.max(np.abs(u_pi - u_it))))


def random_equivalence_instance(rng: np.random.Generator, tall: bool, K: int = 256, T: int = 5):
    m = int(rng.integers(1, 4))
    n = m + int(rng.integers(1, 4)) if tall else m
    G = rng.normal(size=(n, m))
    sigma = rng.uniform(0.05, 2.0, m)
    eps = rng.normal(size=(K, T, m))
    costs = rng.uniform(0, 10, K)
    return eps, costs, G, sigma, float(rng.uniform(0.5, 20.0))


# -- suite ----------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    statistic: float
    threshold: float
    passed: bool
    note: str = ""


def lq_convergence_error(samples: int = 4096, iterations: int = 100, seed: int = 0, inst: Optional[LQInstance] = None):
    """Relative RMS gap between the sampled plan and the Riccati plan, plus runtime."""
    inst = inst if inst is not None else default_lq_instance()
    U_star = lqr_oracle(inst)
    t0 = time.perf_counter()
    U = solve_lq_by_sampling(inst, samples, iterations, seed)
    elapsed = time.perf_counter() - t0
    rel = float(np.sqrt(np.mean((U - U_star) ** 2)) / np.sqrt(np.mean(U_star ** 2)))
    return rel, elapsed


def default_lq_instance() -> LQInstance:
    return double_integrator()


def run_suite(seed: int = 0, quick: bool = False) -> list:
    """Run every check; a check that is expected to show a difference passes when it does."""
    out = []
    rng = np.random.default_rng(seed)

    # weights
    w = it_weights([0.0, 1.0, 2.0], 1.0).weights
    err = float(np.max(np.abs(w - np.array([0.66524, 0.24473, 0.09003]))))
    out.append(CheckResult("softmin_reference", err, 1e-4, err <= 1e-4))
    # costs on a 1/1024 grid so that c + 1e9 is exact in double precision
    c = np.round(rng.uniform(0, 5, 100) * 1024) / 1024
    w1, w2 = it_weights(c, 1.0).weights, it_weights(c + 1e9, 1.0).weights
    rel = float(np.max(np.abs(w1 - w2) / np.maximum(np.abs(w1), 1e-300)))
    out.append(CheckResult("softmin_shift_invariance", rel, 1e-12, rel <= 1e-12))

    # smoothing
    k_err = float(np.max(np.abs(sg_coefficients(5, 2) - np.array([-3, 12, 17, 12, -3]) / 35.0)))
    out.append(CheckResult("sg_kernel_5_2", k_err, 1e-12, k_err <= 1e-12))
    t = np.arange(30.0)
    q = 0.3 * t ** 2 - 2 * t + 1
    q_err = float(np.max(np.abs(sg_smooth(q, sg_coefficients(5, 2))[2:-2] - q[2:-2])))
    out.append(CheckResult("sg_quadratic_reproduction", q_err, 1e-9, q_err <= 1e-9))

    # optimal density and estimator
    mean, var = optimal_gaussian_posterior(1.0, 2.0, 1.0)
    out.append(CheckResult("posterior_closed_form", abs(mean - 0.5) + abs(var - 0.5), 1e-15,
                           abs(mean - 0.5) + abs(var - 0.5) <= 1e-15))
    est = check_weighted_mean(1.0, 2.0, 1.0, 100_000, seed)
    z = abs(est.value - 0.5) / est.se
    out.append(CheckResult("weighted_mean_z", z, 4.0, z <= 4.0))
    est = check_weighted_mean(1.0, 2.0, 1.0, 100_000, seed, proposal_mean=0.7)
    z = abs(est.value - 0.5) / est.se
    out.append(CheckResult("weighted_mean_shifted_proposal_z", z, 4.0, z <= 4.0))

    # free energy
    const = FreeEnergyProbe(lambda V: np.full(V.shape[0], 3.7), [[0.0]], [[0.0]], [1.0], 2.0, 2000, seed)
    r = check_free_energy_bound(const)
    out.append(CheckResult("free_energy_constant_equality", abs(r.margin), 0.0,
                           r.lhs == r.rhs == 3.7))
    quad = FreeEnergyProbe(lambda V: (V[:, 0, 0] - 1.0) ** 2, [[0.0]], [[0.5]], [1.0], 2.0, 20000, seed)
    r = check_free_energy_bound(quad)
    exact = free_energy_quadrature(lambda v: (v - 1.0) ** 2, 2.0, 0.0, 1.0)
    out.append(CheckResult("free_energy_quadrature_margin", r.rhs - exact, 0.0, r.rhs - exact > 0))
    n_ok = 0
    for i in range(100):
        probe, _ = random_scalar_probe(rng, seed * 1000 + i)
        n_ok += check_free_energy_bound(probe).holds
    out.append(CheckResult("free_energy_random_suite", n_ok, 99, n_ok >= 99))

    # estimator equivalence
    worst = 0.0
    for i in range(50):
        worst = max(worst, pi_it_equivalence(*random_equivalence_instance(rng, tall=bool(i % 2))).max_diff)
    out.append(CheckResult("pi_it_equivalence_max_diff", worst, 1e-10, worst <= 1e-10))
    eps, costs, G, sigma, lam = random_equivalence_instance(rng, tall=True)
    B_bad = G @ np.diag(np.sqrt(sigma)) + 0.5 * rng.normal(size=G.shape)
    diff = pi_it_equivalence(eps, costs, G, sigma, lam, B=B_bad).max_diff
    out.append(CheckResult("pi_it_mismatch_detected", diff, 1e-6, diff > 1e-6, "expected difference (B != G sqrt(Sigma))"))

    # linear-quadratic
    scalar = LQInstance([[1.0]], [[1.0]], [[0.0]], [[1.0]], 1, [1.0], [1.0], 2.0)
    u = float(lqr_oracle(scalar)[0, 0])
    out.append(CheckResult("riccati_scalar", abs(u + 0.5), 1e-12, abs(u + 0.5) <= 1e-12))
    if quick:
        rel, _ = lq_convergence_error(1024, 60, seed)
        out.append(CheckResult("lq_sampling_convergence", rel, 0.10, rel <= 0.10))
    else:
        rel, _ = lq_convergence_error(4096, 100, seed)
        out.append(CheckResult("lq_sampling_convergence", rel, 0.05, rel <= 0.05))
    return out
