"""Trajectory weighting: information-theoretic softmin and cross-entropy elites."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import round_half_up
from .validation import check_costs


@dataclass(frozen=True, eq=False)
class WeightResult:
    """Normalized weights with the cost baseline ``rho`` and normalizer ``eta``.

    For the softmin rule the un-shifted normalizer is ``eta * exp(-rho / lambda)``.
    For the elite rule ``eta`` is the elite count.
    """

    weights: np.ndarray
    rho: float
    eta: float

    @property
    def effective_samples(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))


def it_weights(costs, lambda_: float) -> WeightResult:
    """``w_k = exp(-(S_k - rho) / lambda) / eta`` with ``rho = min S``."""
    S = check_costs(costs)
    if not lambda_ > 0:
        raise ValueError("lambda must be positive")
    rho = float(S.min())
    e = np.exp(-(S - rho) / lambda_)
    eta = float(np.sum(e))
    return WeightResult(e / eta, rho, eta)


def elite_count(K: int, delta: float) -> int:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    zeta = round_half_up(K * (1.0 - delta))
    if zeta < 1:
        raise ValueError(f"delta={delta} leaves no elite samples out of K={K}")
    return zeta


def cem_weights(costs, delta: float) -> WeightResult:
    """Equal weight ``1 / zeta`` on the ``zeta = round(K (1 - delta))`` lowest costs.

    Ranking is by ascending cost with ties broken by ascending index, so
    exactly ``zeta`` samples are selected.
    """
    S = check_costs(costs)
    zeta = elite_count(S.size, delta)
    order = np.argsort(S, kind="stable")
    w = np.zeros(S.size)
    w[order[:zeta]] = 1.0 / zeta
    return WeightResult(w, float(S[order[0]]), float(zeta))


class ITWeights:
    """Softmin rule with inverse temperature ``lambda_``."""

    name = "it"

    def __init__(self, lambda_: float):
        if not lambda_ > 0:
            raise ValueError("lambda must be positive")
        self.lambda_ = float(lambda_)

    def __call__(self, costs) -> WeightResult:
        return it_weights(costs, self.lambda_)

    def __repr__(self):
        return f"ITWeights(lambda_={self.lambda_})"


class CEMWeights:
    """Elite rule with eliteness threshold ``delta``."""

    name = "cem"

    def __init__(self, delta: float = 0.8):
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        self.delta = float(delta)

    def __call__(self, costs) -> WeightResult:
        return cem_weights(costs, self.delta)

    def __repr__(self):
        return f"CEMWeights(delta={self.delta})"
