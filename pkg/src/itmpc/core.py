"""Shared domain types, sampling configuration and the counter-based noise sampler.

Every random draw in the package goes through :func:`counter_normals`, which
maps ``(key, stream position)`` to a standard normal value using numpy's
Philox counter-based bit generator.  Because a value depends only on its key
and position, any subset of samples can be regenerated independently and in
any order, which is what makes parallel rollouts reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

STATE_DIM = 7
CONTROL_DIM = 2
STATE_FIELDS = ("p_x", "p_y", "theta", "roll", "v_x", "v_y", "theta_dot")
CONTROL_FIELDS = ("steer", "throttle")

# Index constants into the flat state vector.
PX, PY, HEADING, ROLL, VX, VY, YAW_RATE = range(STATE_DIM)
KINEMATIC = slice(0, 3)
DYNAMIC = slice(3, 7)

_UINT64_MASK = (1 << 64) - 1


def round_half_up(x: float) -> int:
    """Round to the nearest integer with halves going up (not banker's rounding)."""
    return int(math.floor(x + 0.5))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class VehicleState:
    """Seven-dimensional vehicle state.

    ``roll`` is the chassis roll angle and ``theta_dot`` the heading (yaw) rate.
    Velocities are expressed in the body frame.
    """

    p_x: float = 0.0
    p_y: float = 0.0
    theta: float = 0.0
    roll: float = 0.0
    v_x: float = 0.0
    v_y: float = 0.0
    theta_dot: float = 0.0

    def __post_init__(self):
        for name in STATE_FIELDS:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"VehicleState.{name} must be finite, got {value}")
            object.__setattr__(self, name, value)

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in STATE_FIELDS])

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        if x.shape != (STATE_DIM,):
            raise ValueError(f"expected a {STATE_DIM}-vector, got shape {x.shape}")
        return cls(*x.tolist())


def flatten_state(s: VehicleState) -> np.ndarray:
    return s.to_array()


def unflatten_state(x) -> VehicleState:
    return VehicleState.from_array(x)


@dataclass(frozen=True)
class ControlInput:
    steer: float = 0.0
    throttle: float = 0.0

    def __post_init__(self):
        for name in CONTROL_FIELDS:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"ControlInput.{name} must be finite, got {value}")
            object.__setattr__(self, name, value)

    def to_array(self) -> np.ndarray:
        return np.array([self.steer, self.throttle])

    @classmethod
    def from_array(cls, v) -> "ControlInput":
        v = np.asarray(v, dtype=float)
        if v.shape != (CONTROL_DIM,):
            raise ValueError(f"expected a {CONTROL_DIM}-vector, got shape {v.shape}")
        return cls(float(v[0]), float(v[1]))


@dataclass(frozen=True, eq=False)
class ControlPlan:
    """Open-loop mean control sequence, stored as a read-only ``(T, m)`` array."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"plan must be a non-empty (T, m) array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("plan entries must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, horizon: int, dim: int = CONTROL_DIM) -> "ControlPlan":
        return cls(np.zeros((horizon, dim)))

    def shifted(self, fill=0.0) -> "ControlPlan":
        """Warm start: drop the first entry, slide the rest down, re-initialize the last."""
        out = np.empty_like(self.values)
        out[:-1] = self.values[1:]
        out[-1] = fill
        return ControlPlan(out)

    def __eq__(self, other):
        return isinstance(other, ControlPlan) and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class SamplingParams:
    """Sampling and weighting parameters.

    ``gamma`` is the control-cost coefficient; it corresponds to a base
    distribution centred on ``(1 - gamma / lambda_)`` times the current plan, so
    ``0 <= gamma <= lambda_`` is required.  ``explore_fraction`` is the share of
    samples drawn around zero instead of around the plan.
    """

    samples: int = 1200
    horizon: int = 80
    dt: float = 1.0 / 40.0
    sigma: Sequence[float] = (0.0306, 0.0506)
    lambda_: float = 12.5
    gamma: float = 0.1
    explore_fraction: float = 0.01
    base_mean: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        sigma = _frozen(np.atleast_1d(self.sigma))
        object.__setattr__(self, "sigma", sigma)
        if sigma.ndim != 1 or sigma.size < 1:
            raise ValueError("sigma must be a non-empty vector of diagonal variances")
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
            raise ValueError(f"sigma diagonal entries must be positive, got {sigma.tolist()}")
        if int(self.samples) < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if int(self.horizon) < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        object.__setattr__(self, "samples", int(self.samples))
        object.__setattr__(self, "horizon", int(self.horizon))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.lambda_ > 0 or not math.isfinite(self.lambda_):
            raise ValueError(f"lambda must be positive, got {self.lambda_}")
        if not 0 <= self.gamma <= self.lambda_:
            raise ValueError(
                f"gamma must satisfy 0 <= gamma <= lambda (base mixing 1 - gamma/lambda in [0, 1]), "
                f"got gamma={self.gamma}, lambda={self.lambda_}"
            )
        if not 0 <= self.explore_fraction < 1:
            raise ValueError(f"explore_fraction must lie in [0, 1), got {self.explore_fraction}")
        if self.base_mean is not None:
            base = _frozen(self.base_mean)
            if base.shape != (self.horizon, self.dim):
                raise ValueError(f"base_mean must have shape {(self.horizon, self.dim)}, got {base.shape}")
            object.__setattr__(self, "base_mean", base)
        if not 0 <= int(self.seed) <= _UINT64_MASK:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def dim(self) -> int:
        return self.sigma.size

    @property
    def sigma_inv(self) -> np.ndarray:
        return 1.0 / self.sigma

    @property
    def base_mixing(self) -> float:
        """Weight of the current plan in the base distribution mean."""
        return 1.0 - self.gamma / self.lambda_

    @property
    def n_explore(self) -> int:
        return round_half_up(self.explore_fraction * self.samples)

    def replace(self, **changes) -> "SamplingParams":
        kwargs = {
            "samples": self.samples, "horizon": self.horizon, "dt": self.dt,
            "sigma": self.sigma, "lambda_": self.lambda_, "gamma": self.gamma,
            "explore_fraction": self.explore_fraction, "base_mean": self.base_mean,
            "seed": self.seed,
        }
        kwargs.update(changes)
        return SamplingParams(**kwargs)

    # -- structured text I/O ------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "lambda": float(self.lambda_),
            "gamma": float(self.gamma),
            "sigma_diag": [float(s) for s in self.sigma],
            "horizon_steps": self.horizon,
            "dt": float(self.dt),
            "samples": self.samples,
            "explore_fraction": float(self.explore_fraction),
            "seed": self.seed,
        }
        if self.base_mean is not None:
            out["base_mean"] = self.base_mean.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingParams":
        known = {"lambda", "gamma", "sigma_diag", "horizon_steps", "dt", "samples",
                 "explore_fraction", "seed", "base_mean"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sampling keys: {sorted(unknown)}")
        kwargs = {}
        mapping = {"lambda": "lambda_", "sigma_diag": "sigma", "horizon_steps": "horizon"}
        for key, value in d.items():
            kwargs[mapping.get(key, key)] = value
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path) -> "SamplingParams":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})


VEHICLE_DEFAULTS = dict(dt=1.0 / 40.0, horizon=80, lambda_=12.5, gamma=0.1, sigma=(0.0306, 0.0506))


@dataclass(frozen=True, eq=False)
class PerturbationBatch:
    """``eps`` is ``(K, T, m)``; ``zero_mean`` flags the exploration samples."""

    eps: np.ndarray
    zero_mean: np.ndarray = field(default=None)

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=float)
        if eps.ndim != 3:
            raise ValueError(f"eps must be (K, T, m), got shape {eps.shape}")
        if not np.all(np.isfinite(eps)):
            raise ValueError("perturbations must be finite")
        flags = np.zeros(eps.shape[0], dtype=bool) if self.zero_mean is None else np.asarray(self.zero_mean, dtype=bool)
        if flags.shape != (eps.shape[0],):
            raise ValueError("zero_mean must have one flag per sample")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "zero_mean", flags)

    @property
    def samples(self) -> int:
        return self.eps.shape[0]


# -- counter-based Gaussian generator ------------------------------------------

def _uniform_open(raw: np.ndarray) -> np.ndarray:
    # 53 random bits mapped to the open interval (0, 1)
    return ((raw >> np.uint64(11)).astype(float) + 0.5) * (1.0 / 9007199254740992.0)


def counter_normals(key: tuple[int, int], start_block: int, n_blocks: int) -> np.ndarray:
    """Standard normals for Philox blocks ``[start_block, start_block + n_blocks)``.

    Each block yields four raw 64-bit words, turned into four normals by the
    Box-Muller transform applied to consecutive pairs.  The output for a given
    block depends only on ``key`` and the block index.
    """
    k0, k1 = (int(k) & _UINT64_MASK for k in key)
    bitgen = np.random.Philox(
        key=np.array([k0, k1], dtype=np.uint64),
        counter=np.array([int(start_block) & _UINT64_MASK, 0, 0, 0], dtype=np.uint64),
    )
    u = _uniform_open(bitgen.random_raw(4 * int(n_blocks))).reshape(-1, 2)
    radius = np.sqrt(-2.0 * np.log(u[:, 0]))
    angle = 2.0 * np.pi * u[:, 1]
    z = np.empty(u.shape)
    z[:, 0] = radius * np.cos(angle)
    z[:, 1] = radius * np.sin(angle)
    return z.reshape(-1)


def _blocks_per_sample(horizon: int, dim: int) -> int:
    return -(-(horizon * dim) // 4)


def sample_block(params: SamplingParams, iteration: int, start: int, stop: int) -> np.ndarray:
    """Noise for samples ``start..stop-1`` of the batch for ``iteration``.

    ``sample_block(p, i, a, b)`` equals ``sample_perturbations(p, i).eps[a:b]``
    bit for bit, so workers can draw their own slice.
    """
    T, m = params.horizon, params.dim
    per = _blocks_per_sample(T, m)
    z = counter_normals((params.seed, iteration), start * per, (stop - start) * per)
    z = z.reshape(stop - start, 4 * per)[:, : T * m].reshape(stop - start, T, m)
    return z * np.sqrt(params.sigma)


def sample_perturbations(params: SamplingParams, iteration: int) -> PerturbationBatch:
    """Draw K i.i.d. Gaussian noise sequences, each entry ``~ N(0, sigma)``.

    The last ``round(explore_fraction * K)`` samples are flagged zero-mean.
    """
    if iteration < 0:
        raise ValueError("iteration counter must be non-negative")
    K = params.samples
    eps = sample_block(params, iteration, 0, K)
    flags = np.zeros(K, dtype=bool)
    n_explore = params.n_explore
    if n_explore:
        flags[K - n_explore:] = True
    return PerturbationBatch(eps=eps, zero_mean=flags)


def gaussian_stream(seed: int, stream: int, index: int, dim: int) -> np.ndarray:
    """``dim`` standard normals addressed by ``(seed, stream, index)``.

    Used for simulator-side noise (execution noise, estimator noise) so those
    draws never collide with the controller's sampling streams.
    """
    per = -(-dim // 4)
    key = (seed ^ (0x9E3779B97F4A7C15 * (stream + 1)), 1 << 63 | index)
    return counter_normals(key, 0, per)[:dim]
