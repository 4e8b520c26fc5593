"""Vehicle models: brush-tire bicycle plant, basis-function model, MLP model.

All models share the same batched interface::

    model.step(x, v, dt) -> x_next      # x: (N, 7), v: (N, 2) already clamped

The dynamic part of the state ``(roll, v_x, v_y, theta_dot)`` is advanced by a
model-specific acceleration and the kinematic part ``(p_x, p_y, theta)`` by
rotating the body-frame velocity into the world frame.  Hot loops are numba
kernels that treat each row independently, so a row's result never depends
on how the batch was split.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import CONTROL_DIM, STATE_DIM, ControlInput, VehicleState
from .validation import check_batch, check_xy

logger = logging.getLogger(__name__)

N_BASIS = 25
DYN_DIM = 4
SLIP_GUARD = 0.1  # m/s; slip angles use their "otherwise" branch at or below this speed


class TireSaturationError(ValueError):
    """Longitudinal force exceeds the friction circle, so the lateral force is undefined."""


# -- control constraints -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class ControlBounds:
    lower: np.ndarray = field(default_factory=lambda: np.array([-1.0, -1.0]))
    upper: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0]))

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float).reshape(-1)
        upper = np.array(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise ValueError("lower and upper bounds must have the same length")
        if not np.all(lower < upper):
            raise ValueError(f"bounds require lower < upper componentwise, got {lower} / {upper}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unbounded(cls, dim: int) -> "ControlBounds":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    def clip(self, v: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(v, self.lower), self.upper)


def clamp_controls(v, bounds: ControlBounds):
    """Componentwise saturation of a control (or batch of controls) into ``bounds``."""
    if isinstance(v, ControlInput):
        return ControlInput.from_array(bounds.clip(v.to_array()))
    return bounds.clip(np.asarray(v, dtype=float))


# -- brush tire bicycle model ----------------------------------------------------

@dataclass(frozen=True)
class BicycleParams:
    """Physical parameters of the single-track plant.

    Only the 22 kg mass and the 0.45 m / 0.35 m axle distances come from the
    vehicle description; the remaining defaults are plausible values for a
    1:5 scale car on dirt and are not measured quantities.
    """

    M: float = 22.0
    I_z: float = 1.8
    a: float = 0.45
    b: float = 0.35
    C: float = 1200.0
    mu: float = 0.65
    F_z: float = 22.0 * 9.81 / 2.0
    steer_scale: float = 0.35
    force_scale: float = 0.5 * 0.65 * 22.0 * 9.81 / 2.0

    def __post_init__(self):
        for name in ("M", "I_z", "a", "b", "C", "mu", "F_z", "steer_scale", "force_scale"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"BicycleParams.{name} must be positive, got {value}")

    def as_array(self) -> np.ndarray:
        return np.array([self.M, self.I_z, self.a, self.b, self.C, self.mu, self.F_z,
                         self.steer_scale, self.force_scale])


@njit(cache=True, nogil=True)
def _tire_force(alpha, u_f, C, mu, f_z):
    mf = mu * f_z
    f_max = math.sqrt(mf * mf - u_f * u_f)  # = xi * mu * F_z
    crossover = abs(math.atan(3.0 * f_max / C))
    if abs(alpha) >= crossover:
        if alpha > 0:
            return -f_max
        elif alpha < 0:
            return f_max
        return 0.0
    ta = math.tan(alpha)
    return -C * ta + C * C / (3.0 * f_max) * ta * abs(ta) - C ** 3 / (27.0 * f_max * f_max) * ta ** 3


def brush_tire_force(alpha, u_F, p: BicycleParams):
    """Lateral tire force (N) at slip angle ``alpha`` with longitudinal force ``u_F``.

    Linear-cubic below the sliding angle ``atan(3 xi mu F_z / C)``, friction
    saturated at ``-mu xi F_z sign(alpha)`` above it, where
    ``xi = sqrt(mu^2 F_z^2 - u_F^2) / (mu F_z)``.
    """
    alpha_a = np.asarray(alpha, dtype=float)
    u_a = np.broadcast_to(np.asarray(u_F, dtype=float), alpha_a.shape)
    if np.any(np.abs(u_a) > p.mu * p.F_z):
        raise TireSaturationError(f"|u_F| must not exceed mu*F_z = {p.mu * p.F_z:.6g} N")
    out = np.empty(alpha_a.shape)
    flat_a, flat_u, flat_o = alpha_a.reshape(-1), u_a.reshape(-1), out.reshape(-1)
    for i in range(flat_a.size):
        flat_o[i] = _tire_force(flat_a[i], flat_u[i], p.C, p.mu, p.F_z)
    return float(out) if out.ndim == 0 else out


@njit(cache=True, nogil=True)
def _bicycle_row(xin, out, v0, v1, dt, prm, substeps):
    M, I_z, a, b, C, mu, f_z, steer_scale, force_scale = (
        prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6], prm[7], prm[8])
    h = dt / substeps
    px, py, psi, roll, vx, vy, r = xin[0], xin[1], xin[2], xin[3], xin[4], xin[5], xin[6]
    delta = steer_scale * v0
    u_f = force_scale * v1
    sd = math.sin(delta)
    for _ in range(substeps):
        if vx > 0.1:
            beta = math.atan(vy / vx)
            alpha_f = math.atan(beta + a * r / vx) - delta
            alpha_r = math.atan(beta - b * r / vx)
        else:
            beta = 0.0
            alpha_f = -delta
            alpha_r = 0.0
        fyf = _tire_force(alpha_f, 0.0, C, mu, f_z)
        fyr = _tire_force(alpha_r, u_f, C, mu, f_z)
        dvx = (u_f - fyf * sd) / M + r * vx * beta
        dvy = (fyf + fyr) / M - r * vx
        dr = (a * fyf - b * fyr) / I_z
        c, s = math.cos(psi), math.sin(psi)
        px += (vx * c - vy * s) * h
        py += (vx * s + vy * c) * h
        psi += r * h
        vx += dvx * h
        vy += dvy * h
        r += dr * h
    out[0], out[1], out[2], out[3] = px, py, psi, roll
    out[4], out[5], out[6] = vx, vy, r


@njit(cache=True, nogil=True)
def _bicycle_step(x, v, dt, prm, substeps):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        _bicycle_row(x[i], out[i], v[i, 0], v[i, 1], dt, prm, substeps)
    return out


def _as_batch(x, v):
    single = isinstance(x, VehicleState)
    xa = x.to_array()[None] if single else check_batch(x, STATE_DIM, "state")
    va = v.to_array()[None] if isinstance(v, ControlInput) else check_batch(v, CONTROL_DIM, "control")
    if va.shape[0] != xa.shape[0]:
        va = np.broadcast_to(va, (xa.shape[0], CONTROL_DIM))
    return xa, np.ascontiguousarray(va), single


def step_bicycle_truth(x, v, dt: float, p: BicycleParams = BicycleParams(), substeps: int = 1):
    """Explicit-Euler step of the brush-tire bicycle model.

    ``v`` holds normalized (steer, throttle) commands, mapped to a steering
    angle and a rear-wheel force by ``steer_scale`` / ``force_scale``.  Roll is
    carried through unchanged since the model has no roll equation.
    ``substeps`` splits ``dt`` into equal explicit-Euler sub-steps.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    xa, va, single = _as_batch(x, v)
    if np.any(np.abs(p.force_scale * va[:, 1]) > p.mu * p.F_z):
        raise TireSaturationError(f"commanded rear force exceeds mu*F_z = {p.mu * p.F_z:.6g} N")
    out = _bicycle_step(np.ascontiguousarray(xa), va, float(dt), p.as_array(), int(substeps))
    return VehicleState.from_array(out[0]) if single else out


class BicycleModel:
    """Batched wrapper around :func:`step_bicycle_truth`."""

    kernel = "bicycle"

    def __init__(self, params: BicycleParams = BicycleParams(), substeps: int = 1):
        self.params = params
        self.substeps = int(substeps)

    def kernel_args(self):
        return self.params.as_array(), self.substeps

    def step(self, x, v, dt):
        return step_bicycle_truth(x, v, dt, self.params, self.substeps)


# -- basis function model ------------------------------------------------------

@njit(cache=True, nogil=True)
def _basis_row(phi, roll, vx, vy, r, u_d, u_f):
    # r is the yaw rate and roll the chassis roll angle
    if vx > 0.1:
        alpha_f = math.atan(vy / vx + 0.45 * r / vx - u_d)
        alpha_r = math.atan(vy / vx - 0.35 * r / vx)
        ratio = vy / vx / 40.0
    else:
        alpha_f = -u_d
        alpha_r = 0.0
        ratio = 0.0
    sd = math.sin(u_d)
    tf = math.tan(alpha_f)
    tr = math.tan(alpha_r)
    phi[0] = u_f
    phi[1] = vx / 10.0
    phi[2] = sd * tf / 1200.0
    phi[3] = sd * tf * abs(tf) / 1200.0 ** 2
    phi[4] = sd * tf ** 3 / 1200.0 ** 3
    phi[5] = r * vy / 25.0
    phi[6] = r / 10.0
    phi[7] = vy / 10.0
    phi[8] = sd
    phi[9] = ratio
    phi[10] = tf / 1400.0
    phi[11] = tf * abs(tf) / 1400.0 ** 2
    phi[12] = tf ** 3 / 1400.0 ** 3
    phi[13] = tr / 40.0
    phi[14] = tr * abs(tr) / 40.0 ** 2
    phi[15] = tr ** 3 / 40.0 ** 3
    phi[16] = r * vx / 50.0
    phi[17] = roll
    phi[18] = roll * r
    phi[19] = roll * vx / 3.0
    phi[20] = roll * vx * r / 5.0
    phi[21] = vx ** 2 / 100.0
    phi[22] = vx ** 3 / 1000.0
    phi[23] = u_f ** 2
    phi[24] = u_f ** 3


@njit(cache=True, nogil=True)
def _basis_matrix(xd, v):
    n = xd.shape[0]
    out = np.empty((n, 25))
    for i in range(n):
        _basis_row(out[i], xd[i, 0], xd[i, 1], xd[i, 2], xd[i, 3], v[i, 0], v[i, 1])
    return out


@njit(cache=True, nogil=True)
def _kinematic_row(xin, out, dt):
    psi, vx, vy = xin[2], xin[4], xin[5]
    c, s = math.cos(psi), math.sin(psi)
    out[0] = xin[0] + (c * vx - s * vy) * dt
    out[1] = xin[1] + (s * vx + c * vy) * dt
    out[2] = psi + xin[6] * dt


@njit(cache=True, nogil=True)
def _kinematic_update(x, out, dt):
    for i in range(x.shape[0]):
        _kinematic_row(x[i], out[i], dt)


@njit(cache=True, nogil=True)
def _basis_row_step(xin, out, v0, v1, dt, theta, phi):
    _kinematic_row(xin, out, dt)
    _basis_row(phi, xin[3], xin[4], xin[5], xin[6], v0, v1)
    for j in range(4):
        acc = 0.0
        for k in range(25):
            acc += theta[k, j] * phi[k]
        out[3 + j] = xin[3 + j] + acc * dt


@njit(cache=True, nogil=True)
def _basis_step(x, v, dt, theta):
    out = np.empty_like(x)
    phi = np.empty(25)
    for i in range(x.shape[0]):
        _basis_row_step(x[i], out[i], v[i, 0], v[i, 1], dt, theta, phi)
    return out


def eval_basis(x_d, v) -> np.ndarray:
    """The 25 basis functions at dynamic state(s) ``x_d = (roll, v_x, v_y, yaw_rate)``.

    Accepts a single 4-vector and 2-vector, or ``(N, 4)`` and ``(N, 2)`` batches.
    """
    xd = np.asarray(x_d, dtype=float)
    va = v.to_array() if isinstance(v, ControlInput) else np.asarray(v, dtype=float)
    single = xd.ndim == 1
    xd2 = check_batch(xd, DYN_DIM, "dynamic state")
    va2 = check_batch(va, CONTROL_DIM, "control")
    out = _basis_matrix(np.ascontiguousarray(xd2), np.ascontiguousarray(va2))
    return out[0] if single else out


def _check_theta(theta) -> np.ndarray:
    theta = np.ascontiguousarray(theta, dtype=float)
    if theta.shape != (N_BASIS, DYN_DIM):
        raise ValueError(f"theta must be {N_BASIS}x{DYN_DIM}, got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta entries must be finite")
    return theta


def step_basis_model(x, v, dt: float, theta):
    """``x_d += theta^T phi(x_d, v) dt``; kinematics advance with the current velocities."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    theta = _check_theta(theta)
    xa, va, single = _as_batch(x, v)
    out = _basis_step(np.ascontiguousarray(xa), va, float(dt), theta)
    return VehicleState.from_array(out[0]) if single else out


class SingularSystemError(np.linalg.LinAlgError):
    pass


def fit_theta(features, targets, reg: float = 1e-8, normalize: bool = True) -> np.ndarray:
    """Tikhonov-regularized least squares for the coefficient matrix.

    Returns ``Theta = (Phi^T Phi + reg D^2)^-1 Phi^T Y`` where ``D`` holds the
    RMS of each basis column (``D = I`` with ``normalize=False``).  The basis
    functions span many orders of magnitude, so penalizing in column-normalized
    units keeps a small ``reg`` from wiping out the coefficients of the tiny
    columns.  The problem is solved as an augmented least-squares system via
    SVD rather than through the normal equations.
    """
    Phi = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if Phi.ndim != 2 or Y.ndim != 2 or Phi.shape[0] != Y.shape[0]:
        raise ValueError(f"features {Phi.shape} and targets {Y.shape} must be row-aligned matrices")
    if reg < 0:
        raise ValueError("reg must be non-negative")
    n, b = Phi.shape
    if n < b:
        if reg == 0:
            raise SingularSystemError(f"{n} rows cannot determine {b} coefficients without regularization; use reg > 0")
        logger.warning("underdetermined fit: %d rows for %d coefficients; relying on reg=%g", n, b, reg)
    if normalize:
        scale = np.sqrt(np.mean(Phi ** 2, axis=0))
        scale[scale == 0] = 1.0
    else:
        scale = np.ones(b)
    A = Phi / scale
    rhs = Y
    if reg > 0:
        A = np.vstack([A, math.sqrt(reg) * np.eye(b)])
        rhs = np.vstack([rhs, np.zeros((b, Y.shape[1]))])
    sol, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < b:
        raise SingularSystemError(
            f"normal equations are singular (rank {rank} < {b}); use a positive Tikhonov coefficient reg > 0")
    return sol / scale[:, None]


class BasisFunctionModel(BaseEstimator, RegressorMixin):
    """Basis-function dynamics, ``f(x_d, v) = theta^T phi(x_d, v)``.

    ``fit(X, y)`` takes ``X = [x_d | v]`` with shape ``(n, 6)`` and
    ``y = d(x_d)/dt`` with shape ``(n, 4)``; ``predict`` returns derivatives and
    ``step`` advances full 7-dimensional states.
    """

    def __init__(self, reg=1e-8, normalize=True):
        self.reg = reg
        self.normalize = normalize

    @classmethod
    def from_theta(cls, theta, **params) -> "BasisFunctionModel":
        model = cls(**params)
        model.theta_ = _check_theta(theta)
        model.n_features_in_ = DYN_DIM + CONTROL_DIM
        return model

    def fit(self, X, y):
        X, y = check_xy(X, y, DYN_DIM + CONTROL_DIM, DYN_DIM)
        self.theta_ = fit_theta(eval_basis(X[:, :DYN_DIM], X[:, DYN_DIM:]), y, self.reg, self.normalize)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "theta_")
        X = check_batch(X, DYN_DIM + CONTROL_DIM, "X")
        return eval_basis(X[:, :DYN_DIM], X[:, DYN_DIM:]) @ self.theta_

    def step(self, x, v, dt):
        check_is_fitted(self, "theta_")
        return step_basis_model(x, v, dt, self.theta_)

    kernel = "basis"

    def kernel_args(self):
        check_is_fitted(self, "theta_")
        return (self.theta_,)


# -- neural network model --------------------------------------------------------

MLP_LAYERS = (DYN_DIM + CONTROL_DIM, 32, 32, DYN_DIM)


@dataclass(frozen=True, eq=False)
class MLPWeights:
    """Weights of a tanh MLP; ``weights[i]`` has shape ``(layers[i+1], layers[i])``."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        W = tuple(np.array(w, dtype=float) for w in self.weights)
        B = tuple(np.array(b, dtype=float).reshape(-1) for b in self.biases)
        if len(W) != len(B) or len(W) < 1:
            raise ValueError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(W, B)):
            if w.ndim != 2 or w.shape[0] != b.size:
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i > 0 and w.shape[1] != W[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input width {w.shape[1]} != previous output {W[i - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")
        if W[0].shape[1] != DYN_DIM + CONTROL_DIM or W[-1].shape[0] != DYN_DIM:
            raise ValueError(f"network must map {DYN_DIM + CONTROL_DIM} inputs to {DYN_DIM} outputs")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", B)

    @property
    def layers(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @classmethod
    def zeros(cls, layers=MLP_LAYERS) -> "MLPWeights":
        return cls(tuple(np.zeros((o, i)) for i, o in zip(layers[:-1], layers[1:])),
                   tuple(np.zeros(o) for o in layers[1:]))

    @classmethod
    def random(cls, seed=0, layers=MLP_LAYERS, scale=None) -> "MLPWeights":
        rng = np.random.default_rng(seed)
        Ws, Bs = [], []
        for i, o in zip(layers[:-1], layers[1:]):
            s = 1.0 / math.sqrt(i) if scale is None else scale
            Ws.append(rng.normal(0.0, s, (o, i)))
            Bs.append(rng.normal(0.0, 0.1, o))
        return cls(tuple(Ws), tuple(Bs))

    def save(self, path) -> None:
        lines = ["layers " + " ".join(str(n) for n in self.layers)]
        for w, b in zip(self.weights, self.biases):
            lines.extend(" ".join(repr(float(x)) for x in row) for row in w)
            lines.append(" ".join(repr(float(x)) for x in b))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "MLPWeights":
        rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not rows or rows[0][0] != "layers":
            raise ValueError(f"{path}: first line must be 'layers n0 n1 ...'")
        layers = [int(s) for s in rows[0][1:]]
        pos, Ws, Bs = 1, [], []
        for i, o in zip(layers[:-1], layers[1:]):
            block = rows[pos:pos + o + 1]
            if len(block) != o + 1:
                raise ValueError(f"{path}: truncated layer {len(Ws)}")
            w = np.array([[float(s) for s in r] for r in block[:o]])
            b = np.array([float(s) for s in block[o]])
            if w.shape != (o, i) or b.shape != (o,):
                raise ValueError(f"{path}: layer {len(Ws)} has shape {w.shape}/{b.shape}, expected {(o, i)}/{(o,)}")
            Ws.append(w)
            Bs.append(b)
            pos += o + 1
        if pos != len(rows):
            raise ValueError(f"{path}: trailing data after last layer")
        return cls(tuple(Ws), tuple(Bs))


def mlp_forward(x_d, v, w: MLPWeights) -> np.ndarray:
    """Time derivative of the dynamic state predicted by the network (tanh hidden layers)."""
    xd = np.asarray(x_d, dtype=float)
    va = v.to_array() if isinstance(v, ControlInput) else np.asarray(v, dtype=float)
    h = np.concatenate([np.atleast_2d(xd), np.atleast_2d(va)], axis=1)
    for W, b in zip(w.weights[:-1], w.biases[:-1]):
        h = np.tanh(h @ W.T + b)
    out = h @ w.weights[-1].T + w.biases[-1]
    return out[0] if xd.ndim == 1 else out


class MLPModel:
    def __init__(self, weights: MLPWeights):
        self.weights = weights

    def predict(self, X):
        X = check_batch(X, DYN_DIM + CONTROL_DIM, "X")
        return mlp_forward(X[:, :DYN_DIM], X[:, DYN_DIM:], self.weights)

    def step(self, x, v, dt):
        xa, va, single = _as_batch(x, v)
        out = np.empty_like(xa)
        _kinematic_update(np.ascontiguousarray(xa), out, float(dt))
        out[:, 3:] = xa[:, 3:] + mlp_forward(xa[:, 3:], va, self.weights) * dt
        return VehicleState.from_array(out[0]) if single else out


class LinearModel:
    """``x' = A x + B v``; used for linear-quadratic checks of the optimizer."""

    def __init__(self, A, B):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.asarray(B, dtype=float).reshape(self.A.shape[0], -1)

    def step(self, x, v, dt=None):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        out = np.zeros((x.shape[0], self.A.shape[0]))
        # explicit column loops keep each row's arithmetic independent of the batch size
        for j in range(self.A.shape[1]):
            out += x[:, j:j + 1] * self.A[:, j]
        for j in range(self.B.shape[1]):
            out += v[:, j:j + 1] * self.B[:, j]
        return out


# -- file formats --------------------------------------------------------------

def save_theta(theta, path) -> None:
    theta = _check_theta(theta)
    Path(path).write_text("\n".join(" ".join(repr(float(x)) for x in row) for row in theta) + "\n")


def load_theta(path) -> np.ndarray:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        theta = np.array([[float(s) for s in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric theta entry ({exc})") from None
    return _check_theta(theta)


SYSID_COLUMNS = ("roll", "v_x", "v_y", "theta_dot", "steer", "throttle",
                 "d_roll", "d_v_x", "d_v_y", "d_theta_dot")


class DatasetFormatError(ValueError):
    pass


def load_sysid_dataset(path):
    """Read a delimited sysID dataset: 4 state, 2 input, 4 derivative columns per row.

    Commas or whitespace separate values; ``#`` starts a comment; a header row
    of column names is skipped.  Malformed rows raise with their line number.
    """
    rows, errors = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        fields = text.replace(",", " ").split()
        if lineno == 1 and fields and fields[0] == SYSID_COLUMNS[0]:
            continue
        if len(fields) != 10:
            errors.append(f"line {lineno}: expected 10 values, got {len(fields)}")
            continue
        try:
            vals = [float(s) for s in fields]
        except ValueError:
            errors.append(f"line {lineno}: non-numeric value")
            continue
        if not all(math.isfinite(x) for x in vals):
            errors.append(f"line {lineno}: non-finite value")
            continue
        rows.append(vals)
    if errors:
        raise DatasetFormatError("; ".join(errors))
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    data = np.array(rows)
    return data[:, :6], data[:, 6:]


def save_sysid_dataset(X, y, path) -> None:
    data = np.hstack([np.asarray(X, dtype=float), np.asarray(y, dtype=float)])
    np.savetxt(path, data, delimiter=",", header=",".join(SYSID_COLUMNS), comments="", fmt="%.17g")
