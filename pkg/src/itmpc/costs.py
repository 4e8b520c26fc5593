"""Driving cost: cost-map lookup, track/speed/stability terms, control-cost coupling.

Cost objects expose two batched methods used by the rollout engine::

    cost.stage(x, t)     -> (N,) running state cost of states x at step t
    cost.terminal(x, T)  -> (N,) terminal cost of the final states
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .core import STATE_DIM, VehicleState
from .validation import check_batch

H_CAP = 2.5


class CostMapFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CostMap:
    """Gridded track cost.

    ``values[j, i]`` is the cost at world position
    ``(x0 + i * resolution, y0 + j * resolution)``; rows run along y.
    """

    values: np.ndarray
    x0: float = 0.0
    y0: float = 0.0
    resolution: float = 1.0
    cap: float = H_CAP

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 2:
            raise ValueError(f"cost map needs at least 2x2 cells, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("cost map values must be finite")
        if np.any(np.abs(values) > self.cap):
            raise ValueError(f"cost map values must lie in [-{self.cap}, {self.cap}]")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def extent(self):
        """``(x_min, x_max, y_min, y_max)`` of the cell centres."""
        return (self.x0, self.x0 + (self.width - 1) * self.resolution,
                self.y0, self.y0 + (self.height - 1) * self.resolution)

    def lookup(self, px, py):
        return costmap_lookup(self, px, py)

    def save(self, path) -> None:
        lines = [f"{self.width} {self.height} {self.x0!r} {self.y0!r} {self.resolution!r}"]
        lines.extend(" ".join(repr(float(v)) for v in row) for row in self.values)
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "CostMap":
        text = Path(path).read_text()
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not rows or len(rows[0]) != 5:
            raise CostMapFormatError(f"{path}: header must be 'width height x0 y0 resolution'")
        try:
            width, height = int(rows[0][0]), int(rows[0][1])
            x0, y0, res = (float(s) for s in rows[0][2:])
        except ValueError:
            raise CostMapFormatError(f"{path}: malformed header {' '.join(rows[0])!r}") from None
        body = rows[1:]
        if len(body) != height:
            raise CostMapFormatError(f"{path}: expected {height} rows, found {len(body)}")
        values = np.empty((height, width))
        for j, row in enumerate(body):
            if len(row) != width:
                raise CostMapFormatError(f"{path}: row {j + 1} has {len(row)} values, expected {width}")
            try:
                values[j] = [float(s) for s in row]
            except ValueError:
                raise CostMapFormatError(f"{path}: non-numeric value in row {j + 1}") from None
        return cls(values, x0, y0, res)


@njit(cache=True, nogil=True)
def _bilinear(values, x0, y0, res, px, py):
    h, w = values.shape
    fx = (px - x0) / res
    fy = (py - y0) / res
    fx = min(max(fx, 0.0), w - 1.0)
    fy = min(max(fy, 0.0), h - 1.0)
    i = min(int(math.floor(fx)), w - 2)
    j = min(int(math.floor(fy)), h - 2)
    tx = fx - i
    ty = fy - j
    top = values[j, i] * (1.0 - tx) + values[j, i + 1] * tx
    bot = values[j + 1, i] * (1.0 - tx) + values[j + 1, i + 1] * tx
    return top * (1.0 - ty) + bot * ty


@njit(cache=True, nogil=True)
def _lookup_many(values, x0, y0, res, px, py):
    out = np.empty(px.shape[0])
    for k in range(px.shape[0]):
        out[k] = _bilinear(values, x0, y0, res, px[k], py[k])
    return out


def costmap_lookup(cmap: CostMap, px, py):
    """Bilinear interpolation of the map at world position(s); positions outside clamp to the edge."""
    pxa = np.atleast_1d(np.asarray(px, dtype=float)).reshape(-1)
    pya = np.broadcast_to(np.asarray(py, dtype=float), pxa.shape).reshape(-1)
    out = _lookup_many(cmap.values, cmap.x0, cmap.y0, cmap.resolution,
                       np.ascontiguousarray(pxa), np.ascontiguousarray(pya))
    return float(out[0]) if np.ndim(px) == 0 else out.reshape(np.shape(px))


# -- synthetic oval track -----------------------------------------------------------

@dataclass(frozen=True)
class OvalTrack:
    """Stadium-shaped track: two straights of ``straight_length`` joined by half circles.

    The centre segment runs along x through ``center``; the drivable band lies
    between ``inner_radius`` and ``outer_radius`` from it.
    """

    inner_radius: float = 3.0
    outer_radius: float = 6.0
    straight_length: float = 8.0
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not (self.inner_radius >= 0 and self.outer_radius > self.inner_radius):
            raise ValueError(f"need 0 <= inner_radius < outer_radius, got {self.inner_radius}, {self.outer_radius}")
        if not self.straight_length >= 0:
            raise ValueError("straight_length must be non-negative")

    @property
    def centerline_radius(self) -> float:
        return 0.5 * (self.inner_radius + self.outer_radius)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.outer_radius - self.inner_radius)

    @property
    def lap_length(self) -> float:
        return 2.0 * self.straight_length + 2.0 * math.pi * self.centerline_radius

    def _segment_distance(self, px, py):
        cx, cy = self.center
        half = 0.5 * self.straight_length
        qx = np.clip(np.asarray(px, dtype=float) - cx, -half, half)
        return np.hypot(np.asarray(px, dtype=float) - cx - qx, np.asarray(py, dtype=float) - cy)

    def signed_distance(self, px, py):
        """Normalized offset: -1 on the inner boundary, 0 on the centreline, +1 on the outer."""
        return (self._segment_distance(px, py) - self.centerline_radius) / self.half_width

    def start_pose(self, speed: float = 0.0) -> VehicleState:
        """On the centreline at the middle of the lower straight, facing +x (counter-clockwise)."""
        cx, cy = self.center
        return VehicleState(p_x=cx, p_y=cy - self.centerline_radius, v_x=speed)

    @property
    def start_line(self):
        """``(point, direction)``: crossing the vertical line through ``point`` along ``direction``."""
        cx, cy = self.center
        return (cx, cy - self.centerline_radius), (1.0, 0.0)

    def boundary(self, which: str, n: int = 200) -> np.ndarray:
        """Closed polyline of the ``inner``, ``outer`` or ``center`` curve."""
        r = {"inner": self.inner_radius, "outer": self.outer_radius, "center": self.centerline_radius}[which]
        cx, cy = self.center
        half = 0.5 * self.straight_length
        a = np.linspace(-0.5 * np.pi, 0.5 * np.pi, n // 2)
        right = np.column_stack([cx + half + r * np.cos(a), cy + r * np.sin(a)])
        left = np.column_stack([cx - half - r * np.cos(a), cy - r * np.sin(a)])
        return np.vstack([right, left, right[:1]])


def generate_oval_costmap(track: OvalTrack = OvalTrack(), resolution: float = 0.1,
                          margin: float = 2.0) -> CostMap:
    """Grid of ``h = min(|signed distance|, 2.5)`` covering the track plus ``margin`` metres."""
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    cx, cy = track.center
    half_x = 0.5 * track.straight_length + track.outer_radius + margin
    half_y = track.outer_radius + margin
    nx = int(math.ceil(2 * half_x / resolution)) + 1
    ny = int(math.ceil(2 * half_y / resolution)) + 1
    x0, y0 = cx - half_x, cy - half_y
    gx = x0 + resolution * np.arange(nx)
    gy = y0 + resolution * np.arange(ny)
    X, Y = np.meshgrid(gx, gy)
    h = np.minimum(np.abs(track.signed_distance(X, Y)), H_CAP)
    return CostMap(h, x0, y0, resolution)


def generate_corridor_costmap(half_width: float = 2.0, length: float = 60.0,
                              resolution: float = 0.1, margin: float = 2.0) -> CostMap:
    """Straight corridor along +x centred on y = 0; ``h = |y| / half_width`` capped."""
    nx = int(math.ceil((length + 2 * margin) / resolution)) + 1
    ny = int(math.ceil(2 * (half_width + margin) / resolution)) + 1
    x0, y0 = -margin, -(half_width + margin)
    gy = y0 + resolution * np.arange(ny)
    h = np.minimum(np.abs(gy) / half_width, H_CAP)
    return CostMap(np.repeat(h[:, None], nx, axis=1), x0, y0, resolution)


# -- driving cost ------------------------------------------------------------------

@dataclass(frozen=True)
class CostParams:
    """Weights and constants of the driving cost.

    ``alpha_track``, ``alpha_speed`` and ``alpha_stab`` are tuning choices, not
    measured values.  ``terminal`` selects the terminal cost: ``"state"``
    re-evaluates the state cost at the final state, ``"none"`` disables it.
    """

    alpha_track: float = 100.0
    alpha_speed: float = 4.25
    alpha_stab: float = 10.0
    v_des: float = 6.0
    impulse: float = 10000.0
    decay: float = 0.9
    boundary_threshold: float = 0.99
    slip_limit: float = 0.75
    slip_guard: float = 0.01
    terminal: str = "state"

    def __post_init__(self):
        for name in ("alpha_track", "alpha_speed", "alpha_stab", "impulse", "slip_limit", "slip_guard"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"CostParams.{name} must be non-negative")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.terminal not in ("state", "none"):
            raise ValueError("terminal must be 'state' or 'none'")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha_track, self.alpha_speed, self.alpha_stab, self.v_des, self.impulse,
                         self.decay, self.boundary_threshold, self.slip_limit, self.slip_guard])


def slip_angle(v_x, v_y, guard: float = 0.01):
    """Body side-slip ``-atan(v_y / |v_x|)``, defined as 0 when ``|v_x| < guard``."""
    vx = np.asarray(v_x, dtype=float)
    vy = np.asarray(v_y, dtype=float)
    moving = np.abs(vx) >= guard
    out = np.where(moving, -np.arctan(vy / np.where(moving, np.abs(vx), 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


@njit(cache=True, nogil=True)
def _driving_cost_row(px, py, vx, vy, decay_t, values, x0, y0, res, cp):
    # cp: alpha_track, alpha_speed, alpha_stab, v_des, impulse, decay, b_thr, s_lim, guard
    h = _bilinear(values, x0, y0, res, px, py)
    track = h
    if h > cp[6]:
        track += decay_t * cp[4]
    dv = vx - cp[3]
    if abs(vx) < cp[8]:
        zeta = 0.0
    else:
        zeta = -math.atan(vy / abs(vx))
    stab = zeta * zeta
    if abs(zeta) > cp[7]:
        stab += cp[4]
    return cp[0] * track + cp[1] * dv * dv + cp[2] * stab


@njit(cache=True, nogil=True)
def _driving_cost(x, t, values, x0, y0, res, cp):
    out = np.empty(x.shape[0])
    decay_t = cp[5] ** t
    for i in range(x.shape[0]):
        out[i] = _driving_cost_row(x[i, 0], x[i, 1], x[i, 4], x[i, 5], decay_t, values, x0, y0, res, cp)
    return out


class DrivingCost:
    def __init__(self, cmap: CostMap, params: CostParams = CostParams()):
        self.cmap = cmap
        self.params = params
        self._cp = params.as_array()

    def stage(self, x, t: int) -> np.ndarray:
        return _driving_cost(np.ascontiguousarray(x), int(t), self.cmap.values, self.cmap.x0,
                             self.cmap.y0, self.cmap.resolution, self._cp)

    def terminal(self, x, t: int) -> np.ndarray:
        if self.params.terminal == "none":
            return np.zeros(np.shape(x)[0])
        return self.stage(x, t)


def state_cost(x, t: int, cmap: CostMap, cp: CostParams = CostParams()):
    """``alpha_track*Track + alpha_speed*Speed + alpha_stab*Stabilizing`` at step ``t``."""
    if t < 0:
        raise ValueError("time step must be non-negative")
    single = isinstance(x, VehicleState)
    xa = x.to_array()[None] if single else check_batch(x, STATE_DIM, "state")
    out = DrivingCost(cmap, cp).stage(xa, t)
    return float(out[0]) if single or np.ndim(x) == 1 else out


class QuadraticCost:
    """``x^T Q x`` per step plus ``x^T Q_f x`` at the end (for linear-quadratic checks)."""

    def __init__(self, Q, Q_f):
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.Q_f = np.atleast_2d(np.asarray(Q_f, dtype=float))

    @staticmethod
    def _quad(x, M):
        out = np.zeros(x.shape[0])
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                if M[i, j] != 0.0:
                    out += M[i, j] * x[:, i] * x[:, j]
        return out

    def stage(self, x, t):
        return self._quad(np.asarray(x, dtype=float), self.Q)

    def terminal(self, x, t):
        return self._quad(np.asarray(x, dtype=float), self.Q_f)


class ZeroCost:
    def stage(self, x, t):
        return np.zeros(np.shape(x)[0])

    def terminal(self, x, t):
        return np.zeros(np.shape(x)[0])


def control_cost_increment(u_prev, v, gamma: float, sigma) -> float:
    """Coupling term ``gamma * u^T Sigma^{-1} v`` for diagonal ``Sigma``."""
    u = np.asarray(u_prev.to_array() if hasattr(u_prev, "to_array") else u_prev, dtype=float)
    va = np.asarray(v.to_array() if hasattr(v, "to_array") else v, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    sigma_diag = np.diag(sigma) if sigma.ndim == 2 else sigma
    if np.any(sigma_diag <= 0):
        raise ValueError("Sigma must be positive definite")
    return float(gamma * np.sum(u / sigma_diag * va))


def trajectory_cost(x0, U, eps, model, cost, sp, bounds=None) -> float:
    """Cost ``S`` of the single perturbed sequence ``v = U + eps``."""
    plan = U.values if hasattr(U, "values") else np.asarray(U, dtype=float)
    xa = x0.to_array() if isinstance(x0, VehicleState) else np.asarray(x0, dtype=float)
    from .rollout import rollout_costs  # rollout depends on this module

    V = (plan + np.asarray(eps, dtype=float))[None]
    return float(rollout_costs(xa, plan, V, model, cost, sp, bounds, sp.base_mean)[0])
