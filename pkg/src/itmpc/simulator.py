"""Closed-loop simulation: truth-model plant, execution noise, disturbances, lap metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .controller import MPPIController
from .core import CONTROL_FIELDS, STATE_DIM, STATE_FIELDS, VehicleState, gaussian_stream
from .costs import CostMap, CostParams, DrivingCost, OvalTrack, slip_angle
from .dynamics import BicycleModel, BicycleParams, ControlBounds, step_bicycle_truth

logger = logging.getLogger(__name__)

EXEC_NOISE_STREAM = 1
ESTIMATE_NOISE_STREAM = 2


@dataclass(frozen=True)
class Disturbance:
    """Instantaneous additive kick to ``(v_x, v_y, theta_dot)`` at ``time`` seconds."""

    time: float
    dv_x: float = 0.0
    dv_y: float = 0.0
    dyaw: float = 0.0


@dataclass(frozen=True)
class StartLine:
    """Segment through ``point`` perpendicular to ``direction``, ``half_length`` either side.

    A lap boundary is a crossing from behind the line to in front of it
    (along ``direction``) within the segment.
    """

    point: tuple = (0.0, -4.5)
    direction: tuple = (1.0, 0.0)
    half_length: float = 3.0

    @classmethod
    def for_oval(cls, track: OvalTrack) -> "StartLine":
        p, d = track.start_line
        return cls(p, d, 2.0 * track.half_width)

    def side(self, px, py):
        d = np.asarray(self.direction, dtype=float)
        d = d / np.linalg.norm(d)
        rx, ry = np.asarray(px) - self.point[0], np.asarray(py) - self.point[1]
        along = rx * d[0] + ry * d[1]
        across = -rx * d[1] + ry * d[0]
        return along, across


@dataclass(frozen=True)
class FailureCriteria:
    boundary_h: float = 0.99
    boundary_dwell_s: float = 0.5
    spin_slip_rad: float = 1.2
    spin_dwell_s: float = 0.25


@dataclass
class EpisodeTrace:
    """Per-step records; row ``k`` is the state at ``time[k]`` and the inputs applied from it."""

    time: np.ndarray
    states: np.ndarray
    commanded: np.ndarray
    realized: np.ndarray
    cost: np.ndarray
    h: np.ndarray
    seed: int = 0
    dt: float = 1.0 / 40.0
    config: dict = field(default_factory=dict)
    aborted: Optional[str] = None

    def __len__(self):
        return self.time.shape[0]

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.states[:, 4], self.states[:, 5])

    @property
    def slip(self) -> np.ndarray:
        return slip_angle(self.states[:, 4], self.states[:, 5])


@dataclass(frozen=True)
class LapMetrics:
    lap_time: float
    v_min: float
    v_max: float
    success: bool
    reason: str = "none"
    complete: bool = True
    start_time: float = 0.0


class SimulationError(RuntimeError):
    pass


def _dwell_exceeded(mask: np.ndarray, dt: float, limit_s: float) -> Optional[int]:
    """Index at which a run of ``True`` first lasts longer than ``limit_s``, else ``None``."""
    run = 0
    for k, flag in enumerate(mask):
        run = run + 1 if flag else 0
        if run * dt > limit_s:
            return k
    return None


class _OnlineFailure:
    def __init__(self, crit: FailureCriteria, dt: float):
        self.crit, self.dt = crit, dt
        self.boundary_run = self.spin_run = 0

    def update(self, h: float, slip: float) -> Optional[str]:
        self.boundary_run = self.boundary_run + 1 if h > self.crit.boundary_h else 0
        self.spin_run = self.spin_run + 1 if abs(slip) > self.crit.spin_slip_rad else 0
        if self.boundary_run * self.dt > self.crit.boundary_dwell_s:
            return "boundary"
        if self.spin_run * self.dt > self.crit.spin_dwell_s:
            return "spinout"
        return None


def simulate_episode(controller: MPPIController, x0: VehicleState, cmap: CostMap, duration_s: float,
                     plant: BicycleParams = BicycleParams(), plant_substeps: int = 10,
                     exec_sigma=None, estimate_std=None, disturbances: Sequence[Disturbance] = (),
                     seed: int = 0, bounds: ControlBounds = ControlBounds(), record_cost: CostParams = None,
                     stop_on_failure: bool = False, failure: FailureCriteria = FailureCriteria(),
                     config: Optional[dict] = None) -> EpisodeTrace:
    """Run the controller against the truth model for ``duration_s`` seconds.

    The plant applies ``v = clamp(u + n)`` with ``n ~ N(0, exec_sigma)`` (diagonal,
    defaulting to the controller's sampling variance).  The controller sees the
    true state plus optional Gaussian ``estimate_std`` noise.  Noise draws are
    addressed by ``(seed, step)`` so episodes are reproducible.
    """
    dt = float(controller.dt)
    n_steps = int(round(duration_s / dt))
    if n_steps < 1:
        raise ValueError("episode must last at least one control period")
    exec_sd = np.sqrt(np.asarray(controller.sigma if exec_sigma is None else exec_sigma, dtype=float))
    est_sd = None if estimate_std is None else np.asarray(estimate_std, dtype=float)
    record = DrivingCost(cmap, record_cost if record_cost is not None else getattr(controller.cost, "params", CostParams()))
    controller.set_params(seed=seed).reset()
    kicks = sorted(disturbances, key=lambda d: d.time)
    kick_i = 0
    watch = _OnlineFailure(failure, dt)

    states = np.empty((n_steps, STATE_DIM))
    cmd = np.empty((n_steps, 2))
    real = np.empty((n_steps, 2))
    x = x0.to_array()
    aborted = None
    k = 0
    for k in range(n_steps):
        t = k * dt
        while kick_i < len(kicks) and kicks[kick_i].time <= t + 1e-12:
            kd = kicks[kick_i]
            x = x.copy()
            x[4] += kd.dv_x
            x[5] += kd.dv_y
            x[6] += kd.dyaw
            kick_i += 1
        states[k] = x
        seen = x if est_sd is None else x + est_sd * gaussian_stream(seed, ESTIMATE_NOISE_STREAM, k, STATE_DIM)
        u = controller.step(seen).to_array()
        v = bounds.clip(u + exec_sd * gaussian_stream(seed, EXEC_NOISE_STREAM, k, 2))
        cmd[k], real[k] = u, v
        x_next = step_bicycle_truth(x[None], v[None], dt, plant, plant_substeps)[0]
        if not np.all(np.isfinite(x_next)):
            aborted = f"non-finite state at t={t + dt:.3f}s"
            logger.warning("episode seed=%d aborted: %s", seed, aborted)
            k += 1
            break
        if stop_on_failure:
            reason = watch.update(cmap.lookup(x[0], x[1]), slip_angle(x[4], x[5]))
            if reason:
                aborted = f"stopped after {reason} failure"
                k += 1
                break
        x = x_next
    else:
        k = n_steps
    n = k
    states, cmd, real = states[:n], cmd[:n], real[:n]
    h = cmap.lookup(states[:, 0], states[:, 1])
    cost = record.stage(states, 0)
    return EpisodeTrace(time=np.arange(n) * dt, states=states, commanded=cmd, realized=real, cost=cost,
                        h=h, seed=seed, dt=dt, config=dict(config or {}), aborted=aborted)


def replay_commands(trace: EpisodeTrace, plant: BicycleParams = BicycleParams(), plant_substeps: int = 10,
                    bounds: ControlBounds = ControlBounds()) -> np.ndarray:
    """States obtained by replaying the commanded inputs through the plant without noise."""
    out = np.empty_like(trace.states)
    x = trace.states[0]
    for k in range(len(trace)):
        out[k] = x
        x = step_bicycle_truth(x[None], bounds.clip(trace.commanded[k])[None], trace.dt, plant, plant_substeps)[0]
    return out


def start_line_crossings(states: np.ndarray, line: StartLine, dt: float):
    """Crossing times (interpolated) and step indices of directed start-line crossings."""
    along, across = line.side(states[:, 0], states[:, 1])
    times, idx = [], []
    for k in range(1, states.shape[0]):
        if along[k - 1] < 0 <= along[k]:
            frac = -along[k - 1] / (along[k] - along[k - 1])
            lat = across[k - 1] + frac * (across[k] - across[k - 1])
            if abs(lat) <= line.half_length:
                times.append((k - 1 + frac) * dt)
                idx.append(k)
    return np.array(times), np.array(idx, dtype=int)


def _segment_metrics(trace, a, b, t0, t1, complete, crit, speed, slip):
    h = trace.h[a:b]
    reason = "none"
    kb = _dwell_exceeded(h > crit.boundary_h, trace.dt, crit.boundary_dwell_s)
    ks = _dwell_exceeded(np.abs(slip[a:b]) > crit.spin_slip_rad, trace.dt, crit.spin_dwell_s)
    if kb is not None and (ks is None or kb <= ks):
        reason = "boundary"
    elif ks is not None:
        reason = "spinout"
    seg = speed[a:b] if b > a else speed[a:a + 1]
    return LapMetrics(lap_time=(t1 - t0) if complete else float("nan"), v_min=float(seg.min()),
                      v_max=float(seg.max()), success=complete and reason == "none", reason=reason,
                      complete=complete, start_time=float(t0))


def classify_laps(trace: EpisodeTrace, line: StartLine, crit: FailureCriteria = FailureCriteria()):
    """Split the trace into laps at start-line crossings and classify each.

    Laps run between consecutive crossings, so ``crossings - 1`` complete laps
    result; the segment before the first crossing is the discarded warm-up
    lap.  A warm-up or trailing segment that contains a failure is reported
    as an incomplete failed lap so that crashes are never silently dropped.
    """
    if len(trace) == 0:
        return []
    times, idx = start_line_crossings(trace.states, line, trace.dt)
    speed, slip = trace.speed, trace.slip
    laps = []
    end = len(trace)
    if idx.size == 0:
        m = _segment_metrics(trace, 0, end, 0.0, trace.time[-1], False, crit, speed, slip)
        return [m] if m.reason != "none" or trace.aborted else []
    head = _segment_metrics(trace, 0, idx[0], 0.0, times[0], False, crit, speed, slip)
    if head.reason != "none":
        laps.append(head)
    for i in range(idx.size - 1):
        laps.append(_segment_metrics(trace, idx[i], idx[i + 1], times[i], times[i + 1], True, crit, speed, slip))
    tail = _segment_metrics(trace, idx[-1], end, times[-1], trace.time[-1], False, crit, speed, slip)
    if tail.reason != "none" or (trace.aborted and "non-finite" in trace.aborted):
        laps.append(tail)
    return laps


@dataclass(frozen=True)
class Summary:
    laps: int
    successes: int
    lap_time_mean: float
    lap_time_std: float
    v_min: float
    v_max: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.laps if self.laps else float("nan")


def summarize(laps: Sequence[LapMetrics]) -> Summary:
    good = [lap.lap_time for lap in laps if lap.success]
    counted = [lap for lap in laps if lap.complete or not lap.success]
    vmin = min((lap.v_min for lap in counted), default=float("nan"))
    vmax = max((lap.v_max for lap in counted), default=float("nan"))
    return Summary(len(laps), sum(lap.success for lap in laps),
                   float(np.mean(good)) if good else float("nan"),
                   float(np.std(good)) if good else float("nan"), vmin, vmax)


# -- output -------------------------------------------------------------------

TRACE_COLUMNS = ("time_s",) + STATE_FIELDS + tuple(f"u_{c}" for c in CONTROL_FIELDS) \
    + tuple(f"v_{c}" for c in CONTROL_FIELDS) + ("cost", "h")
METRIC_COLUMNS = ("lap", "start_time_s", "lap_time_s", "v_min_mps", "v_max_mps", "success", "complete", "reason")


def _fmt(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else ("nan" if math.isnan(x) else str(float(x)))


def write_trace_csv(trace: EpisodeTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k in range(len(trace)):
            row = [trace.time[k], *trace.states[k], *trace.commanded[k], *trace.realized[k], trace.cost[k], trace.h[k]]
            w.writerow([_fmt(v) for v in row])


def write_metrics_csv(laps: Sequence[LapMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for i, lap in enumerate(laps):
            w.writerow([i, _fmt(lap.start_time), _fmt(lap.lap_time), _fmt(lap.v_min), _fmt(lap.v_max),
                        int(lap.success), int(lap.complete), lap.reason])


def _polyline(points: np.ndarray, flip_y: float, style: str) -> str:
    pts = " ".join(f"{x:.3f},{flip_y - y:.3f}" for x, y in points)
    return f'<polyline points="{pts}" {style}/>'


def write_overlay_svg(trace: EpisodeTrace, cmap: CostMap, path, track: Optional[OvalTrack] = None,
                      scale: float = 20.0) -> None:
    """Track boundaries (or boundary cells for arbitrary maps) with the driven path on top."""
    x_lo, x_hi, y_lo, y_hi = cmap.extent
    w, h = (x_hi - x_lo) * scale, (y_hi - y_lo) * scale

    def to_px(pts):
        return np.column_stack([(pts[:, 0] - x_lo) * scale, (pts[:, 1] - y_lo) * scale])

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
             f'viewBox="0 0 {w:.3f} {h:.3f}">',
             f'<rect width="{w:.3f}" height="{h:.3f}" fill="white"/>']
    if track is not None:
        for which, style in (("outer", 'fill="none" stroke="black" stroke-width="2"'),
                             ("inner", 'fill="none" stroke="black" stroke-width="2"'),
                             ("center", 'fill="none" stroke="gray" stroke-dasharray="6,6"')):
            parts.append(_polyline(to_px(track.boundary(which)), h, style))
    else:
        step = max(1, int(round(0.25 / cmap.resolution)))
        jj, ii = np.nonzero(np.abs(cmap.values[::step, ::step] - 1.0) < 0.05)
        for j, i in zip(jj, ii):
            px = i * step * cmap.resolution * scale
            py = h - j * step * cmap.resolution * scale
            parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="1.5" fill="black"/>')
    if len(trace):
        parts.append(_polyline(to_px(trace.states[:, :2]), h, 'fill="none" stroke="red" stroke-width="1.5"'))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


# -- system identification data -----------------------------------------------

def sysid_dataset(n: int, seed: int = 0, plant: BicycleParams = BicycleParams(), dt: float = 1.0 / 40.0,
                  substeps: int = 10, v_max: float = 12.0):
    """One-step finite-difference targets from the truth model at random states and inputs.

    Returns ``X = [roll, v_x, v_y, theta_dot, steer, throttle]`` and
    ``y = (x_d(t + dt) - x_d(t)) / dt``.
    """
    rng = np.random.default_rng(seed)
    x = np.zeros((n, STATE_DIM))
    x[:, 4] = rng.uniform(0.0, v_max, n)
    x[:, 5] = rng.uniform(-1.0, 1.0, n) * np.minimum(0.3 * x[:, 4] + 0.2, 2.0)
    x[:, 6] = rng.uniform(-1.0, 1.0, n) * np.minimum(0.6 * x[:, 4] + 0.5, 3.0)
    v = rng.uniform(-1.0, 1.0, (n, 2))
    x_next = step_bicycle_truth(x, v, dt, plant, substeps)
    X = np.hstack([x[:, 3:], v])
    y = (x_next[:, 3:] - x[:, 3:]) / dt
    return X, y
