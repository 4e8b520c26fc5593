"""Experiment configuration: YAML file <-> typed sections.

Keys carry their units (``dt_s``, ``v_des_mps``).  Unknown keys are rejected
so that typos fail loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .core import SamplingParams
from .costs import CostMap, CostParams, OvalTrack, generate_oval_costmap
from .dynamics import BicycleParams, ControlBounds
from .simulator import Disturbance, FailureCriteria, StartLine


class ConfigError(ValueError):
    pass


def _take(section: dict, allowed, where: str) -> dict:
    section = dict(section or {})
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return section


@dataclass
class ControllerConfig:
    weight_rule: str = "it"
    lambda_: float = 12.5
    delta: float = 0.8
    gamma: float = 0.1
    sigma_diag: tuple = (0.0306, 0.0506)
    horizon_steps: int = 80
    dt_s: float = 1.0 / 40.0
    samples: int = 512
    explore_fraction: float = 0.01
    sg_window: int = 9
    sg_degree: int = 3
    steer_bounds: tuple = (-1.0, 1.0)
    throttle_bounds: tuple = (-1.0, 1.0)
    model: str = "truth"
    model_substeps: int = 1
    theta_file: Optional[str] = None
    mlp_file: Optional[str] = None

    KEYS = {"weight_rule", "lambda", "delta", "gamma", "sigma_diag", "horizon_steps", "dt_s", "samples",
            "explore_fraction", "sg_window", "sg_degree", "bounds", "model", "model_substeps",
            "theta_file", "mlp_file"}

    @classmethod
    def from_dict(cls, d, base: Path) -> "ControllerConfig":
        d = _take(d, cls.KEYS, "controller")
        kw = {}
        for key, value in d.items():
            if key == "lambda":
                kw["lambda_"] = float(value)
            elif key == "bounds":
                b = _take(value, {"steer", "throttle"}, "controller.bounds")
                if "steer" in b:
                    kw["steer_bounds"] = tuple(float(v) for v in b["steer"])
                if "throttle" in b:
                    kw["throttle_bounds"] = tuple(float(v) for v in b["throttle"])
            elif key in ("theta_file", "mlp_file"):
                kw[key] = None if value is None else str(_resolve(base, value))
            elif key == "sigma_diag":
                kw[key] = tuple(float(v) for v in value)
            else:
                kw[key] = value
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.weight_rule not in ("it", "cem"):
            raise ConfigError(f"controller.weight_rule must be 'it' or 'cem', got {self.weight_rule!r}")
        if self.model not in ("truth", "basis", "mlp"):
            raise ConfigError(f"controller.model must be truth, basis or mlp, got {self.model!r}")
        if self.model == "basis" and self.theta_file is None:
            raise ConfigError("controller.model = basis requires controller.theta_file")
        if self.model == "mlp" and self.mlp_file is None:
            raise ConfigError("controller.model = mlp requires controller.mlp_file")
        for key in ("theta_file", "mlp_file"):
            path = getattr(self, key)
            if path is not None and not Path(path).is_file():
                raise FileNotFoundError(f"controller.{key}: no such file: {path}")
        self.sampling()  # parameter-range checks
        self.bounds()

    def sampling(self, seed: int = 0) -> SamplingParams:
        try:
            return SamplingParams(samples=self.samples, horizon=self.horizon_steps, dt=self.dt_s,
                                  sigma=self.sigma_diag, lambda_=self.lambda_, gamma=self.gamma,
                                  explore_fraction=self.explore_fraction, seed=seed)
        except ValueError as exc:
            raise ConfigError(f"controller: {exc}") from None

    def bounds(self) -> ControlBounds:
        return ControlBounds([self.steer_bounds[0], self.throttle_bounds[0]],
                             [self.steer_bounds[1], self.throttle_bounds[1]])

    def to_dict(self) -> dict:
        return {"weight_rule": self.weight_rule, "lambda": self.lambda_, "delta": self.delta,
                "gamma": self.gamma, "sigma_diag": list(self.sigma_diag), "horizon_steps": self.horizon_steps,
                "dt_s": self.dt_s, "samples": self.samples, "explore_fraction": self.explore_fraction,
                "sg_window": self.sg_window, "sg_degree": self.sg_degree,
                "bounds": {"steer": list(self.steer_bounds), "throttle": list(self.throttle_bounds)},
                "model": self.model, "model_substeps": self.model_substeps,
                "theta_file": self.theta_file, "mlp_file": self.mlp_file}


COST_KEYS = {"alpha_track": "alpha_track", "alpha_speed": "alpha_speed", "alpha_stab": "alpha_stab",
             "v_des_mps": "v_des", "impulse": "impulse", "decay": "decay",
             "boundary_threshold": "boundary_threshold", "slip_limit_rad": "slip_limit",
             "slip_guard_mps": "slip_guard", "terminal": "terminal"}

PLANT_KEYS = {"mass_kg": "M", "yaw_inertia_kgm2": "I_z", "front_axle_m": "a", "rear_axle_m": "b",
              "cornering_stiffness_n_per_rad": "C", "friction": "mu", "normal_load_n": "F_z",
              "steer_scale_rad": "steer_scale", "force_scale_n": "force_scale"}


@dataclass
class MapConfig:
    oval: Optional[OvalTrack] = field(default_factory=OvalTrack)
    resolution_m: float = 0.1
    file: Optional[str] = None
    start_line: Optional[StartLine] = None
    start_pose: Optional[tuple] = None  # (x, y, heading)
    start_speed_mps: float = 1.0

    @classmethod
    def from_dict(cls, d, base: Path) -> "MapConfig":
        d = _take(d, {"oval", "resolution_m", "file", "start_line", "start_pose", "start_speed_mps"}, "map")
        kw = {}
        if "file" in d and d["file"] is not None:
            kw["file"] = str(_resolve(base, d["file"]))
            kw["oval"] = None
        if "oval" in d:
            o = _take(d["oval"], {"inner_radius_m", "outer_radius_m", "straight_length_m", "center_m"}, "map.oval")
            try:
                kw["oval"] = OvalTrack(inner_radius=float(o.get("inner_radius_m", 3.0)),
                                       outer_radius=float(o.get("outer_radius_m", 6.0)),
                                       straight_length=float(o.get("straight_length_m", 8.0)),
                                       center=tuple(float(v) for v in o.get("center_m", (0.0, 0.0))))
            except ValueError as exc:
                raise ConfigError(f"map.oval: {exc}") from None
        if "start_line" in d:
            s = _take(d["start_line"], {"point_m", "direction", "half_length_m"}, "map.start_line")
            kw["start_line"] = StartLine(tuple(s["point_m"]), tuple(s.get("direction", (1.0, 0.0))),
                                         float(s.get("half_length_m", 3.0)))
        if "start_pose" in d:
            kw["start_pose"] = tuple(float(v) for v in d["start_pose"])
        for key in ("resolution_m", "start_speed_mps"):
            if key in d:
                kw[key] = float(d[key])
        cfg = cls(**kw)
        if cfg.file is not None:
            if not Path(cfg.file).is_file():
                raise FileNotFoundError(f"map.file: no such file: {cfg.file}")
            if cfg.start_line is None or cfg.start_pose is None:
                raise ConfigError("map.file requires map.start_line and map.start_pose")
        return cfg

    def build(self):
        """``(cost map, start line, initial state, oval or None)``."""
        from .core import VehicleState

        if self.file is not None:
            cmap = CostMap.load(self.file)
        else:
            cmap = generate_oval_costmap(self.oval, self.resolution_m)
        line = self.start_line if self.start_line is not None else StartLine.for_oval(self.oval)
        if self.start_pose is not None:
            x, y, th = self.start_pose
            x0 = VehicleState(p_x=x, p_y=y, theta=th, v_x=self.start_speed_mps)
        else:
            x0 = self.oval.start_pose(self.start_speed_mps)
        return cmap, line, x0, self.oval

    def to_dict(self) -> dict:
        out = {"resolution_m": self.resolution_m, "start_speed_mps": self.start_speed_mps}
        if self.file is not None:
            out["file"] = self.file
        if self.oval is not None:
            out["oval"] = {"inner_radius_m": self.oval.inner_radius, "outer_radius_m": self.oval.outer_radius,
                           "straight_length_m": self.oval.straight_length, "center_m": list(self.oval.center)}
        if self.start_line is not None:
            out["start_line"] = {"point_m": list(self.start_line.point), "direction": list(self.start_line.direction),
                                 "half_length_m": self.start_line.half_length}
        if self.start_pose is not None:
            out["start_pose"] = list(self.start_pose)
        return out


@dataclass
class SimConfig:
    duration_s: float = 20.0
    plant_substeps: int = 10
    exec_sigma_diag: Optional[tuple] = None
    estimate_std: Optional[tuple] = None
    disturbances: tuple = ()
    stop_on_failure: bool = True
    failure: FailureCriteria = field(default_factory=FailureCriteria)

    @classmethod
    def from_dict(cls, d) -> "SimConfig":
        d = _take(d, {"duration_s", "plant_substeps", "exec_sigma_diag", "estimate_std", "disturbances",
                      "stop_on_failure", "failure"}, "sim")
        kw = {}
        for key in ("duration_s",):
            if key in d:
                kw[key] = float(d[key])
        if "plant_substeps" in d:
            kw["plant_substeps"] = int(d["plant_substeps"])
        for key in ("exec_sigma_diag", "estimate_std"):
            if d.get(key) is not None:
                kw[key] = tuple(float(v) for v in d[key])
        if "stop_on_failure" in d:
            kw["stop_on_failure"] = bool(d["stop_on_failure"])
        if "disturbances" in d:
            kicks = []
            for i, k in enumerate(d["disturbances"] or []):
                k = _take(k, {"time_s", "dv_x_mps", "dv_y_mps", "dyaw_radps"}, f"sim.disturbances[{i}]")
                kicks.append(Disturbance(float(k["time_s"]), float(k.get("dv_x_mps", 0.0)),
                                         float(k.get("dv_y_mps", 0.0)), float(k.get("dyaw_radps", 0.0))))
            kw["disturbances"] = tuple(kicks)
        if "failure" in d:
            f = _take(d["failure"], {"boundary_h", "boundary_dwell_s", "spin_slip_rad", "spin_dwell_s"}, "sim.failure")
            kw["failure"] = FailureCriteria(**{k: float(v) for k, v in f.items()})
        cfg = cls(**kw)
        if not cfg.duration_s > 0:
            raise ConfigError("sim.duration_s must be positive")
        return cfg

    def to_dict(self) -> dict:
        return {"duration_s": self.duration_s, "plant_substeps": self.plant_substeps,
                "exec_sigma_diag": None if self.exec_sigma_diag is None else list(self.exec_sigma_diag),
                "estimate_std": None if self.estimate_std is None else list(self.estimate_std),
                "disturbances": [{"time_s": k.time, "dv_x_mps": k.dv_x, "dv_y_mps": k.dv_y, "dyaw_radps": k.dyaw}
                                 for k in self.disturbances],
                "stop_on_failure": self.stop_on_failure, "failure": asdict(self.failure)}


@dataclass
class BenchmarkConfig:
    weight_rules: tuple = ("it", "cem")
    targets_mps: tuple = (6.0, 8.5, 11.0)

    @classmethod
    def from_dict(cls, d) -> "BenchmarkConfig":
        d = _take(d, {"weight_rules", "targets_mps"}, "benchmark")
        rules = tuple(d.get("weight_rules", cls.weight_rules))
        targets = tuple(float(v) for v in d.get("targets_mps", cls.targets_mps))
        if not rules or any(r not in ("it", "cem") for r in rules):
            raise ConfigError(f"benchmark.weight_rules must be a non-empty subset of [it, cem], got {list(rules)}")
        if not targets:
            raise ConfigError("benchmark.targets_mps must not be empty")
        return cls(rules, targets)


@dataclass
class ExperimentConfig:
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    cost: CostParams = field(default_factory=CostParams)
    map: MapConfig = field(default_factory=MapConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    plant: BicycleParams = field(default_factory=BicycleParams)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    seeds: tuple = (0,)
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "ExperimentConfig":
        d = _take(d, {"controller", "cost", "map", "sim", "plant", "benchmark", "seeds", "output_dir"}, "config")
        cost_d = _take(d.get("cost"), COST_KEYS, "cost")
        plant_d = _take(d.get("plant"), PLANT_KEYS, "plant")
        try:
            cost = CostParams(**{COST_KEYS[k]: v for k, v in cost_d.items()})
            plant = BicycleParams(**{PLANT_KEYS[k]: float(v) for k, v in plant_d.items()})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        seeds = tuple(int(s) for s in d.get("seeds", (0,)))
        if not seeds:
            raise ConfigError("seeds must not be empty")
        if len(set(seeds)) != len(seeds):
            raise ConfigError(f"seeds must be unique, got {list(seeds)}")
        out = d.get("output_dir", "out")
        return cls(controller=ControllerConfig.from_dict(d.get("controller"), base), cost=cost,
                   map=MapConfig.from_dict(d.get("map"), base), sim=SimConfig.from_dict(d.get("sim")),
                   plant=plant, benchmark=BenchmarkConfig.from_dict(d.get("benchmark")), seeds=seeds,
                   output_dir=str(_resolve(base, out)))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        return {"controller": self.controller.to_dict(),
                "cost": {k: getattr(self.cost, v) for k, v in COST_KEYS.items()},
                "map": self.map.to_dict(), "sim": self.sim.to_dict(),
                "plant": {k: getattr(self.plant, v) for k, v in PLANT_KEYS.items()},
                "benchmark": {"weight_rules": list(self.benchmark.weight_rules),
                              "targets_mps": list(self.benchmark.targets_mps)},
                "seeds": list(self.seeds), "output_dir": self.output_dir}

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(base) / p
