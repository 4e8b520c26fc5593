"""Experiment orchestration shared by the command line and the acceptance suite."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .config import ExperimentConfig
from .controller import MPPIController
from .costs import DrivingCost
from .dynamics import BasisFunctionModel, BicycleModel, MLPModel, MLPWeights, load_theta
from .simulator import EpisodeTrace, LapMetrics, Summary, classify_laps, simulate_episode, summarize

logger = logging.getLogger(__name__)

BANNER = "SIMULATION RESULTS - synthetic track and vehicle model, not field data"


def build_model(cfg: ExperimentConfig):
    c = cfg.controller
    if c.model == "truth":
        return BicycleModel(cfg.plant, c.model_substeps)
    if c.model == "basis":
        return BasisFunctionModel.from_theta(load_theta(c.theta_file))
    return MLPModel(MLPWeights.load(c.mlp_file))


def build_controller(cfg: ExperimentConfig, cmap, rule: Optional[str] = None, target: Optional[float] = None,
                     workers: int = 1, model=None) -> MPPIController:
    c = cfg.controller
    cost_params = cfg.cost if target is None else replace(cfg.cost, v_des=float(target))
    return MPPIController(model=build_model(cfg) if model is None else model,
                          cost=DrivingCost(cmap, cost_params), samples=c.samples,
                          horizon=c.horizon_steps, dt=c.dt_s, sigma=c.sigma_diag, lambda_=c.lambda_,
                          gamma=c.gamma, explore_fraction=c.explore_fraction, weight_rule=rule or c.weight_rule,
                          delta=c.delta, sg_window=c.sg_window, sg_degree=c.sg_degree, bounds=c.bounds(),
                          workers=workers)


@dataclass
class EpisodeResult:
    seed: int
    rule: str
    target: float
    trace: EpisodeTrace
    laps: list


def run_episode(cfg: ExperimentConfig, seed: int, rule: Optional[str] = None, target: Optional[float] = None,
                workers: int = 1, built=None, model=None) -> EpisodeResult:
    cmap, line, x0, _ = built if built is not None else cfg.map.build()
    ctl = build_controller(cfg, cmap, rule, target, workers, model)
    s = cfg.sim
    trace = simulate_episode(ctl, x0, cmap, s.duration_s, plant=cfg.plant, plant_substeps=s.plant_substeps,
                             exec_sigma=s.exec_sigma_diag, estimate_std=s.estimate_std,
                             disturbances=s.disturbances, seed=seed, bounds=cfg.controller.bounds(),
                             stop_on_failure=s.stop_on_failure, failure=s.failure,
                             config={"rule": rule or cfg.controller.weight_rule,
                                     "target_mps": target if target is not None else cfg.cost.v_des})
    laps = classify_laps(trace, line, s.failure)
    return EpisodeResult(seed, rule or cfg.controller.weight_rule,
                         float(target if target is not None else cfg.cost.v_des), trace, laps)


@dataclass
class CellResult:
    rule: str
    target: float
    episodes: list

    @property
    def laps(self) -> list:
        return [lap for ep in self.episodes for lap in ep.laps]

    @property
    def summary(self) -> Summary:
        return summarize(self.laps)


def run_cell(cfg: ExperimentConfig, rule: str, target: float, seeds: Sequence[int], workers: int = 1,
             model=None) -> CellResult:
    built = cfg.map.build()
    eps = []
    for seed in seeds:
        res = run_episode(cfg, seed, rule, target, workers, built, model)
        logger.info("rule=%s target=%.2f seed=%d laps=%d aborted=%s", rule, target, seed, len(res.laps),
                    res.trace.aborted)
        eps.append(res)
    return CellResult(rule, float(target), eps)


def run_benchmark(cfg: ExperimentConfig, workers: int = 1, seeds: Optional[Sequence[int]] = None):
    seeds = cfg.seeds if seeds is None else tuple(seeds)
    if not seeds:
        raise ValueError("benchmark needs at least one seed")
    return [run_cell(cfg, rule, target, seeds, workers)
            for rule in cfg.benchmark.weight_rules for target in cfg.benchmark.targets_mps]


SUMMARY_COLUMNS = ("rule", "target_mps", "laps", "success_pct", "lap_time_mean_s", "lap_time_std_s",
                   "v_min_mps", "v_max_mps")


def _f(x: float, digits: int = 3) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.{digits}f}"


def summary_rows(cells: Sequence[CellResult]) -> list:
    rows = []
    for c in cells:
        s = c.summary
        rows.append([c.rule, _f(c.target, 2), str(s.laps), _f(100.0 * s.success_rate, 1),
                     _f(s.lap_time_mean), _f(s.lap_time_std), _f(s.v_min), _f(s.v_max)])
    return rows


def write_summary_csv(cells: Sequence[CellResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(summary_rows(cells))


def format_summary(cells: Sequence[CellResult]) -> str:
    rows = [list(SUMMARY_COLUMNS)] + summary_rows(cells)
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [BANNER]
    for r in rows:
        lines.append("  ".join(v.rjust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)
