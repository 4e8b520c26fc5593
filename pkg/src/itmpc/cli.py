"""Command line entry point: ``itmpc {run,benchmark,sysid,verify,genmap}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .costs import CostMapFormatError
from .dynamics import (BasisFunctionModel, DatasetFormatError, SingularSystemError, load_sysid_dataset,
                       save_sysid_dataset, save_theta)
from .experiment import format_summary, run_cell, write_summary_csv
from .simulator import sysid_dataset, write_metrics_csv, write_overlay_svg, write_trace_csv
from .verification import run_suite

logger = logging.getLogger("itmpc")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seeds = (int(args.seed),)
    if args.out is not None:
        cfg.output_dir = str(args.out)
    return cfg


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_metadata(out: Path, command: str, cfg=None, extra=None) -> None:
    """Timestamps and provenance go here so every other output is reproducible byte for byte."""
    meta = {"command": command, "version": __version__,
            "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "argv": sys.argv[1:]}
    if cfg is not None:
        meta["config"] = cfg.to_dict()
    if extra:
        meta.update(extra)
    (out / f"{command}_meta.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")


def _cell_dir(out: Path, rule: str, target: float) -> Path:
    return _out_dir(out / f"{rule}_{target:g}mps")


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg.output_dir)
    built = cfg.map.build()
    cmap, _, _, oval = built
    rule, target = cfg.controller.weight_rule, cfg.cost.v_des
    cell = run_cell(cfg, rule, target, cfg.seeds, workers=args.threads)
    for ep in cell.episodes:
        stem = out / f"seed_{ep.seed}"
        write_trace_csv(ep.trace, f"{stem}_trace.csv")
        write_metrics_csv(ep.laps, f"{stem}_metrics.csv")
        write_overlay_svg(ep.trace, cmap, f"{stem}_overlay.svg", track=oval)
    write_summary_csv([cell], out / "summary.csv")
    _write_metadata(out, "run", cfg, {"threads": args.threads})
    print(format_summary([cell]))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg.output_dir)
    cells = []
    for rule in cfg.benchmark.weight_rules:
        for target in cfg.benchmark.targets_mps:
            cell = run_cell(cfg, rule, target, cfg.seeds, workers=args.threads)
            d = _cell_dir(out, rule, target)
            for ep in cell.episodes:
                write_metrics_csv(ep.laps, d / f"seed_{ep.seed}_metrics.csv")
            cells.append(cell)
    write_summary_csv(cells, out / "summary.csv")
    table = format_summary(cells)
    (out / "summary.txt").write_text(table + "\n")
    _write_metadata(out, "benchmark", cfg, {"threads": args.threads})
    print(table)
    return EXIT_OK


def _errors(pred, y):
    r = pred - y
    return float(np.mean(r * r)), float(np.mean(np.abs(r)))


def cmd_sysid(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg.output_dir)
    seed = cfg.seeds[0]
    if args.data is not None:
        X, y = load_sysid_dataset(args.data)
    else:
        X, y = sysid_dataset(args.samples, seed=seed, plant=cfg.plant, dt=cfg.controller.dt_s)
        save_sysid_dataset(X, y, out / "sysid_data.csv")
    n_val = int(round(args.val_fraction * len(X)))
    perm = np.random.default_rng(seed).permutation(len(X))
    val, train = perm[:n_val], perm[n_val:]
    model = BasisFunctionModel(reg=args.reg).fit(X[train], y[train])
    save_theta(model.theta_, out / "theta.txt")
    print(f"theta written to {out / 'theta.txt'} ({len(train)} training rows, {len(val)} validation rows)")
    print(f"{'split':<12}{'mse':>14}{'mae':>14}")
    for name, idx in (("train", train), ("validation", val)):
        if len(idx):
            mse, mae = _errors(model.predict(X[idx]), y[idx])
            print(f"{name:<12}{mse:>14.6g}{mae:>14.6g}")
    _write_metadata(out, "sysid", cfg, {"data": args.data, "reg": args.reg})
    return EXIT_OK


def cmd_verify(args) -> int:
    seed = 0 if args.seed is None else int(args.seed)
    results = run_suite(seed, quick=args.quick)
    width = max(len(r.name) for r in results)
    print(f"{'check':<{width}}  {'statistic':>14}  {'threshold':>12}  result")
    for r in results:
        note = f"  ({r.note})" if r.note else ""
        print(f"{r.name:<{width}}  {r.statistic:>14.6g}  {r.threshold:>12.3g}  "
              f"{'PASS' if r.passed else 'FAIL'}{note}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_genmap(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg.output_dir)
    cmap, line, x0, _ = cfg.map.build()
    cmap.save(out / "costmap.txt")
    print(f"cost map {cmap.width}x{cmap.height} at {cmap.resolution} m written to {out / 'costmap.txt'}")
    print(f"start line point {tuple(line.point)} direction {tuple(line.direction)}; "
          f"start pose ({x0.p_x:g}, {x0.p_y:g}, {x0.theta:g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--threads", type=int, default=1, help="rollout worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="itmpc", description="Sampling-based MPC on a simulated vehicle.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="closed-loop episodes for each seed")
    sub.add_parser("benchmark", parents=[common], help="weight rules x speed targets x seeds")
    s = sub.add_parser("sysid", parents=[common], help="fit basis-function dynamics")
    s.add_argument("--data", help="dataset file; generated from the plant when omitted")
    s.add_argument("--reg", type=float, default=1e-8, help="Tikhonov regularization")
    s.add_argument("--samples", type=int, default=20000, help="rows to generate without --data")
    s.add_argument("--val-fraction", type=float, default=0.2)
    v = sub.add_parser("verify", parents=[common], help="oracle and invariant checks")
    v.add_argument("--quick", action="store_true", help="smaller LQ convergence run")
    sub.add_parser("genmap", parents=[common], help="write the configured cost map")
    return p


COMMANDS = {"run": cmd_run, "benchmark": cmd_benchmark, "sysid": cmd_sysid, "verify": cmd_verify,
            "genmap": cmd_genmap}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (ConfigError, CostMapFormatError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except SingularSystemError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
