"""Command-line entry point.

    orisvlc cdf --trials 200 --seed 7 --out cdf.csv
    orisvlc sum-rate --no-oris --out rates.csv
    orisvlc solve --config scene.json --solver exact --out alloc.json

Flags override values from ``--config``. When neither sets a seed, the
``ORISVLC_SEED`` environment variable is used.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .allocation import build_problem, elements_used, solve, verify_solution
from .channel import compute_gain_tables
from .config import ConfigError, load_config, parse_config
from .experiments import (
    RUNNERS,
    SOLVER_CHOICES,
    ExperimentResult,
    check_solver,
    default_jobs,
    write_results,
)
from .geometry import layout_size
from .scenario import sample_users, scenario_to_dict

SEED_ENV = "ORISVLC_SEED"
SUBCOMMANDS = {"cdf": "cdf", "heatmap": "heatmap", "usage": "usage", "sum-rate": "sumrate"}

log = logging.getLogger("orisvlc")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orisvlc",
        description="ORIS-assisted VLC simulator with angle diversity receivers.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "cdf": "single-user SNR samples per FoV, tier and ORIS on/off",
        "heatmap": "SNR over a floor grid for PD/ADR with and without ORIS",
        "usage": "mean number of ORIS elements used per FoV and tier",
        "sum-rate": "mean sum rate versus number of users, with blockage",
        "solve": "solve one sampled scene and dump the allocation as JSON",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help=f"base seed (fallback: ${SEED_ENV})")
        p.add_argument("--trials", type=int, help="Monte Carlo trials per sweep point")
        p.add_argument("--fov", type=float, action="append", metavar="DEG",
                       help="photodiode half FoV in degrees (repeatable)")
        p.add_argument("--tiers", type=int, action="append", metavar="INT",
                       help="ADR tier count 0..3 (repeatable)")
        p.add_argument("--no-oris", action="store_true", help="disable the ORIS deployment")
        p.add_argument("--no-blockage", action="store_true", help="disable body blockage")
        p.add_argument("--solver", choices=SOLVER_CHOICES, help="allocation solver")
        p.add_argument("--jobs", type=int, help="worker processes (default: all CPUs)")
        p.add_argument("--out", type=Path, help="output path")
    return parser


def resolve(args: argparse.Namespace):
    raw = {}
    if args.config is not None:
        load_config(args.config)  # reports file-level errors against the file
        raw = json.loads(args.config.read_text() or "{}")
    doc = dict(raw)
    overrides = {
        "seed": args.seed,
        "trials": args.trials,
        "fov_deg": args.fov,
        "tiers": args.tiers,
        "solver": args.solver,
        "jobs": args.jobs,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_oris:
        doc["oris"] = False
    if args.no_blockage:
        doc["blockage"] = False
    if args.seed is None and "seed" not in raw and os.environ.get(SEED_ENV):
        try:
            doc["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(SEED_ENV, "must be an integer") from None
    if args.jobs is None and "jobs" not in raw:
        doc["jobs"] = default_jobs()
    return parse_config(doc)


def _summarize(result: ExperimentResult) -> list[str]:
    lines = []
    if result.kind == "cdf":
        groups: dict = {}
        for fov, tier, oris, _, db in result.rows:
            groups.setdefault((fov, tier, oris), []).append(db)
        for (fov, tier, oris), vals in groups.items():
            v = np.array(vals)
            lines.append(f"fov={fov:g}deg tier={tier} oris={oris}: median "
                         f"{np.median(v):.2f} dB, outages {int(np.isinf(v).sum())}/{len(v)}")
    elif result.kind == "heatmap":
        groups = {}
        for _, _, rx, oris, db in result.rows:
            groups.setdefault((rx, oris), []).append(db)
        for (rx, oris), vals in groups.items():
            v = np.array(vals)
            finite = v[np.isfinite(v)]
            mean = f"{finite.mean():.2f}" if finite.size else "-inf"
            lines.append(f"receiver={rx} oris={oris}: mean {mean} dB over {len(v)} points")
    elif result.kind == "usage":
        for fov, tier, used in result.rows:
            lines.append(f"fov={fov:g}deg tier={tier}: {used:.1f} elements used")
    else:
        for users, rx, oris, rate in result.rows:
            lines.append(f"users={users} receiver={rx} oris={oris}: {rate:.3f} bit/s/Hz")
    return lines


def run_solve(run, out: Path) -> dict:
    cfg = run.experiment
    n_users = cfg.user_counts[0] if cfg.user_counts else 1
    if n_users < 1:
        raise ValueError("solve needs at least one user")
    fov = cfg.fovs("solve")[0]
    tier = max(cfg.tiers("solve"))
    rx = dataclasses.replace(cfg.scene.receiver, fov=fov, tiers=tier)
    users = sample_users(n_users, cfg.scene.room, [cfg.seed, 5], rx)
    scene = cfg.scene.build(users, cfg.blockage("solve"), oris=cfg.oris_enabled)
    tables = compute_gain_tables(scene)
    problem = build_problem(tables, cfg.budget)
    solver = cfg.solver_for("solve", n_users)
    check_solver(solver, problem)
    result = solve(problem, solver)
    report = verify_solution(problem, result)
    doc = {
        "result": result.to_dict(),
        "objective_db": 20 * math.log10(result.objective) if result.objective > 0 else None,
        "elements_used": elements_used(problem, result),
        "photodiodes": layout_size(tier),
        "verified": report.ok,
        "violations": report.violations,
        "scenario": scenario_to_dict(scene),
        "config": run.resolved,
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2) + "\n")
    return doc


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        run = resolve(args)
        if args.command == "solve":
            out = args.out or Path("solve.json")
            doc = run_solve(run, out)
            print(f"status={doc['result']['status']} "
                  f"objective={doc['result']['objective']!r} verified={doc['verified']} "
                  f"-> {out}")
            return 0
        kind = SUBCOMMANDS[args.command]
        result = RUNNERS[kind](run.experiment)
        out = args.out or Path(f"{kind}.csv")
        write_results(result, out)
        for line in _summarize(result):
            print(line)
        print(f"wrote {len(result.rows)} rows -> {out}")
        return 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"orisvlc: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
