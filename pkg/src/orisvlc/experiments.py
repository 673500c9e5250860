"""Monte Carlo runners for SNR CDFs, mirror usage, SNR heat maps and sum rate.

Every trial draws its users from a random stream keyed on ``(seed,
experiment, sweep point, trial)``, so results do not depend on worker count
or execution order.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import functools
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .allocation import active_elements, build_problem, elements_used, solve
from .channel import LinkBudget, link_geometry, rate, to_db
from .geometry import layout_size
from .scenario import SceneConfig, build_scenario, make_user, sample_users

log = logging.getLogger(__name__)

SOLVER_CHOICES = ("oracle", "exact", "greedy")
# Multi-user exact search is exponential in the number of useful mirrors.
EXACT_SIZE_CAP = 16

COLUMNS = {
    "cdf": ("fov_deg", "tier", "oris", "trial", "snr_db"),
    "heatmap": ("x_m", "y_m", "receiver", "oris", "snr_db"),
    "usage": ("fov_deg", "tier", "mean_used"),
    "sumrate": ("users", "receiver", "oris", "mean_sum_rate_bps_hz"),
}
_COLUMN_TYPES = {
    "fov_deg": float, "tier": int, "trial": int, "users": int, "receiver": str,
    "x_m": float, "y_m": float, "snr_db": float, "mean_used": float,
    "mean_sum_rate_bps_hz": float, "oris": bool,
}
DEFAULT_TRIALS = {"cdf": 2000, "usage": 500, "sumrate": 500, "heatmap": 1}
_STREAM_TAGS = {"cdf": 1, "usage": 2, "sumrate": 4}


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep settings. ``None`` fields take the per-experiment default."""

    scene: SceneConfig = SceneConfig()
    budget: LinkBudget = LinkBudget()
    trials: Optional[int] = None
    fov_list: Optional[tuple[float, ...]] = None
    tier_list: Optional[tuple[int, ...]] = None
    oris_enabled: bool = True
    blockage_enabled: Optional[bool] = None
    user_counts: tuple[int, ...] = (1, 2, 3, 4)
    grid_step: float = 0.1
    seed: int = 0
    solver: Optional[str] = None
    jobs: int = 1

    def __post_init__(self):
        if self.trials is not None and self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.grid_step <= 0:
            raise ValueError("grid_step must be positive")
        if self.solver is not None and self.solver not in SOLVER_CHOICES:
            raise ValueError(f"solver must be one of {SOLVER_CHOICES}")
        if any(u < 0 for u in self.user_counts):
            raise ValueError("user counts must be non-negative")
        if self.fov_list is not None:
            object.__setattr__(self, "fov_list", tuple(float(f) for f in self.fov_list))
            if any(not 0 < f <= math.pi / 2 for f in self.fov_list):
                raise ValueError("every FoV must lie in (0, 90] degrees")
        if self.tier_list is not None:
            object.__setattr__(self, "tier_list", tuple(int(t) for t in self.tier_list))
            if any(not 0 <= t <= 3 for t in self.tier_list):
                raise ValueError("tiers must lie in 0..3")
        object.__setattr__(self, "user_counts", tuple(int(u) for u in self.user_counts))
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")

    def fovs(self, kind: str) -> tuple[float, ...]:
        if self.fov_list:
            return self.fov_list
        if kind in ("cdf", "usage"):
            return tuple(math.radians(d) for d in (15.0, 45.0, 75.0))
        return (self.scene.receiver.fov,)

    def tiers(self, kind: str) -> tuple[int, ...]:
        if self.tier_list:
            return self.tier_list
        return (0, 1, 2, 3) if kind in ("cdf", "usage") else (self.scene.receiver.tiers,)

    def solver_for(self, kind: str, n_users: int = 1) -> str:
        """Explicit choice, else exact for single-user runs (closed form) and greedy otherwise."""
        if self.solver is not None:
            return self.solver
        return "exact" if kind != "sumrate" and n_users <= 1 else "greedy"

    def n_trials(self, kind: str) -> int:
        return self.trials if self.trials is not None else DEFAULT_TRIALS[kind]

    def blockage(self, kind: str) -> bool:
        if self.blockage_enabled is not None:
            return self.blockage_enabled
        return kind == "sumrate"

    def to_dict(self) -> dict:
        """Flat config document in external units (degrees, cm^2)."""
        s, r, rx, b = self.scene, self.scene.room, self.scene.receiver, self.budget
        return {
            "room_width": r.width,
            "room_depth": r.depth,
            "room_height": r.height,
            "ap_positions": [list(p) for p in r.ap_positions],
            "half_power_angle_deg": round(math.degrees(r.half_power_angle), 9),
            "oris_cols": s.oris_cols,
            "oris_rows": s.oris_rows,
            "oris_band_fraction": s.band_fraction,
            "oris_reflectivity": s.oris_reflectivity,
            "wall_cell_size": s.wall_cell,
            "wall_reflectivity": s.wall_reflectivity,
            "receiver_fov_deg": round(math.degrees(rx.fov), 9),
            "receiver_tiers": rx.tiers,
            "pd_area_cm2": rx.pd_area * 1e4,
            "responsivity": b.responsivity,
            "device_height": rx.device_height,
            "body_offset": rx.body_offset,
            "body_height": rx.body_height,
            "body_radius": rx.body_radius,
            "total_power_w": b.total_power,
            "n_subcarriers": b.n_subcarriers,
            "noise_psd": b.noise_psd,
            "bandwidth_hz": b.bandwidth,
            "trials": self.trials,
            "fov_deg": None if self.fov_list is None else [round(math.degrees(f), 9)
                                                          for f in self.fov_list],
            "tiers": None if self.tier_list is None else list(self.tier_list),
            "oris": self.oris_enabled,
            "blockage": self.blockage_enabled,
            "user_counts": list(self.user_counts),
            "grid_step": self.grid_step,
            "seed": self.seed,
            "solver": self.solver,
            "jobs": self.jobs,
        }


@dataclass
class ExperimentResult:
    kind: str
    rows: list[tuple]
    metadata: dict = field(default_factory=dict)

    @property
    def columns(self) -> tuple[str, ...]:
        return COLUMNS[self.kind]

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def select(self, **match) -> list[tuple]:
        idx = {self.columns.index(k): v for k, v in match.items()}
        return [r for r in self.rows if all(r[i] == v for i, v in idx.items())]


# Scene element lists are pure functions of the scene config; cache per process.
@functools.lru_cache(maxsize=8)
def _static(scene: SceneConfig):
    return scene.oris_elements(), scene.wall_elements()


def _build(scene: SceneConfig, users, blockage: bool):
    oris, walls = _static(scene)
    return build_scenario(scene.room, users, oris, walls, blockage)


def check_solver(solver: str, problem) -> None:
    if solver == "exact" and problem.n_users > 1 and len(active_elements(problem)) > EXACT_SIZE_CAP:
        raise ValueError(
            f"exact solver is capped at {EXACT_SIZE_CAP} useful mirrors for multi-user "
            f"scenes ({len(active_elements(problem))} here); use --solver greedy")


def _solve(cfg: ExperimentConfig, kind: str, tables):
    problem = build_problem(tables, cfg.budget)
    solver = cfg.solver_for(kind, problem.n_users)
    check_solver(solver, problem)
    return problem, solve(problem, solver)


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _oris_modes(cfg: ExperimentConfig) -> tuple[bool, ...]:
    return (True, False) if cfg.oris_enabled else (False,)


def _single_user_trial(args) -> list[tuple]:
    cfg, kind, trial, modes = args
    tiers = cfg.tiers(kind)
    rx = dataclasses.replace(cfg.scene.receiver, tiers=max(tiers))
    users = sample_users(1, cfg.scene.room, [cfg.seed, _STREAM_TAGS[kind], trial], rx)
    geo = link_geometry(_build(cfg.scene, users, cfg.blockage(kind)))
    out = []
    for fov in cfg.fovs(kind):
        gated = geo.gate(fov)
        for tier in tiers:
            tables = gated.restrict(layout_size(tier))
            for oris in modes:
                problem, res = _solve(cfg, kind, tables if oris else tables.without_oris())
                used = elements_used(problem, res)
                out.append((_deg(fov), tier, oris, trial, res.user_snr[0], used))
    return out


def _deg(rad: float) -> float:
    return round(math.degrees(rad), 9)


def _metadata(kind: str, cfg: ExperimentConfig) -> dict:
    doc = cfg.to_dict()
    digest = hashlib.sha1(json.dumps([kind, doc], sort_keys=True).encode()).hexdigest()
    return {
        "kind": kind,
        "run_id": digest[:12],
        "seed": cfg.seed,
        "config": doc,
        "version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def run_cdf(config: ExperimentConfig) -> ExperimentResult:
    """Single-user select-best SNR samples per (FoV, tier, ORIS on/off)."""
    n = config.n_trials("cdf")
    per_trial = _map(_single_user_trial, [(config, "cdf", t, _oris_modes(config)) for t in range(n)], config.jobs)
    rows = [(fov, tier, oris, trial, float(to_db(g)))
            for trial_rows in per_trial for fov, tier, oris, trial, g, _ in trial_rows]
    rows.sort(key=lambda r: (r[0], r[1], not r[2], r[3]))
    return ExperimentResult("cdf", rows, _metadata("cdf", config))


def run_usage(config: ExperimentConfig) -> ExperimentResult:
    """Mean number of mirrors feeding the selected photodiode per (FoV, tier)."""
    n = config.n_trials("usage")
    # Without mirrors in the scene nothing can be used; the runner still reports zeros.
    modes = (config.oris_enabled,)
    per_trial = _map(_single_user_trial, [(config, "usage", t, modes) for t in range(n)],
                     config.jobs)
    sums: dict[tuple[float, int], int] = {}
    for trial_rows in per_trial:
        for fov, tier, _, _, _, used in trial_rows:
            sums[(fov, tier)] = sums.get((fov, tier), 0) + used
    rows = [(fov, tier, total / n) for (fov, tier), total in sorted(sums.items())]
    return ExperimentResult("usage", rows, _metadata("usage", config))


def grid_points(length: float, step: float) -> np.ndarray:
    """Cell centres of a 1-D grid; ``step`` must divide ``length``."""
    cells = length / step
    if abs(cells - round(cells)) > 1e-9:
        raise ValueError(f"grid_step {step} does not divide {length}")
    return (np.arange(int(round(cells))) + 0.5) * step


def _heatmap_column(args) -> list[tuple]:
    cfg, x, ys = args
    fov = cfg.fovs("heatmap")[0]
    adr_tier = max(cfg.tiers("heatmap"))
    rx = dataclasses.replace(cfg.scene.receiver, fov=fov, tiers=adr_tier)
    out = []
    for y in ys:
        user = make_user((x, y), 0.0, rx)
        gated = link_geometry(_build(cfg.scene, [user], cfg.blockage("heatmap"))).gate(fov)
        for receiver, n_pds in (("pd", 1), ("adr", layout_size(adr_tier))):
            tables = gated.restrict(n_pds)
            for oris in _oris_modes(cfg):
                _, res = _solve(cfg, "heatmap", tables if oris else tables.without_oris())
                out.append((float(x), float(y), receiver, oris, float(to_db(res.user_snr[0]))))
    return out


def run_heatmap(config: ExperimentConfig) -> ExperimentResult:
    """Select-best SNR over a floor grid for {PD, ADR} x {ORIS, no ORIS}.

    Users face +x and blockage is off unless explicitly enabled.
    """
    room = config.scene.room
    xs = grid_points(room.width, config.grid_step)
    ys = grid_points(room.depth, config.grid_step)
    cols = _map(_heatmap_column, [(config, x, tuple(ys)) for x in xs], config.jobs)
    rows = [r for col in cols for r in col]
    rows.sort(key=lambda r: (r[2] != "pd", not r[3], r[0], r[1]))
    return ExperimentResult("heatmap", rows, _metadata("heatmap", config))


def _sum_rate_trial(args) -> dict:
    cfg, n_users, trial = args
    tier = max(cfg.tiers("sumrate"))
    fov = cfg.fovs("sumrate")[0]
    rx = dataclasses.replace(cfg.scene.receiver, fov=fov, tiers=tier)
    users = sample_users(n_users, cfg.scene.room,
                         [cfg.seed, _STREAM_TAGS["sumrate"], n_users, trial], rx)
    gated = link_geometry(_build(cfg.scene, users, cfg.blockage("sumrate"))).gate(fov)
    out = {}
    for receiver, n_pds in (("pd", 1), ("adr", layout_size(tier))):
        tables = gated.restrict(n_pds)
        for oris in _oris_modes(cfg):
            _, res = _solve(cfg, "sumrate", tables if oris else tables.without_oris())
            out[(receiver, oris)] = float(sum(rate(g) for g in res.user_snr))
    return out


def run_sum_rate(config: ExperimentConfig) -> ExperimentResult:
    """Mean over trials of the summed user rates under the max-min allocation."""
    n = config.n_trials("sumrate")
    rows = []
    for n_users in config.user_counts:
        keys = [(r, o) for r in ("pd", "adr") for o in _oris_modes(config)]
        if n_users == 0:
            rows.extend((0, r, o, 0.0) for r, o in keys)
            continue
        trials = _map(_sum_rate_trial, [(config, n_users, t) for t in range(n)], config.jobs)
        for r, o in keys:
            rows.append((n_users, r, o, float(np.mean([t[(r, o)] for t in trials]))))
    return ExperimentResult("sumrate", rows, _metadata("sumrate", config))


RUNNERS = {"cdf": run_cdf, "usage": run_usage, "heatmap": run_heatmap, "sumrate": run_sum_rate}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)  # round-trips exactly; -inf marks an outage
    return str(v)


def _parse(name: str, text: str):
    typ = _COLUMN_TYPES[name]
    if typ is bool:
        if text not in ("true", "false"):
            raise ValueError(f"bad boolean {text!r} in column {name}")
        return text == "true"
    return typ(text)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_results(result: ExperimentResult, path) -> Path:
    """Write ``result`` as CSV plus a JSON metadata sidecar; returns the CSV path."""
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(result.columns)
            for row in result.rows:
                w.writerow([_fmt(v) for v in row])
        with open(sidecar_path(path), "w") as fh:
            json.dump(result.metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_results(path) -> ExperimentResult:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        kinds = [k for k, cols in COLUMNS.items() if cols == header]
        if not kinds:
            raise ValueError(f"{path}: unrecognised header {header}")
        rows = [tuple(_parse(name, v) for name, v in zip(header, r)) for r in reader]
    meta = {}
    if sidecar_path(path).exists():
        meta = json.loads(sidecar_path(path).read_text())
    return ExperimentResult(kinds[0], rows, meta)


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
