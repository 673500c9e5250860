"""JSON run configuration: a flat document in external units.

Every key is optional; omitted keys take the simulation defaults (4x4x3 m
room, four ceiling APs, 30x5 mirrors per wall, LED half-power angle 80 deg,
wall/mirror reflectivity 0.4/0.95, 1 cm^2 photodiodes at 0.4 A/W, 20 MHz
bandwidth, noise PSD 2.5e-20 W/Hz).
"""

from __future__ import annotations

import json
import math
import numbers
from dataclasses import dataclass
from pathlib import Path

from .channel import LinkBudget
from .experiments import SOLVER_CHOICES, ExperimentConfig
from .scenario import ReceiverConfig, RoomConfig, SceneConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


_POSITIVE = {
    "room_width", "room_depth", "room_height", "oris_reflectivity", "wall_cell_size",
    "pd_area_cm2", "responsivity", "device_height", "body_height", "body_radius",
    "total_power_w", "noise_psd", "bandwidth_hz", "grid_step", "half_power_angle_deg",
    "receiver_fov_deg",
}
_NON_NEGATIVE = {"wall_reflectivity", "body_offset"}
_COUNTS = {"oris_cols", "oris_rows"}
KEYS = _POSITIVE | _NON_NEGATIVE | _COUNTS | {
    "ap_positions", "oris_band_fraction", "receiver_tiers", "n_subcarriers", "trials",
    "fov_deg", "tiers", "oris", "blockage", "user_counts", "seed", "solver", "jobs",
}


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig

    @property
    def resolved(self) -> dict:
        return self.experiment.to_dict()


def _number(key, v) -> float:
    if isinstance(v, bool) or not isinstance(v, numbers.Real) or not math.isfinite(v):
        raise ConfigError(key, f"expected a finite number, got {v!r}")
    return float(v)


def _integer(key, v) -> int:
    if isinstance(v, bool) or not isinstance(v, numbers.Integral):
        if isinstance(v, float) and v.is_integer():
            return int(v)
        raise ConfigError(key, f"expected an integer, got {v!r}")
    return int(v)


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def parse_config(document) -> RunConfig:
    """Validate a config document (dict, JSON text or path) and fill defaults."""
    if isinstance(document, Path):
        document = json.loads(document.read_text())
    elif isinstance(document, str):
        document = json.loads(document) if document.strip() else {}
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key in document:
        if key not in KEYS:
            raise ConfigError(key, "unknown configuration key")
    doc = {k: v for k, v in document.items() if v is not None}

    def num(key, default):
        if key not in doc:
            return default
        v = _number(key, doc[key])
        if key in _POSITIVE and v <= 0:
            raise ConfigError(key, f"must be positive, got {v}")
        if key in _NON_NEGATIVE and v < 0:
            raise ConfigError(key, f"must be non-negative, got {v}")
        return v

    def count(key, default, minimum=0):
        if key not in doc:
            return default
        v = _integer(key, doc[key])
        if v < minimum:
            raise ConfigError(key, f"must be at least {minimum}, got {v}")
        return v

    width = num("room_width", 4.0)
    depth = num("room_depth", 4.0)
    height = num("room_height", 3.0)
    half_power = num("half_power_angle_deg", 80.0)
    if half_power >= 90:
        raise ConfigError("half_power_angle_deg", "must be below 90")
    aps = RoomConfig.ap_positions
    if "ap_positions" in doc:
        aps = []
        for p in _as_list(doc["ap_positions"]):
            if not isinstance(p, (list, tuple)) or len(p) not in (2, 3):
                raise ConfigError("ap_positions", f"expected [x, y] or [x, y, z], got {p!r}")
            xyz = [_number("ap_positions", c) for c in p]
            aps.append(tuple(xyz) if len(xyz) == 3 else (xyz[0], xyz[1], height))
        aps = tuple(aps)
    elif height != 3.0:
        aps = tuple((x, y, height) for x, y, _ in aps)
    try:
        room = RoomConfig(width, depth, height, aps, math.radians(half_power))
    except ValueError as exc:
        raise ConfigError("ap_positions", str(exc)) from None

    band = num("oris_band_fraction", 1.0 / 3.0)
    if not 0 < band < 1:
        raise ConfigError("oris_band_fraction", "must lie in (0, 1)")
    for key in ("oris_reflectivity", "wall_reflectivity"):
        if key in doc and num(key, 0) > 1:
            raise ConfigError(key, "must not exceed 1")

    rx_fov = num("receiver_fov_deg", 45.0)
    if rx_fov > 90:
        raise ConfigError("receiver_fov_deg", "must not exceed 90")
    rx_tiers = count("receiver_tiers", 1)
    if rx_tiers > 3:
        raise ConfigError("receiver_tiers", "must lie in 0..3")
    responsivity = num("responsivity", 0.4)
    receiver = ReceiverConfig(
        fov=math.radians(rx_fov),
        tiers=rx_tiers,
        pd_area=num("pd_area_cm2", 1.0) * 1e-4,
        responsivity=responsivity,
        device_height=num("device_height", 1.0),
        body_offset=num("body_offset", 0.3),
        body_height=num("body_height", 1.75),
        body_radius=num("body_radius", 0.15),
    )
    if receiver.device_height >= height:
        raise ConfigError("device_height", "must be below the ceiling")
    scene = SceneConfig(
        room=room,
        receiver=receiver,
        oris_cols=count("oris_cols", 30),
        oris_rows=count("oris_rows", 5),
        band_fraction=band,
        oris_reflectivity=num("oris_reflectivity", 0.95),
        wall_cell=num("wall_cell_size", 0.25),
        wall_reflectivity=num("wall_reflectivity", 0.4),
    )

    n_sc = count("n_subcarriers", 64, minimum=4)
    if n_sc % 2:
        raise ConfigError("n_subcarriers", "must be even")
    budget = LinkBudget(
        total_power=num("total_power_w", 1.0),
        n_subcarriers=n_sc,
        noise_psd=num("noise_psd", 2.5e-20),
        bandwidth=num("bandwidth_hz", 20e6),
        responsivity=responsivity,
    )

    fov_list = None
    if "fov_deg" in doc:
        fov_list = []
        for v in _as_list(doc["fov_deg"]):
            f = _number("fov_deg", v)
            if not 0 < f <= 90:
                raise ConfigError("fov_deg", f"must lie in (0, 90], got {f}")
            fov_list.append(math.radians(f))
        fov_list = tuple(fov_list) or None
    tier_list = None
    if "tiers" in doc:
        tier_list = []
        for v in _as_list(doc["tiers"]):
            t = _integer("tiers", v)
            if not 0 <= t <= 3:
                raise ConfigError("tiers", f"must lie in 0..3, got {t}")
            tier_list.append(t)
        tier_list = tuple(tier_list) or None
    user_counts = (1, 2, 3, 4)
    if "user_counts" in doc:
        user_counts = tuple(_integer("user_counts", v) for v in _as_list(doc["user_counts"]))
        if any(u < 0 for u in user_counts):
            raise ConfigError("user_counts", "must be non-negative")
    for key in ("oris", "blockage"):
        if key in doc and not isinstance(doc[key], bool):
            raise ConfigError(key, f"expected true/false, got {doc[key]!r}")
    solver = doc.get("solver")
    if solver is not None and solver not in SOLVER_CHOICES:
        raise ConfigError("solver", f"must be one of {', '.join(SOLVER_CHOICES)}")

    experiment = ExperimentConfig(
        scene=scene,
        budget=budget,
        trials=count("trials", None, minimum=1) if "trials" in doc else None,
        fov_list=fov_list,
        tier_list=tier_list,
        oris_enabled=doc.get("oris", True),
        blockage_enabled=doc.get("blockage"),
        user_counts=user_counts,
        grid_step=num("grid_step", 0.1),
        seed=_integer("seed", doc.get("seed", 0)),
        solver=solver,
        jobs=count("jobs", 1, minimum=1),
    )
    return RunConfig(experiment)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc}") from None
    try:
        return parse_config(json.loads(text) if text.strip() else {})
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"{path} is not valid JSON: {exc}") from None
