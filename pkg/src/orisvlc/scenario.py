"""Room, reflector grids, users and blockage indicators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BodyCylinder,
    PhotodiodeOrientation,
    adr_layout,
    segments_blocked,
)

DOWN = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class RoomConfig:
    width: float = 4.0
    depth: float = 4.0
    height: float = 3.0
    ap_positions: tuple[tuple[float, float, float], ...] = (
        (1.0, 1.0, 3.0),
        (1.0, 3.0, 3.0),
        (3.0, 1.0, 3.0),
        (3.0, 3.0, 3.0),
    )
    half_power_angle: float = math.radians(80.0)

    def __post_init__(self):
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError("room dimensions must be positive")
        if not 0 < self.half_power_angle < math.pi / 2:
            raise ValueError("LED half-power semi-angle must lie in (0, pi/2)")
        aps = tuple(tuple(float(c) for c in p) for p in self.ap_positions)
        for x, y, z in aps:
            if not (0 <= x <= self.width and 0 <= y <= self.depth and 0 < z <= self.height):
                raise ValueError(f"AP {(x, y, z)} lies outside the room")
        object.__setattr__(self, "ap_positions", aps)

    @property
    def aps(self) -> np.ndarray:
        return np.array(self.ap_positions, dtype=float).reshape(-1, 3)

    def walls(self) -> list[tuple[np.ndarray, np.ndarray, float, np.ndarray]]:
        """(origin, along-wall unit vector, length, inward normal) per wall."""
        w, d = self.width, self.depth
        return [
            (np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]), w, np.array([0.0, 1.0, 0.0])),
            (np.array([w, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), d, np.array([-1.0, 0.0, 0.0])),
            (np.array([w, d, 0.0]), np.array([-1.0, 0.0, 0.0]), w, np.array([0.0, -1.0, 0.0])),
            (np.array([0.0, d, 0.0]), np.array([0.0, -1.0, 0.0]), d, np.array([1.0, 0.0, 0.0])),
        ]


@dataclass(frozen=True)
class ReceiverConfig:
    fov: float = math.radians(45.0)
    tiers: int = 1
    pd_area: float = 1e-4
    responsivity: float = 0.4
    device_height: float = 1.0
    body_offset: float = 0.3
    body_height: float = 1.75
    body_radius: float = 0.15

    def __post_init__(self):
        if not 0 < self.fov <= math.pi / 2:
            raise ValueError("field of view must lie in (0, pi/2]")
        for name in ("pd_area", "responsivity", "device_height", "body_height", "body_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.body_offset < 0:
            raise ValueError("body_offset must be non-negative")
        adr_layout(self.tiers)  # validates the tier count


@dataclass(frozen=True)
class OrisElement:
    center: tuple[float, float, float]
    wall_id: int
    reflectivity: float = 0.95


@dataclass(frozen=True)
class WallElement:
    center: tuple[float, float, float]
    area: float
    normal: tuple[float, float, float]
    reflectivity: float = 0.4


@dataclass(frozen=True)
class User:
    device_position: tuple[float, float, float]
    body: BodyCylinder
    orientation: float
    adr: tuple[PhotodiodeOrientation, ...]
    fov: float
    pd_area: float
    responsivity: float

    @property
    def pointing(self) -> np.ndarray:
        """(N, 3) photodiode pointing vectors in room coordinates."""
        return np.array([pd.pointing for pd in self.adr])


def build_crown_molding(
    room: RoomConfig,
    cols: int = 30,
    rows: int = 5,
    band_fraction: float = 1.0 / 3.0,
    reflectivity: float = 0.95,
) -> list[OrisElement]:
    """Mirror grid of ``cols x rows`` cells per wall in the top band."""
    if cols < 1 or rows < 1:
        raise ValueError("cols and rows must be at least 1")
    if not 0 < band_fraction < 1:
        raise ValueError("band_fraction must lie in (0, 1)")
    if not 0 < reflectivity <= 1:
        raise ValueError("ORIS reflectivity must lie in (0, 1]")
    z_lo = (1.0 - band_fraction) * room.height
    dz = band_fraction * room.height / rows
    elements = []
    for wall_id, (origin, along, length, _) in enumerate(room.walls()):
        ds = length / cols
        for i in range(cols):
            for j in range(rows):
                c = origin + (i + 0.5) * ds * along
                c[2] = z_lo + (j + 0.5) * dz
                elements.append(OrisElement(tuple(c), wall_id, reflectivity))
    return elements


def build_wall_grid(
    room: RoomConfig,
    cell_size: float = 0.25,
    band_fraction: float = 1.0 / 3.0,
    reflectivity: float = 0.4,
) -> list[WallElement]:
    """Diffuse cells tiling every wall below the crown band.

    Cell counts are floor-divided so cells stretch to tile each wall exactly.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    if not 0 <= band_fraction < 1:
        raise ValueError("band_fraction must lie in [0, 1)")
    h = (1.0 - band_fraction) * room.height
    n_rows = max(1, math.floor(h / cell_size + 1e-9))
    dz = h / n_rows
    cells = []
    for origin, along, length, normal in room.walls():
        n_cols = max(1, math.floor(length / cell_size + 1e-9))
        ds = length / n_cols
        for i in range(n_cols):
            for j in range(n_rows):
                c = origin + (i + 0.5) * ds * along
                c[2] = (j + 0.5) * dz
                cells.append(WallElement(tuple(c), ds * dz, tuple(normal), reflectivity))
    return cells


def make_user(
    device_xy: tuple[float, float], orientation: float, receiver: ReceiverConfig
) -> User:
    """Place a device at ``device_xy`` with its body behind it."""
    x, y = device_xy
    fx, fy = math.cos(orientation), math.sin(orientation)
    body = BodyCylinder(
        (x - receiver.body_offset * fx, y - receiver.body_offset * fy, 0.0),
        receiver.body_height,
        receiver.body_radius,
    )
    adr = tuple(pd.rotated(orientation) for pd in adr_layout(receiver.tiers))
    return User(
        device_position=(float(x), float(y), receiver.device_height),
        body=body,
        orientation=orientation % (2 * math.pi),
        adr=adr,
        fov=receiver.fov,
        pd_area=receiver.pd_area,
        responsivity=receiver.responsivity,
    )


def sample_users(
    count: int,
    room: RoomConfig,
    rng_seed,
    receiver: ReceiverConfig = ReceiverConfig(),
) -> list[User]:
    """Uniformly placed, uniformly oriented users.

    Devices are drawn from the floor rectangle inset by body offset plus body
    radius, so every body stays inside the room.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = np.random.default_rng(rng_seed)
    margin = receiver.body_offset + receiver.body_radius
    if 2 * margin >= min(room.width, room.depth):
        raise ValueError("room too small for the body clearance margin")
    xs = rng.uniform(margin, room.width - margin, size=count)
    ys = rng.uniform(margin, room.depth - margin, size=count)
    angles = rng.uniform(0.0, 2 * math.pi, size=count)
    return [make_user((xs[i], ys[i]), angles[i], receiver) for i in range(count)]


@dataclass(frozen=True)
class BlockageIndicators:
    """1 where the path is clear. Shapes (L, U), (L, K, U), (L, W, U)."""

    los: np.ndarray
    oris: np.ndarray
    wall: np.ndarray


def _two_hop(aps, reflectors, devices, bodies):
    n_l, n_r, n_u = len(aps), len(reflectors), len(devices)
    first = segments_blocked(
        np.repeat(aps, n_r, axis=0), np.tile(reflectors, (n_l, 1)), bodies
    ).any(axis=1).reshape(n_l, n_r)
    second = segments_blocked(
        np.repeat(reflectors, n_u, axis=0), np.tile(devices, (n_r, 1)), bodies
    ).any(axis=1).reshape(n_r, n_u)
    return (~(first[:, :, None] | second[None, :, :])).astype(np.uint8)


def compute_blockage(
    users: list[User],
    aps,
    oris_elements: list[OrisElement],
    wall_elements: list[WallElement],
    enabled: bool = True,
) -> BlockageIndicators:
    """Indicator tensors for LoS and both reflected hops against every body."""
    aps = np.asarray(aps, dtype=float).reshape(-1, 3)
    n_l, n_u = len(aps), len(users)
    n_k, n_w = len(oris_elements), len(wall_elements)
    if not enabled or n_u == 0:
        return BlockageIndicators(
            np.ones((n_l, n_u), np.uint8),
            np.ones((n_l, n_k, n_u), np.uint8),
            np.ones((n_l, n_w, n_u), np.uint8),
        )
    devices = np.array([u.device_position for u in users])
    bodies = [u.body for u in users]
    los = segments_blocked(
        np.repeat(aps, n_u, axis=0), np.tile(devices, (n_l, 1)), bodies
    ).any(axis=1).reshape(n_l, n_u)
    oris_pts = np.array([e.center for e in oris_elements]).reshape(-1, 3)
    wall_pts = np.array([e.center for e in wall_elements]).reshape(-1, 3)
    return BlockageIndicators(
        (~los).astype(np.uint8),
        _two_hop(aps, oris_pts, devices, bodies),
        _two_hop(aps, wall_pts, devices, bodies),
    )


@dataclass(frozen=True)
class Scenario:
    """Immutable scene. Array views of the element lists are precomputed."""

    room: RoomConfig
    oris: tuple[OrisElement, ...]
    walls: tuple[WallElement, ...]
    users: tuple[User, ...]
    blockage: BlockageIndicators
    arrays: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def n_aps(self) -> int:
        return len(self.room.ap_positions)


def build_scenario(
    room: RoomConfig,
    users: list[User],
    oris: list[OrisElement],
    walls: list[WallElement],
    blockage_enabled: bool = False,
) -> Scenario:
    if users and len({len(u.adr) for u in users}) != 1:
        raise ValueError("all users must carry the same ADR layout")
    blockage = compute_blockage(users, room.aps, oris, walls, blockage_enabled)
    arrays = {
        "aps": room.aps,
        "oris_centers": np.array([e.center for e in oris], dtype=float).reshape(-1, 3),
        "oris_reflectivity": np.array([e.reflectivity for e in oris], dtype=float),
        "wall_centers": np.array([e.center for e in walls], dtype=float).reshape(-1, 3),
        "wall_normals": np.array([e.normal for e in walls], dtype=float).reshape(-1, 3),
        "wall_areas": np.array([e.area for e in walls], dtype=float),
        "wall_reflectivity": np.array([e.reflectivity for e in walls], dtype=float),
    }
    for a in arrays.values():
        a.setflags(write=False)
    return Scenario(room, tuple(oris), tuple(walls), tuple(users), blockage, arrays)


def scenario_to_dict(scenario: Scenario) -> dict:
    """JSON-ready dump of the resolved scene, for reproducibility records."""
    room = scenario.room
    return {
        "room": {
            "width": room.width,
            "depth": room.depth,
            "height": room.height,
            "ap_positions": [list(p) for p in room.ap_positions],
            "half_power_angle_deg": math.degrees(room.half_power_angle),
        },
        "oris": [{"center": list(e.center), "wall_id": e.wall_id,
                  "reflectivity": e.reflectivity} for e in scenario.oris],
        "walls": [{"center": list(e.center), "area": e.area, "normal": list(e.normal),
                   "reflectivity": e.reflectivity} for e in scenario.walls],
        "users": [{
            "device_position": list(u.device_position),
            "body_base": list(u.body.axis_base),
            "body_height": u.body.height,
            "body_radius": u.body.radius,
            "orientation_deg": math.degrees(u.orientation),
            "photodiodes": len(u.adr),
            "fov_deg": math.degrees(u.fov),
        } for u in scenario.users],
        "blockage": {
            "los": scenario.blockage.los.tolist(),
            "blocked_oris_paths": int((scenario.blockage.oris == 0).sum()),
            "blocked_wall_paths": int((scenario.blockage.wall == 0).sum()),
        },
    }


@dataclass(frozen=True)
class SceneConfig:
    """Everything needed to rebuild the static part of a scene."""

    room: RoomConfig = RoomConfig()
    receiver: ReceiverConfig = ReceiverConfig()
    oris_cols: int = 30
    oris_rows: int = 5
    band_fraction: float = 1.0 / 3.0
    oris_reflectivity: float = 0.95
    wall_cell: float = 0.25
    wall_reflectivity: float = 0.4

    def __post_init__(self):
        if self.oris_cols < 0 or self.oris_rows < 0:
            raise ValueError("ORIS grid size must be non-negative")
        if not 0 < self.band_fraction < 1:
            raise ValueError("band_fraction must lie in (0, 1)")
        if not 0 < self.oris_reflectivity <= 1 or not 0 <= self.wall_reflectivity <= 1:
            raise ValueError("reflectivities must lie in [0, 1]")
        if self.wall_cell <= 0:
            raise ValueError("wall_cell must be positive")

    def oris_elements(self) -> list[OrisElement]:
        if self.oris_cols == 0 or self.oris_rows == 0:
            return []
        return build_crown_molding(self.room, self.oris_cols, self.oris_rows,
                                   self.band_fraction, self.oris_reflectivity)

    def wall_elements(self) -> list[WallElement]:
        return build_wall_grid(self.room, self.wall_cell, self.band_fraction,
                               self.wall_reflectivity)

    def build(self, users: list[User], blockage_enabled: bool = False,
              oris: bool = True) -> Scenario:
        return build_scenario(self.room, users, self.oris_elements() if oris else [],
                              self.wall_elements(), blockage_enabled)
