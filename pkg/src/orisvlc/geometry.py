"""Vector helpers, photodiode layouts and body blockage tests.

Room coordinates put the floor corner at the origin with ``z`` pointing up.
All angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Elevation from the vertical axis and azimuth spacing for tiers 0..3.
TIER_ELEVATIONS_DEG = (0.0, 30.0, 60.0, 90.0)
TIER_AZIMUTH_STEPS_DEG = (360.0, 60.0, 30.0, 20.0)
MAX_TIERS = 3

TWO_PI = 2.0 * math.pi
# Parametric slack on the blockage interval; keeps surface-touching endpoints clear.
_T_EPS = 1e-12


def vec3(x: float, y: float, z: float) -> np.ndarray:
    """Return a float64 3-vector."""
    v = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector components: {v}")
    return v


def min_half_fov(x, z):
    """Smallest half field of view that sees a source ``x`` away horizontally
    and ``z`` above an upward-looking receiver.

    Accepts scalars or arrays; scalars return a float.
    """
    x_arr = np.asarray(x, dtype=float)
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr <= 0):
        raise ValueError("vertical distance must be positive")
    if np.any(x_arr < 0):
        raise ValueError("horizontal distance must be non-negative")
    out = np.arctan(x_arr / z_arr)
    return float(out) if out.ndim == 0 else out


def pointing_vector(azimuth: float, elevation: float) -> np.ndarray:
    """Unit pointing vector of a photodiode tilted ``elevation`` away from
    vertical, toward horizontal direction ``azimuth``."""
    s = math.sin(elevation)
    return np.array(
        [math.cos(azimuth) * s, math.sin(azimuth) * s, math.cos(elevation)]
    )


@dataclass(frozen=True)
class PhotodiodeOrientation:
    azimuth: float
    elevation: float

    def __post_init__(self):
        if not 0.0 <= self.elevation <= math.pi / 2 + 1e-15:
            raise ValueError(f"elevation {self.elevation} outside [0, pi/2]")
        az = self.azimuth % TWO_PI
        # A tiny negative angle wraps to exactly 2*pi in floating point.
        object.__setattr__(self, "azimuth", 0.0 if az >= TWO_PI else az)

    @property
    def pointing(self) -> np.ndarray:
        return pointing_vector(self.azimuth, self.elevation)

    def rotated(self, angle: float) -> "PhotodiodeOrientation":
        """Same photodiode after turning the device by ``angle`` about z."""
        return PhotodiodeOrientation(self.azimuth + angle, self.elevation)


def adr_layout(tiers: int) -> list[PhotodiodeOrientation]:
    """Photodiode orientations of an angle diversity receiver.

    Tier 0 is the single upward photodiode. Each further tier adds a ring at
    its elevation, starting at azimuth 0. Layouts nest: the first entries of
    a deeper layout are the shallower layout, in the same order.
    """
    if isinstance(tiers, bool) or int(tiers) != tiers or not 0 <= tiers <= MAX_TIERS:
        raise ValueError(f"tiers must be an integer in 0..{MAX_TIERS}, got {tiers!r}")
    layout = [PhotodiodeOrientation(0.0, 0.0)]
    for t in range(1, int(tiers) + 1):
        elevation = math.radians(TIER_ELEVATIONS_DEG[t])
        step = TIER_AZIMUTH_STEPS_DEG[t]
        count = int(round(360.0 / step))
        layout.extend(
            PhotodiodeOrientation(math.radians(i * step), elevation) for i in range(count)
        )
    return layout


def layout_size(tiers: int) -> int:
    return len(adr_layout(tiers))


def cos_angle_between(src, dst, normal) -> float:
    """Cosine between ``normal`` and the direction from ``src`` to ``dst``."""
    diff = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    dist = float(np.linalg.norm(diff))
    if dist == 0.0:
        raise ValueError("coincident points have no direction")
    return float(np.dot(np.asarray(normal, dtype=float), diff) / dist)


@dataclass(frozen=True)
class BodyCylinder:
    """Vertical cylinder standing on the floor point ``axis_base``."""

    axis_base: tuple[float, float, float]
    height: float
    radius: float

    def __post_init__(self):
        if self.height <= 0 or self.radius <= 0:
            raise ValueError("cylinder height and radius must be positive")
        object.__setattr__(self, "axis_base", tuple(float(c) for c in self.axis_base))

    def contains(self, points) -> np.ndarray:
        """Strict interior test for an array of points (..., 3)."""
        p = np.asarray(points, dtype=float)
        cx, cy, z0 = self.axis_base
        rad2 = (p[..., 0] - cx) ** 2 + (p[..., 1] - cy) ** 2
        return (rad2 < self.radius**2) & (p[..., 2] > z0) & (p[..., 2] < z0 + self.height)


def segments_blocked(p0, p1, bodies) -> np.ndarray:
    """Boolean matrix (segments x bodies): does open segment i pass through
    the interior of body j.

    ``p0`` and ``p1`` are (S, 3) arrays. Segments that only touch a body's
    surface, including at an endpoint, are not blocked.
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    if not bodies:
        return np.zeros((p0.shape[0], 0), dtype=bool)
    base = np.array([b.axis_base for b in bodies])  # (B, 3)
    height = np.array([b.height for b in bodies])
    radius = np.array([b.radius for b in bodies])

    d = (p1 - p0)[:, None, :]  # (S, 1, 3)
    f = p0[:, None, :2] - base[None, :, :2]  # (S, B, 2)

    a = d[..., 0] ** 2 + d[..., 1] ** 2  # (S, 1)
    b = 2.0 * (f[..., 0] * d[..., 0] + f[..., 1] * d[..., 1])
    c = f[..., 0] ** 2 + f[..., 1] ** 2 - radius**2
    a = np.broadcast_to(a, b.shape)

    vertical = a < 1e-300
    disc = b * b - 4.0 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.where(disc > 0, disc, 0.0))
        r_lo = np.where(vertical, -np.inf, (-b - sq) / (2.0 * a))
        r_hi = np.where(vertical, np.inf, (-b + sq) / (2.0 * a))
    radial_empty = np.where(vertical, c >= 0, disc <= 0)

    dz = np.broadcast_to(d[..., 2], b.shape)
    z_start = np.broadcast_to(p0[:, None, 2], b.shape)
    z_bot = base[None, :, 2]
    z_top = z_bot + height[None, :]
    flat = np.abs(dz) < 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (z_bot - z_start) / dz
        tb = (z_top - z_start) / dz
        z_lo = np.where(flat, -np.inf, np.minimum(ta, tb))
        z_hi = np.where(flat, np.inf, np.maximum(ta, tb))
    z_empty = flat & ~((z_start > z_bot) & (z_start < z_top))

    lo = np.maximum(np.maximum(r_lo, z_lo), 0.0)
    hi = np.minimum(np.minimum(r_hi, z_hi), 1.0)
    return ~radial_empty & ~z_empty & (lo < hi - _T_EPS)


def segment_blocked(p0, p1, body: BodyCylinder) -> bool:
    """True iff the open segment ``(p0, p1)`` passes through ``body``."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if np.array_equal(p0, p1):
        raise ValueError("degenerate segment")
    return bool(segments_blocked(p0[None], p1[None], [body])[0, 0])
