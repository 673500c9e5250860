"""Lambertian LoS, mirror and diffuse-wall gains, SNR and rate.

The scalar ``*_gain`` functions evaluate one link directly. ``link_geometry``
evaluates every link of a scene at once; its FoV-free result is gated per
field of view with :meth:`LinkGeometry.gate`, so sweeps over FoV and ADR
tier reuse one geometry pass.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .scenario import DOWN, Scenario

log = logging.getLogger(__name__)

GAIN_FLOOR = 1e-15
# Slack on the inclusive FoV boundary, in radians.
_FOV_EPS = 1e-12


def lambertian_order(half_power_angle: float) -> float:
    """Lambertian mode number of an LED with the given half-power semi-angle."""
    if not 0 < half_power_angle < math.pi / 2:
        raise ValueError("half-power semi-angle must lie in (0, pi/2)")
    return -1.0 / math.log2(math.cos(half_power_angle))


def _cos_pow(c: float, m: float) -> float:
    return math.exp(m * math.log(c)) if c > 0 else 0.0


def _unit(src, dst) -> tuple[np.ndarray, float]:
    diff = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    d = float(np.linalg.norm(diff))
    return diff / d, d


def _within_fov(cos_incidence: float, fov: float) -> bool:
    if cos_incidence <= 0:
        return False
    return math.acos(min(1.0, cos_incidence)) <= fov + _FOV_EPS


def los_gain(ap, device, pointing, m, *, area, fov, indicator=1, ap_normal=DOWN) -> float:
    """Direct-path gain from an AP to one photodiode."""
    if not indicator:
        return 0.0
    e, d = _unit(ap, device)
    cos_irr = float(np.dot(ap_normal, e))
    cos_inc = float(np.dot(pointing, -e))
    if cos_irr <= 0 or not _within_fov(cos_inc, fov):
        return 0.0
    return (m + 1) * area / (2 * math.pi * d * d) * _cos_pow(cos_irr, m) * cos_inc


def oris_gain(ap, mirror, device, pointing, m, *, area, fov, reflectivity,
              ap_normal=DOWN) -> float:
    """Gain of the AP -> mirror -> photodiode path for a perfectly steered mirror."""
    e1, d1 = _unit(ap, mirror)
    e2, d2 = _unit(mirror, device)
    cos_irr = float(np.dot(ap_normal, e1))
    cos_inc = float(np.dot(pointing, -e2))
    if cos_irr <= 0 or not _within_fov(cos_inc, fov):
        return 0.0
    return (reflectivity * (m + 1) * area / (2 * math.pi * (d1 + d2) ** 2)
            * _cos_pow(cos_irr, m) * cos_inc)


def wall_gain(ap, cell, cell_normal, cell_area, device, pointing, m, *, area, fov,
              reflectivity, ap_normal=DOWN) -> float:
    """Single-bounce diffuse gain through one wall cell."""
    e1, d1 = _unit(ap, cell)
    e2, d2 = _unit(cell, device)
    cos_irr_ap = float(np.dot(ap_normal, e1))
    cos_inc_cell = float(np.dot(cell_normal, -e1))
    cos_irr_cell = float(np.dot(cell_normal, e2))
    cos_inc = float(np.dot(pointing, -e2))
    if min(cos_irr_ap, cos_inc_cell, cos_irr_cell) <= 0 or not _within_fov(cos_inc, fov):
        return 0.0
    return (reflectivity * (m + 1) * area * cell_area
            / (2 * math.pi * d1 * d1 * d2 * d2)
            * _cos_pow(cos_irr_ap, m) * cos_inc_cell * cos_irr_cell * cos_inc)


@dataclass(frozen=True)
class LinkBudget:
    total_power: float = 1.0
    n_subcarriers: int = 64
    noise_psd: float = 2.5e-20
    bandwidth: float = 20e6
    responsivity: float = 0.4

    def __post_init__(self):
        if self.n_subcarriers < 4 or self.n_subcarriers % 2:
            raise ValueError("n_subcarriers must be even and at least 4")
        for name in ("total_power", "noise_psd", "bandwidth", "responsivity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_subcarrier_power(cls, p_sc: float, n_subcarriers: int = 64, **kw) -> "LinkBudget":
        return cls(total_power=p_sc * math.sqrt(n_subcarriers - 2),
                   n_subcarriers=n_subcarriers, **kw)

    @property
    def subcarrier_power(self) -> float:
        # DC and Nyquist subcarriers carry no data.
        return self.total_power / math.sqrt(self.n_subcarriers - 2)

    @property
    def optical_scale(self) -> float:
        """Factor turning a summed channel gain into optical SNR."""
        return self.responsivity * self.subcarrier_power / math.sqrt(
            self.noise_psd * self.bandwidth)


@dataclass(frozen=True)
class Allocation:
    """Mirror assignments as ``(k, l, n, u)`` tuples.

    Solvers build these through :meth:`from_assignment`, which cannot assign a
    mirror twice. The raw constructor accepts anything so that corrupted
    allocations can be certified as invalid.
    """

    entries: tuple[tuple[int, int, int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "entries", tuple(tuple(int(v) for v in e) for e in self.entries))

    @classmethod
    def from_assignment(cls, assignment: Sequence[Optional[tuple[int, int, int]]]) -> "Allocation":
        return cls(tuple((k, *t) for k, t in enumerate(assignment) if t is not None))

    def __len__(self) -> int:
        return len(self.entries)

    def for_target(self, l: int, n: int, u: int) -> list[int]:
        return [k for k, ll, nn, uu in self.entries if (ll, nn, uu) == (l, n, u)]

    def beta(self, n_aps: int, n_oris: int, n_pds: int, n_users: int) -> np.ndarray:
        """Assignment counts shaped (L, K, N, U); a valid allocation is 0/1."""
        b = np.zeros((n_aps, n_oris, n_pds, n_users), dtype=np.int64)
        for k, l, n, u in self.entries:
            b[l, k, n, u] += 1
        return b

    def to_list(self) -> list[list[int]]:
        return [list(e) for e in self.entries]


@dataclass(frozen=True)
class GainTables:
    """Gated gains. Shapes: los/wall_nlos (L, N, U), oris_contrib (L, K, N, U)."""

    los: np.ndarray
    wall_nlos: np.ndarray
    oris_contrib: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.oris_contrib.shape

    def fixed(self) -> np.ndarray:
        """Allocation-independent gain summed over APs, (N, U)."""
        return (self.los + self.wall_nlos).sum(axis=0)

    def restrict(self, n_pds: int) -> "GainTables":
        """Keep only the first ``n_pds`` photodiodes (nested ADR layouts)."""
        return GainTables(self.los[:, :n_pds], self.wall_nlos[:, :n_pds],
                          self.oris_contrib[:, :, :n_pds])

    def without_oris(self) -> "GainTables":
        l, _, n, u = self.shape
        return GainTables(self.los, self.wall_nlos, np.zeros((l, 0, n, u)))

    def to_csv(self, path) -> None:
        """Dump non-zero entries as ``l,k,n,u,gain``; k is ``los``/``wall`` for fixed paths."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l", "k", "n", "u", "gain"])
            for tag, table in (("los", self.los), ("wall", self.wall_nlos)):
                for l, n, u in zip(*np.nonzero(table)):
                    w.writerow([l, tag, n, u, repr(float(table[l, n, u]))])
            for l, k, n, u in zip(*np.nonzero(self.oris_contrib)):
                w.writerow([l, k, n, u, repr(float(self.oris_contrib[l, k, n, u]))])


def _clamp(a: np.ndarray) -> np.ndarray:
    a = np.where(a < GAIN_FLOOR, 0.0, a)
    if a.size and a.max() >= 1.0:
        log.warning("channel gain %.3g >= 1; geometry is probably degenerate", a.max())
    return a


@dataclass(frozen=True)
class LinkGeometry:
    """FoV-free gains with incidence angles at the photodiodes.

    ``*_inc`` hold the photodiode incidence angle in radians; entries whose
    source sits behind the photodiode already carry zero gain.
    """

    los: np.ndarray        # (L, N, U)
    los_inc: np.ndarray    # (L, N, U)
    oris: np.ndarray       # (L, K, N, U)
    oris_inc: np.ndarray   # (K, N, U)
    wall: np.ndarray       # (L, W, N, U)
    wall_inc: np.ndarray   # (W, N, U)

    def restrict(self, n_pds: int) -> "LinkGeometry":
        return LinkGeometry(self.los[:, :n_pds], self.los_inc[:, :n_pds],
                            self.oris[:, :, :n_pds], self.oris_inc[:, :n_pds],
                            self.wall[:, :, :n_pds], self.wall_inc[:, :n_pds])

    def gate(self, fov) -> GainTables:
        """Apply the closed FoV gate. ``fov`` is a scalar or one value per user."""
        n_u = self.los.shape[-1]
        lim = np.broadcast_to(np.asarray(fov, dtype=float), (n_u,)) + _FOV_EPS
        los = np.where(self.los_inc <= lim, self.los, 0.0)
        oris = np.where((self.oris_inc <= lim)[None], self.oris, 0.0)
        wall = np.where((self.wall_inc <= lim)[None], self.wall, 0.0).sum(axis=1)
        return GainTables(_clamp(los), _clamp(wall), _clamp(oris))


def _angles(cos_inc: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(cos_inc, -1.0, 1.0))


def _cos_pow_arr(c: np.ndarray, m: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(c > 0, np.exp(m * np.log(np.where(c > 0, c, 1.0))), 0.0)


def link_geometry(scenario: Scenario) -> LinkGeometry:
    """Evaluate every LoS, mirror and wall path of the scene without the FoV gate."""
    arr = scenario.arrays
    aps = arr["aps"]
    n_l = len(aps)
    users = scenario.users
    n_u = len(users)
    n_k = len(arr["oris_centers"])
    n_w = len(arr["wall_centers"])
    n_n = len(users[0].adr) if users else 0
    m = lambertian_order(scenario.room.half_power_angle)
    if n_u == 0:
        z = np.zeros
        return LinkGeometry(z((n_l, 0, 0)), z((n_l, 0, 0)), z((n_l, n_k, 0, 0)),
                            z((n_k, 0, 0)), z((n_l, n_w, 0, 0)), z((n_w, 0, 0)))

    dev = np.array([u.device_position for u in users])               # (U, 3)
    pts = np.stack([u.pointing for u in users], axis=1)              # (N, U, 3)
    area = np.array([u.pd_area for u in users])                      # (U,)
    block = scenario.blockage
    pref = (m + 1) / (2 * math.pi)

    # Direct paths.
    diff = dev[None] - aps[:, None]                                  # (L, U, 3)
    d = np.linalg.norm(diff, axis=-1)
    e = diff / d[..., None]
    cos_irr = e @ DOWN
    cos_inc = -np.einsum("nuc,luc->lnu", pts, e)
    amp = pref * area / d**2 * _cos_pow_arr(cos_irr, m) * block.los
    los = np.where(cos_inc > 0, amp[:, None, :] * cos_inc, 0.0)
    los_inc = _angles(cos_inc)

    # Mirror paths.
    mir = arr["oris_centers"]
    diff1 = mir[None] - aps[:, None]                                 # (L, K, 3)
    d1 = np.linalg.norm(diff1, axis=-1)
    cos_irr1 = (diff1 @ DOWN) / d1 if n_k else np.zeros((n_l, 0))
    diff2 = dev[None] - mir[:, None]                                 # (K, U, 3)
    d2 = np.linalg.norm(diff2, axis=-1)
    cos_inc2 = -np.einsum("nuc,kuc->knu", pts, diff2) / d2[:, None, :]
    amp = (pref * arr["oris_reflectivity"][None, :, None] * area
           / (d1[:, :, None] + d2[None]) ** 2
           * _cos_pow_arr(cos_irr1, m)[:, :, None] * block.oris)   # (L, K, U)
    oris = np.where(cos_inc2 > 0, amp[:, :, None, :] * cos_inc2[None], 0.0)
    oris_inc = _angles(cos_inc2)

    # Diffuse wall paths.
    cells = arr["wall_centers"]
    normals = arr["wall_normals"]
    diff1 = cells[None] - aps[:, None]                               # (L, W, 3)
    d1 = np.linalg.norm(diff1, axis=-1)
    e1 = diff1 / d1[..., None] if n_w else diff1
    cos_irr_ap = e1 @ DOWN
    cos_inc_cell = -np.einsum("wc,lwc->lw", normals, e1)
    diff2 = dev[None] - cells[:, None]                               # (W, U, 3)
    d2 = np.linalg.norm(diff2, axis=-1)
    e2 = diff2 / d2[..., None] if n_w else diff2
    cos_irr_cell = np.einsum("wc,wuc->wu", normals, e2)
    cos_inc2 = -np.einsum("nuc,wuc->wnu", pts, e2)
    first = np.where(cos_inc_cell > 0, _cos_pow_arr(cos_irr_ap, m) * cos_inc_cell, 0.0)
    second = np.where(cos_irr_cell > 0, cos_irr_cell, 0.0)
    amp = (pref * (arr["wall_reflectivity"] * arr["wall_areas"])[None, :, None] * area
           / (d1[:, :, None] ** 2 * d2[None] ** 2)
           * first[:, :, None] * second[None] * block.wall)        # (L, W, U)
    wall = np.where(cos_inc2 > 0, amp[:, :, None, :] * cos_inc2[None], 0.0)
    wall_inc = _angles(cos_inc2)

    if n_n == 0:
        raise ValueError("users need at least one photodiode")
    return LinkGeometry(los, los_inc, oris, oris_inc, wall, wall_inc)


def compute_gain_tables(scenario: Scenario, fov=None) -> GainTables:
    """Gated tables; ``fov`` defaults to each user's own field of view."""
    if fov is None:
        fov = [u.fov for u in scenario.users]
    return link_geometry(scenario).gate(fov)


def total_gain(l: int, n: int, u: int, allocation: Allocation, tables: GainTables) -> float:
    g = tables.los[l, n, u] + tables.wall_nlos[l, n, u]
    for k in allocation.for_target(l, n, u):
        g += tables.oris_contrib[l, k, n, u]
    return float(g)


def snr(n: int, u: int, allocation: Allocation, budget: LinkBudget, tables: GainTables) -> float:
    """Electrical SNR of photodiode ``n`` of user ``u``; all APs add coherently."""
    h = sum(total_gain(l, n, u, allocation, tables) for l in range(tables.los.shape[0]))
    return (budget.responsivity * budget.subcarrier_power * h) ** 2 / (
        budget.noise_psd * budget.bandwidth)


def user_snr(u: int, allocation: Allocation, budget: LinkBudget,
             tables: GainTables) -> tuple[float, int]:
    """Select-best combining: best photodiode SNR and its index (lowest on ties)."""
    n_pds = tables.los.shape[1]
    if n_pds == 0:
        raise ValueError("receiver has no photodiodes")
    best, best_n = -1.0, 0
    for n in range(n_pds):
        g = snr(n, u, allocation, budget, tables)
        if g > best:
            best, best_n = g, n
    return best, best_n


def rate(gamma) -> float:
    """Capacity lower bound for IM/DD in bit/s/Hz."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0) or np.any(np.isnan(g)):
        raise ValueError("SNR must be non-negative")
    out = np.log2(1.0 + math.e / (2 * math.pi) * g)
    return float(out) if out.ndim == 0 else out


def to_db(values: Iterable[float] | np.ndarray) -> np.ndarray:
    """10 log10, with exact zeros mapped to -inf."""
    v = np.asarray(values, dtype=float)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(v)
