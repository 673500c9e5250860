"""Acceptance criteria, each run at its stated scale and tolerance.

Every test records a single PASS/FAIL line; the lines are repeated in the
"acceptance criteria" section of the pytest summary.
"""

import math
import time

import numpy as np
import pytest

from orisvlc.allocation import (
    AllocationProblem,
    branch_and_bound,
    brute_force,
    build_problem,
    greedy,
    verify_solution,
)
from orisvlc.channel import (
    Allocation,
    LinkBudget,
    compute_gain_tables,
    link_geometry,
    los_gain,
    oris_gain,
    user_snr,
    wall_gain,
)
from orisvlc.experiments import (
    ExperimentConfig,
    grid_points,
    run_cdf,
    run_heatmap,
    run_sum_rate,
    run_usage,
    write_results,
)
from orisvlc.geometry import layout_size, min_half_fov
from orisvlc.scenario import ReceiverConfig, RoomConfig, SceneConfig, build_crown_molding, sample_users
from oracles import random_problem

pytestmark = pytest.mark.slow

DEG = math.radians


def test_c01_solver_exactness(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    bitwise = close = mismatched = 0
    for _ in range(200):
        p = random_problem(rng, L=2, K=int(rng.integers(1, 5)), N=3, U=2)
        a, b = branch_and_bound(p).objective, brute_force(p).objective
        if a == b:
            bitwise += 1
        elif abs(a - b) <= 1e-12 * max(abs(a), abs(b)):
            close += 1
        else:
            mismatched += 1
    elapsed = time.perf_counter() - start
    criterion(1, mismatched == 0 and elapsed < 10,
              f"200 instances: {bitwise} bitwise-equal, {close} within 1e-12, "
              f"{mismatched} mismatched; {elapsed:.2f} s (limit 10 s)")


def test_c02_oris_snr_gain(criterion):
    cfg = ExperimentConfig(trials=2000, fov_list=(DEG(75),), tier_list=(1,), solver="greedy",
                           seed=0)
    start = time.perf_counter()
    result = run_cdf(cfg)
    elapsed = time.perf_counter() - start
    on = np.array([r[4] for r in result.select(oris=True)])
    off = np.array([r[4] for r in result.select(oris=False)])
    q = np.arange(1, 100)
    diff = np.percentile(on, q) - np.percentile(off, q)
    diff = diff[np.isfinite(diff)]
    best = float(diff.max())
    criterion(2, 20 <= best <= 40 and elapsed < 300,
              f"max percentile gain {best:.2f} dB (target [20, 40]); medians "
              f"{np.median(on):.1f} vs {np.median(off):.1f} dB; {elapsed:.0f} s (limit 300 s)")


def test_c03_fov_tier_monotonicity(criterion):
    trials = 200
    budget = LinkBudget()
    fovs = (DEG(15), DEG(45), DEG(75))
    violations = checks = 0
    scene = SceneConfig(receiver=ReceiverConfig(tiers=3))
    for t in range(trials):
        users = sample_users(1, scene.room, [99, t], scene.receiver)
        geo = link_geometry(scene.build(users))
        # Fixed allocation: the optimum for the narrowest, smallest receiver.
        narrow = build_problem(geo.gate(fovs[0]).restrict(1), budget)
        alloc = branch_and_bound(narrow).allocation
        for oris in (True, False):
            fixed = alloc if oris else Allocation()
            snr = np.zeros((3, 4))
            for i, fov in enumerate(fovs):
                gated = geo.gate(fov)
                for tier in range(4):
                    snr[i, tier] = user_snr(0, fixed, budget, gated.restrict(layout_size(tier)))[0]
            violations += int((np.diff(snr, axis=0) < 0).sum() + (np.diff(snr, axis=1) < 0).sum())
            checks += 2 * 4 + 3 * 3
    # Re-optimised per configuration, the sampled CDF data must obey the same order.
    res = run_cdf(ExperimentConfig(trials=100, seed=5))
    table = {(f, tr, o, i): v for f, tr, o, i, v in res.rows}
    for (f, tr, o, i), v in table.items():
        if tr > 0:
            checks += 1
            violations += v < table[(f, tr - 1, o, i)]
        if f > 15:
            lower = 45.0 if f == 75 else 15.0
            checks += 1
            violations += v < table[(lower, tr, o, i)]
    criterion(3, violations == 0, f"{violations} violations in {checks} samplewise comparisons")


def test_c04_usage_trend(criterion):
    cfg = ExperimentConfig(trials=500, tier_list=(1, 3), seed=0)
    start = time.perf_counter()
    result = run_usage(cfg)
    elapsed = time.perf_counter() - start
    used = {(f, t): u for f, t, u in result.rows}
    tier1 = [used[(f, 1)] for f in (15.0, 45.0, 75.0)]
    strictly = tier1[0] < tier1[1] < tier1[2]
    rel = [abs(used[(f, 1)] - used[(f, 3)]) / used[(f, 1)] for f in (45.0, 75.0)]
    criterion(4, strictly and max(rel) <= 0.05 and elapsed < 180,
              f"tier-1 usage {tier1[0]:.1f} < {tier1[1]:.1f} < {tier1[2]:.1f}; tier 1 vs 3 "
              f"differ {100 * rel[0]:.2f}% / {100 * rel[1]:.2f}% at 45/75 deg; {elapsed:.0f} s")


def test_c05_heatmap_edge_effect(criterion):
    cfg = ExperimentConfig(fov_list=(DEG(45),), tier_list=(0,), grid_step=0.1, solver="greedy")
    start = time.perf_counter()
    result = run_heatmap(cfg)
    elapsed = time.perf_counter() - start
    rows = [(x, y, v) for x, y, rx, oris, v in result.rows if rx == "pd" and oris]
    border = [v for x, y, v in rows if min(x, y, 4 - x, 4 - y) < 0.5]
    centre = [v for x, y, v in rows if 1.5 < x < 2.5 and 1.5 < y < 2.5]
    gap = float(np.mean(border) - np.mean(centre))
    criterion(5, 10 <= gap <= 30 and elapsed < 600,
              f"border {np.mean(border):.1f} dB vs centre {np.mean(centre):.1f} dB, "
              f"difference {gap:.1f} dB (target [10, 30]); {elapsed:.0f} s")


def test_c06_minimum_fov_geometry(criterion):
    start = time.perf_counter()
    room = RoomConfig()
    mirrors = np.array([e.center for e in build_crown_molding(room)])
    xs = grid_points(room.width, 0.1)
    gx, gy = np.meshgrid(xs, grid_points(room.depth, 0.1), indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    horiz = np.linalg.norm(pts[:, None, :] - mirrors[None, :, :2], axis=-1)
    need = np.degrees(min_half_fov(horiz, mirrors[None, :, 2] - 1.0))
    closest = need.min(axis=1)
    share = float((closest > 60).mean())
    elapsed = time.perf_counter() - start
    criterion(6, share > 0.5 and elapsed < 1,
              f"{100 * share:.1f}% of {len(pts)} positions need more than 60 deg to the nearest "
              f"element (target > 50%); range {closest.min():.1f}..{closest.max():.1f} deg; "
              f"{elapsed:.2f} s")


def test_c07_sum_rate_trends(criterion):
    cfg = ExperimentConfig(trials=200, tier_list=(1,), fov_list=(DEG(45),), user_counts=(1, 2, 3, 4),
                           blockage_enabled=True, seed=0)
    result = run_sum_rate(cfg)
    rate = {(u, rx, o): v for u, rx, o, v in result.rows}
    curve = [rate[(u, "adr", True)] for u in (1, 2, 3, 4)]
    monotone = all(b >= a for a, b in zip(curve, curve[1:]))
    dominate = all(rate[(u, rx, True)] >= rate[(u, rx, False)]
                   for u in (1, 2, 3, 4) for rx in ("pd", "adr"))
    criterion(7, monotone and dominate,
              "ORIS+ADR " + " / ".join(f"{v:.2f}" for v in curve) + " bit/s/Hz for U=1..4; "
              f"non-decreasing={monotone}; ORIS >= no-ORIS everywhere={dominate}")


def test_c08_golden_gains(criterion):
    up = np.array([0.0, 0.0, 1.0])
    kw = dict(area=1e-4, fov=DEG(60))
    r = math.sqrt(2)
    got = {
        "LoS": los_gain([0, 0, 3], [0, 0, 1], up, 1.0, **kw),
        "ORIS": oris_gain([0, 0, 3], [0, 0, 2], [0, 0, 1], up, 1.0, reflectivity=0.95, **kw),
        "wall": wall_gain([0, 0, 3], [r, 0, 3 - r], [-1, 0, 0], 0.0625, [0, 0, 3 - 2 * r], up,
                          1.0, reflectivity=0.4, **kw),
    }
    # Independent hand evaluations, frozen.
    want = {
        "LoS": 2e-4 / (8 * math.pi),
        "ORIS": 0.95 * 2e-4 / (8 * math.pi),
        "wall": 0.4 * 2e-4 * 0.0625 / (2 * math.pi * 16) * 0.25,
    }
    listed = {"LoS": 7.9577e-6, "ORIS": 7.5598e-6, "wall": 1.2434e-8}
    ok = all(f"{got[k]:.5e}" == f"{want[k]:.5e}" for k in got)
    ok &= all(abs(got[k] - listed[k]) <= 0.5e-4 * listed[k] for k in got)
    criterion(8, ok, ", ".join(f"{k} {got[k]:.5e}" for k in got) +
              " (wall expression evaluates to 1.2434e-8)")


def _csv_bodies(tmp_path, tag, jobs):
    small = dict(seed=11, jobs=jobs)
    runs = {
        "cdf": run_cdf(ExperimentConfig(trials=5, **small)),
        "usage": run_usage(ExperimentConfig(trials=5, **small)),
        "heatmap": run_heatmap(ExperimentConfig(grid_step=0.5, **small)),
        "sumrate": run_sum_rate(ExperimentConfig(trials=3, **small)),
    }
    return {k: write_results(v, tmp_path / f"{k}-{tag}.csv").read_bytes() for k, v in runs.items()}


def test_c09_determinism(criterion, tmp_path):
    first = _csv_bodies(tmp_path, "a", 1)
    second = _csv_bodies(tmp_path, "b", 1)
    pooled = _csv_bodies(tmp_path, "c", 2)
    same = [k for k in first if first[k] == second[k] == pooled[k]]
    criterion(9, len(same) == 4,
              f"byte-identical CSVs for {', '.join(same)} (repeat and 2-worker pool)")


def test_c10_constraint_verification(criterion):
    rng = np.random.default_rng(77)
    checked = failed = 0
    problems = [random_problem(rng, L=2, K=int(rng.integers(0, 5)), N=3, U=int(rng.integers(1, 4)))
                for _ in range(150)]
    problems.append(AllocationProblem(np.zeros((3, 0)), np.zeros((2, 2, 3, 0))))
    for p in problems:
        for fn in (brute_force, branch_and_bound, greedy):
            checked += 1
            failed += not verify_solution(p, fn(p))
    # Full-scale scenes: 600 mirrors, tier-1 ADR, with and without blockage.
    scene = SceneConfig()
    budget = LinkBudget()
    for seed, n_users in ((1, 1), (2, 2), (3, 4)):
        users = sample_users(n_users, scene.room, seed, scene.receiver)
        for blockage in (False, True):
            p = build_problem(compute_gain_tables(scene.build(users, blockage)), budget)
            solvers = (greedy, branch_and_bound) if n_users == 1 else (greedy,)
            for fn in solvers:
                checked += 1
                failed += not verify_solution(p, fn(p))
    criterion(10, failed == 0, f"{checked - failed}/{checked} solver outputs certified C1-C7")
