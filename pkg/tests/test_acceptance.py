"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria run at desk scale: 32-node fields for the gradient/performance
gates, 64-node fields where rotational flatness is judged (the energy
varies with grid-box anisotropy at coarser resolution).  Trace criteria run
in the paper's 3-translational-DOF mode (orientation held by the handle).
"""

import time

import numpy as np
import pytest

from asmfield.affinity import affinity_at, default_params
from asmfield.distance import unsigned_distance_batch, winding_pmc_batch
from asmfield.energy import (PosePair, analytic_gradient, fdm_gradient,
                             score, score_rel, sweep_rotation,
                             sweep_translation, wrench_rel)
from asmfield.geometry import AxisAngle, RigidTransform, compose, exp_rotation
from asmfield.scenes import PegHoleSpec, generate_pair
from asmfield.session import (CouplingParams, PacedLoop, Session,
                              SessionConfig, entrance_jitter_trajectory,
                              run_trace, wall_push_trajectory)
from oracles import raycast_inside


def report(num: int, name: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {num} ({name}): {status} [{detail}]")


def random_guidance_pose(rng) -> PosePair:
    """Pose inside the guidance region: offsets within half a radius and
    rotations within ~14 degrees of the seated pose."""
    dt = rng.uniform(-0.5, 0.5, 3)
    dr = rng.uniform(-0.25, 0.25, 3)
    ang = np.linalg.norm(dr)
    rot = (exp_rotation(AxisAngle(axis=dr / ang, angle=ang))
           if ang > 0 else RigidTransform.identity())
    return PosePair.from_relative(
        compose(RigidTransform.from_translation(dt), rot))


def test_criterion_1_gradient_gate(example1_grids32):
    grid_a, grid_b = example1_grids32
    rng = np.random.default_rng(42)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        pose = random_guidance_pose(rng)
        at, ar = analytic_gradient(grid_a, grid_b, pose)
        # steps small enough for the central difference to be in its
        # converged regime on the C1-sampled score (error halves with h)
        ft, fr = fdm_gradient(grid_a, grid_b, pose, h_t=2.5e-4, h_r=2.5e-4)
        a = np.concatenate([at, ar])
        g = np.concatenate([ft, fr])
        norm = np.linalg.norm(np.abs(g))
        mask = np.abs(g) > 1e-6 * norm
        if np.any(mask):
            worst = max(worst, float(np.max(np.abs(a - g)[mask]
                                            / np.abs(g)[mask])))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-3 and elapsed < 300.0
    report(1, "gradient gate", ok,
           f"worst component error {worst:.2e} (< 1e-3), {elapsed:.1f} s (< 300 s)")
    assert worst < 1e-3
    assert elapsed < 300.0


def test_criterion_2_pmc_oracle():
    rng = np.random.default_rng(7)
    total_checked = 0
    mismatches = 0
    for section in ("circular", "rectangular", "combined"):
        for mesh in generate_pair(PegHoleSpec(cross_section=section)):
            lo, hi = mesh.bbox
            span = hi - lo
            pts = rng.uniform(lo - 0.2 * span, hi + 0.2 * span,
                              size=(10_000, 3))
            dist, _, _ = unsigned_distance_batch(pts, mesh)
            band = 1e-9 * mesh.bbox_diagonal
            keep = dist > band
            pmc = winding_pmc_batch(pts[keep], mesh, distances=dist[keep])
            inside = raycast_inside(pts[keep], mesh)
            mismatches += int(np.count_nonzero((pmc == -1) != inside))
            total_checked += int(np.count_nonzero(keep))
    ok = mismatches == 0
    report(2, "PMC vs ray-cast oracle", ok,
           f"{mismatches} disagreements out of {total_checked} points")
    assert mismatches == 0


def test_criterion_3_rigid_invariance(example1_grids32):
    grid_a, grid_b = example1_grids32
    rng = np.random.default_rng(11)
    rel = RigidTransform.from_translation([0.12, 0.07, 0.35])
    f0 = score(grid_a, grid_b, PosePair.from_relative(rel)).score
    worst = 0.0
    for _ in range(10):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        w = exp_rotation(AxisAngle(axis=axis, angle=rng.uniform(0, np.pi)))
        world = RigidTransform(w.rotation, rng.uniform(-10, 10, 3))
        fw = score(grid_a, grid_b, PosePair(world, compose(world, rel))).score
        worst = max(worst, abs(fw - f0) / abs(f0))
    ok = worst < 1e-6
    report(3, "rigid invariance", ok, f"worst relative change {worst:.2e}")
    assert worst < 1e-6


def test_criterion_4_well_location(example1_grids32):
    grid_a, grid_b = example1_grids32
    base = PosePair.from_relative(RigidTransform.identity())
    spec = PegHoleSpec()
    table = sweep_translation(grid_a, grid_b, base, ["x1", "x3"],
                              [spec.peg_radius, spec.peg_length], 21)
    best = table.rows[np.argmax(table.rows[:, 2])]
    ok = best[0] == 0.0 and best[1] == 0.0
    report(4, "well at the seated pose", ok,
           f"max Re score at offsets ({best[0]:.3g}, {best[1]:.3g})")
    assert ok


def test_criterion_5_symmetry_suite(example1_grids64, example2_grids32):
    ga64, gb64 = example1_grids64
    base = PosePair.from_relative(RigidTransform.identity())
    well1 = abs(score_rel(ga64, gb64, RigidTransform.identity()).score.real)
    rot1 = sweep_rotation(ga64, gb64, base, "x3", np.pi, 13)
    flat1 = (rot1.rows[:, 3].max() - rot1.rows[:, 3].min()) / well1

    ga2, gb2 = example2_grids32
    well2 = abs(score_rel(ga2, gb2, RigidTransform.identity()).score.real)
    angles = np.linspace(0, np.pi / 2, 7)
    periodic_err = 0.0
    for theta in angles:
        e1 = -score_rel(ga2, gb2, exp_rotation(
            AxisAngle(axis=[0, 0, 1], angle=float(theta)))).score.real
        e2 = -score_rel(ga2, gb2, exp_rotation(
            AxisAngle(axis=[0, 0, 1], angle=float(theta + np.pi / 2)))).score.real
        periodic_err = max(periodic_err, abs(e1 - e2) / well2)

    t1 = sweep_translation(ga64, gb64, base, ["x1"], [1.0], 11)
    t2 = sweep_translation(ga64, gb64, base, ["x2"], [1.0], 11)
    xy_err = float(np.max(np.abs(t1.rows[:, 3] - t2.rows[:, 3]))) / well1

    ok = flat1 < 0.01 and periodic_err < 0.01 and xy_err < 0.01
    report(5, "symmetry suite", ok,
           f"rotation flatness {flat1:.3%}, 90-degree periodicity error "
           f"{periodic_err:.3%}, x1/x2 profile difference {xy_err:.3%}")
    assert flat1 < 0.01
    assert periodic_err < 0.01
    assert xy_err < 0.01


def test_criterion_6_sign_taxonomy(example1_grids32):
    grid_a, grid_b = example1_grids32
    fit = score_rel(grid_a, grid_b, RigidTransform.identity())
    pen = score_rel(grid_a, grid_b, RigidTransform.from_translation([1.5, 0, 0]))
    far = score_rel(grid_a, grid_b, RigidTransform.from_translation([80, 0, 0]))
    e_fit = -fit.score.real
    e_pen = -pen.score.real
    ok = e_fit < 0 and e_pen > 0 and far.score == 0j and far.samples_used == 0
    report(6, "sign taxonomy", ok,
           f"fit E {e_fit:.2f} < 0, deep-penetration E {e_pen:.2f} > 0, "
           f"far E exactly {(-far.score.real):g} with {far.samples_used} samples")
    assert ok


def test_criterion_7_truncation_bound(example1_pair):
    rng = np.random.default_rng(19)
    worst = 0.0
    checked = 0
    for mesh in example1_pair:
        params = default_params(mesh)
        lo, hi = mesh.bbox
        span = hi - lo
        n = 0
        while n < 100:
            p = rng.uniform(lo - 0.3 * span, hi + 0.3 * span, size=3)
            try:
                truncated = affinity_at(p, mesh, params, min_abs_xi=0.05)
                full = affinity_at(p, mesh, params, truncated=False,
                                   min_abs_xi=0.05)
            except ValueError:
                continue
            n += 1
            checked += 1
            worst = max(worst, abs(truncated - full) / abs(full))
    ok = worst < 1e-3
    report(7, "truncation bound", ok,
           f"worst relative difference {worst:.2e} over {checked} points")
    assert worst < 1e-3


def _tick_penetrations(rows, mesh_moving, mesh_fixed) -> np.ndarray:
    mids = mesh_moving.face_midpoints[::4]
    n = rows.shape[0]
    pts = np.empty((n, len(mids), 3))
    for k in range(n):
        rvec = rows[k, 13:16]
        ang = np.linalg.norm(rvec)
        rot = (exp_rotation(AxisAngle(axis=rvec / ang, angle=float(ang))).rotation
               if ang > 1e-12 else np.eye(3))
        pts[k] = mids @ rot.T + rows[k, 10:13]
    flat = pts.reshape(-1, 3)
    dist, _, _ = unsigned_distance_batch(flat, mesh_fixed)
    pmc = winding_pmc_batch(flat, mesh_fixed, distances=dist)
    return np.where(pmc < 0, dist, 0.0).reshape(n, -1).max(axis=1)


def test_criterion_8_snap_trace(example1_grids32, example1_pair):
    grid_a, grid_b = example1_grids32
    peg, block = example1_pair
    spec = PegHoleSpec()
    extraction = spec.hole_depth + 0.3  # tip just above the mouth
    traj = entrance_jitter_trajectory(peg_radius=spec.peg_radius,
                                      extraction=extraction, seed=11,
                                      descend_s=3.0)
    coupling = CouplingParams(k_t=8.0, c_t=8.5)
    cfg = SessionConfig(tick_rate=250.0, gamma_sc=2.0, lock_rotation=True,
                        coupling=coupling)
    rows = run_trace(grid_a, grid_b, traj, cfg)
    terminal = float(np.linalg.norm(rows[-1, 10:13]))
    limit = 0.02 * peg.bbox_diagonal
    pen = _tick_penetrations(rows, peg, block)
    pen_limit = max(grid_a.spacing, grid_b.spacing)

    # control: without the field the holding spring parks off the fit pose
    cfg0 = SessionConfig(tick_rate=250.0, gamma_sc=0.0, lock_rotation=True,
                         coupling=coupling)
    control = float(np.linalg.norm(
        run_trace(grid_a, grid_b, traj, cfg0)[-1, 10:13]))

    ok = terminal < limit and pen.max() < pen_limit and control > limit
    report(8, "snap trace", ok,
           f"terminal offset {terminal:.4f} (< {limit:.4f}; no-field control "
           f"{control:.4f}), worst penetration {pen.max():.4f} "
           f"(< spacing {pen_limit:.4f})")
    assert terminal < limit
    assert pen.max() < pen_limit
    assert control > limit


def test_criterion_9_collision_trace(example1_grids64):
    grid_a, grid_b = example1_grids64
    tick_rate = 250.0
    traj = wall_push_trajectory([1, 0, 0], amplitude=1.0, n_pushes=4,
                                period_s=2.0)
    cfg = SessionConfig(tick_rate=tick_rate, gamma_sc=1.0, lock_rotation=True,
                        coupling=CouplingParams(k_t=50.0, c_t=14.14))
    rows = run_trace(grid_a, grid_b, traj, cfg)
    fmag = rows[:, 6]
    proxy_x = np.array([traj.pose_at(t).translation[0] for t in rows[:, 1]])
    pushing = (np.abs(proxy_x) > 0.5).astype(float)

    f0 = fmag - fmag.mean()
    i0 = pushing - pushing.mean()
    xcorr = np.correlate(f0, i0, mode="full")
    lag_ticks = int(np.argmax(xcorr)) - (len(f0) - 1)
    lag_s = lag_ticks / tick_rate

    settling = np.convolve(pushing, np.ones(int(0.4 * tick_rate)),
                           mode="same") > 0
    steady = fmag[(pushing == 0) & ~settling]
    steady_ratio = float(steady.mean() / fmag.max())

    ok = abs(lag_s) <= 0.1 and steady_ratio < 0.05
    report(9, "collision trace", ok,
           f"force/push cross-correlation peak at {lag_s:+.3f} s (|lag| <= 0.1), "
           f"between-push force {steady_ratio:.1%} of pulse peak (< 5%)")
    assert abs(lag_s) <= 0.1
    assert steady_ratio < 0.05


def test_criterion_10_performance(example1_grids32):
    grid_a, grid_b = example1_grids32
    rel = RigidTransform.from_translation([0.1, 0.05, 0.2])
    wrench_rel(grid_a, grid_b, rel, 1.0)  # warm caches and the jit kernel
    times = []
    for _ in range(50):
        t0 = time.perf_counter()
        wrench_rel(grid_a, grid_b, rel, 1.0)
        times.append(time.perf_counter() - t0)
    median_ms = float(np.median(times) * 1e3)

    session = Session(grid_a, grid_b,
                      SessionConfig(tick_rate=100.0, gamma_sc=1.0))
    loop = PacedLoop(session)
    loop.run(duration_s=60.0)
    total = loop.produced_frames + loop.skipped_frames
    skip_ratio = loop.skipped_frames / max(total, 1)
    rate = loop.produced_frames / 60.0

    ok = median_ms < 10.0 and rate >= 100.0 * 0.99 and skip_ratio < 0.01
    report(10, "performance", ok,
           f"wrench eval median {median_ms:.2f} ms (< 10), sustained "
           f"{rate:.1f} Hz with {skip_ratio:.2%} skipped over 60 s (< 1%)")
    assert median_ms < 10.0
    assert skip_ratio < 0.01
    assert rate >= 99.0
