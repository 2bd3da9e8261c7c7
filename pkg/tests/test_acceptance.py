"""Acceptance criteria 1-9, one test each.

Every test records a PASS/FAIL line that is echoed in the pytest terminal
summary (see conftest.py).
"""

import time

import numpy as np
import pytest

from mpgtrack import so3
from mpgtrack.kinematics import Pose, keypoints, mean_joint_deviation, transform_pose
from mpgtrack.metrics import (
    SpatialHash,
    acceleration,
    chamfer_one_way,
    mpjpe_family,
    nearest_distances_bruteforce,
    similarity_align,
)
from mpgtrack.mpg import MpgConfig, compute_mpg, geometric_translation_refine
from mpgtrack.reproj import finite_difference_gradient, gradient_mismatch, reprojection_gradient, reprojection_loss
from mpgtrack.scene import Box, Cylinder, HalfSpace, SceneGeometry, grid_offsets, occupancy_grid
from mpgtrack.synthdata import drop_frames, procedural_walk, synthesize_keypoints
from mpgtrack.tracker import TrackerConfig, init, step, track

from conftest import record
from helpers import exact_frame, front_camera, random_camera, random_instance, random_pose, skeleton
from oracles import box_sdf, cylinder_sdf, dense_descent_oracle, occupancy_rule

pytestmark = pytest.mark.slow

N_GRADIENT = 1000
N_REFINE = 1000
N_RECOVERY = 100
N_MPG = 200


def verdict(number, ok, detail):
    record(number, ok, detail)
    assert ok, f"criterion {number}: {detail}"


def test_criterion_1_gradient_matches_finite_differences():
    rng = np.random.default_rng(101)
    tree = skeleton()
    worst = 0.0
    start = time.perf_counter()
    for _ in range(N_GRADIENT):
        # detector-scale noise; residuals >= 3 px keep the h = 1e-5 truncation error of the
        # finite-difference oracle itself well below the tolerance
        pose, camera, frame = random_instance(rng, noise=15.0, hidden=rng.integers(0, 7), min_offset=3.0)
        g = reprojection_gradient(pose, tree, camera, frame)
        fd = finite_difference_gradient(pose, tree, camera, frame, h=1e-5)
        worst = max(worst, gradient_mismatch(g, fd, abs_floor=1e-7))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-4 and elapsed < 60.0,
            f"{N_GRADIENT} instances, max rel. error {worst:.2e} (<= 1e-4), {elapsed:.1f} s (< 60 s)")


def test_criterion_2_refinement_never_increases_loss():
    rng = np.random.default_rng(102)
    tree = skeleton()
    violations = 0
    applied = 0
    for _ in range(N_REFINE):
        pose, camera, frame = random_instance(rng, noise=rng.uniform(1, 40), hidden=rng.integers(0, 9))
        delta = geometric_translation_refine(pose, tree, camera, frame)
        applied += bool(np.any(delta))
        moved = Pose(pose.root_orientation, pose.root_translation + delta, pose.joint_angles)
        violations += reprojection_loss(moved, tree, camera, frame) > reprojection_loss(pose, tree, camera, frame)
    verdict(2, violations == 0,
            f"{N_REFINE} noisy instances, {violations} violations, {applied} non-zero corrections")


def test_criterion_3_exact_translation_recovery():
    rng = np.random.default_rng(103)
    tree = skeleton()
    ok = 0
    worst = 0.0
    for _ in range(N_RECOVERY):
        pose = random_pose(rng)
        camera = random_camera(rng)
        t = rng.uniform(-0.5, 0.5, 3)
        target = Pose(pose.root_orientation, pose.root_translation + t, pose.joint_angles)
        frame = exact_frame(tree, camera, target)
        conf = np.ones(12)
        conf[rng.choice(12, rng.integers(0, 7), replace=False)] = 0.0
        frame = frame.with_confidence(conf)
        err = np.abs(geometric_translation_refine(pose, tree, camera, frame) - t).max()
        worst = max(worst, err)
        ok += err <= 1e-6
    verdict(3, ok == N_RECOVERY, f"{ok}/{N_RECOVERY} trials within 1e-6 m (worst {worst:.1e} m)")


def test_criterion_4_mpg_fixed_point_and_descent():
    rng = np.random.default_rng(104)
    tree = skeleton()
    fixed_ok = True
    for _ in range(N_MPG):
        pose = random_pose(rng)
        camera = random_camera(rng)
        feat = compute_mpg(pose, tree, camera, [exact_frame(tree, camera, pose)])
        blocks = np.concatenate([feat.d_root_orientation, feat.d_root_translation, feat.d_joint_angles.ravel()])
        fixed_ok &= bool(np.all(np.abs(blocks) <= 1e-9)) and np.allclose(feat.refined_pose.vector, pose.vector,
                                                                          rtol=0, atol=1e-9)
    increases = 0
    for _ in range(N_MPG):
        pose, camera, frame = random_instance(rng, noise=rng.uniform(1, 20), hidden=rng.integers(0, 6))
        losses = compute_mpg(pose, tree, camera, [frame], MpgConfig(loss_guard=True)).losses
        increases += any(b > a for a, b in zip(losses, losses[1:]))
    verdict(4, fixed_ok and increases == 0,
            f"fixed point {'exact' if fixed_ok else 'violated'} on {N_MPG} consistent instances; "
            f"{increases}/{N_MPG} noisy instances with a loss increase in k")


def test_criterion_5_world_frame_equivariance():
    rng = np.random.default_rng(105)
    tree = skeleton()
    camera = front_camera()
    seq = procedural_walk(60, heading=np.pi / 2, speed=0.5, start=(-0.5, 0.0, 0.0))
    frames = synthesize_keypoints(seq, tree, camera)
    # a perturbed trajectory so that losses and gradients are non-trivial
    traj = [Pose(p.root_orientation + rng.normal(0, 0.05, 3), p.root_translation + rng.normal(0, 0.05, 3),
                 p.joint_angles + rng.normal(0, 0.05, (23, 3))) for p in seq.poses]
    worst_loss = worst_grad = worst_joint = 0.0
    for _ in range(5):
        r = so3.exp_map(rng.normal(size=3))
        t = rng.normal(size=3)
        cam2 = camera.transformed(r, t)
        for pose, frame in zip(traj, frames):
            moved = transform_pose(pose, r, t, tree)
            worst_loss = max(worst_loss, abs(reprojection_loss(moved, tree, cam2, frame)
                                             - reprojection_loss(pose, tree, camera, frame)))
            g = reprojection_gradient(pose, tree, camera, frame)
            g2 = reprojection_gradient(moved, tree, cam2, frame)
            scale = max(1.0, np.abs(g.d_root_translation).max())
            worst_grad = max(worst_grad, np.abs(g2.d_root_translation - r @ g.d_root_translation).max() / scale)
            worst_joint = max(worst_joint, np.abs(g2.d_joint_angles - g.d_joint_angles).max() / scale)
    verdict(5, worst_loss <= 1e-9 and worst_grad <= 1e-9,
            f"loss sequence diff {worst_loss:.1e} (<= 1e-9), translation gradient vs R g {worst_grad:.1e}, "
            f"joint-angle block diff {worst_joint:.1e}")


def _composed_scene(rng):
    return SceneGeometry([
        Box(rng.uniform(0.1, 0.5, 3), so3.exp_map(rng.normal(0, 0.5, 3)), rng.uniform(-0.6, 0.6, 3)),
        Cylinder(rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.5), so3.exp_map(rng.normal(0, 0.5, 3)),
                 rng.uniform(-0.6, 0.6, 3)),
        HalfSpace([0, 0, 1], rng.uniform(-0.9, -0.6)),
    ])


def test_criterion_6_occupancy_grid():
    rng = np.random.default_rng(106)
    sigma = 0.05
    worst = 0.0
    for _ in range(3):
        scene = _composed_scene(rng)
        box, cyl, ground = scene.primitives
        root = rng.uniform(-0.3, 0.3, 3)
        heading = rng.uniform(-np.pi, np.pi)
        grid = occupancy_grid(scene, root, heading, sigma)
        spacing = 1.8 / 16
        axis = -0.9 + spacing / 2 + spacing * np.arange(16)
        rot = so3.rot_z(heading)
        for i in range(16):
            for j in range(16):
                for k in range(16):
                    p = rot @ np.array([axis[i], axis[j], axis[k]]) + root
                    f = min(box_sdf(p, box.half_extents, box.rotation, box.translation),
                            cylinder_sdf(p, cyl.radius, cyl.half_height, cyl.rotation, cyl.translation),
                            p @ ground.normal - ground.offset)
                    worst = max(worst, abs(grid.values[i, j, k] - occupancy_rule(f, sigma)))
    # boundary cases: a ground plane placed exactly at F = 0 and F = sigma for the lowest layer
    low = grid_offsets()[0]
    at_zero = occupancy_grid(SceneGeometry([HalfSpace([0, 0, 1], low)]), np.zeros(3), 0.0, sigma)
    at_sigma = occupancy_grid(SceneGeometry([HalfSpace([0, 0, 1], low - sigma)]), np.zeros(3), 0.0, sigma)
    boundary = bool(np.all(at_zero.values[:, :, 0] == 1.0) and np.all(at_sigma.values[:, :, 0] == 0.0))
    verdict(6, worst <= 1e-12 and boundary,
            f"3 scenes x 4096 points, max |grid - direct| {worst:.1e} (<= 1e-12); "
            f"F=0 -> 1 and F=sigma -> 0 {'hold' if boundary else 'fail'}")


def _walk_setup(speed):
    tree = skeleton()
    camera = front_camera()
    seq = procedural_walk(300, heading=np.pi / 2, speed=speed, start=(-1.5 * speed, 0.0, 0.93))
    return tree, camera, seq, synthesize_keypoints(seq, tree, camera)


def _a_mpjpe(tree, poses, truth):
    pred = np.stack([keypoints(tree, p) for p in poses])
    gt = np.stack([keypoints(tree, p) for p in truth])
    return mpjpe_family(pred, gt)["a_mpjpe"]


def test_criterion_7_end_to_end_tracking():
    tree, camera, seq, frames = _walk_setup(speed=1.0)
    config = TrackerConfig(mpg=MpgConfig(steps=5))
    start = time.perf_counter()
    result = track(seq[0], frames, camera, None, config, references=seq.poses, tree=tree)
    fps = len(frames) / (time.perf_counter() - start)
    ours = _a_mpjpe(tree, result.poses, seq.poses)
    # the same run without divergence bookkeeping, so no frame is left untracked
    free = _a_mpjpe(tree, track(seq[0], frames, camera, None, config, tree=tree).poses, seq.poses)
    oracle = _a_mpjpe(tree, dense_descent_oracle(seq.poses, frames, tree, camera), seq.poses)
    ok = result.summary["success"] and ours <= oracle + 20.0 and fps > 10.0
    verdict(7, ok,
            f"300 frames, success={result.summary['success']}, A-MPJPE {ours:.1f} mm vs oracle {oracle:.1f} mm "
            f"+ 20 mm (without divergence stop {free:.1f} mm), max deviation {result.summary['max_deviation']:.3f} m, "
            f"{fps:.0f} frames/s (> 10)")


def test_criterion_8_occlusion_recovery():
    tree, camera, seq, frames = _walk_setup(speed=0.5)
    gap = (135, 165)
    frames = drop_frames(frames, *gap)
    state = init(seq[0], camera, None, TrackerConfig(), tree=tree)
    held = []
    for t, frame in enumerate(frames):
        # no reference inside the gap: deviation is only judged once observations return
        ref = None if gap[0] <= t < gap[1] else seq[t]
        state, report = step(state, frame, ref)
        if gap[0] - 1 <= t < gap[1]:
            held.append(report.pose.vector)
    terminal = mean_joint_deviation(tree, state.current_pose, seq[-1])
    gap_held = all(np.array_equal(held[0], h) for h in held)
    ok = state.status == "tracking" and terminal < 0.3 and gap_held
    verdict(8, ok,
            f"30-frame dropout, status={state.status}, pose held in gap={gap_held}, "
            f"deviation after gap {state.deviation_history[gap[0]]:.3f} m, terminal {terminal:.3f} m (< 0.3)")


def test_criterion_9_metric_oracles():
    rng = np.random.default_rng(109)
    chamfer_mismatch = 0
    for _ in range(1000):
        points = rng.normal(size=(rng.integers(1, 120), 3)) * rng.uniform(0.05, 2) + rng.normal(size=3)
        samples = rng.normal(size=(rng.integers(1, 200), 3)) * rng.uniform(0.05, 2)
        fast = chamfer_one_way(points, samples, accelerated=True)
        brute = float(nearest_distances_bruteforce(points, samples).mean() * 1000.0)
        chamfer_mismatch += fast != brute
        chamfer_mismatch += not np.array_equal(SpatialHash(samples).nearest_distances(points),
                                               nearest_distances_bruteforce(points, samples))
    pa_violations = 0
    for _ in range(100):
        gt = rng.normal(size=(20, 12, 3))
        pred = gt @ so3.exp_map(rng.normal(0, 0.3, 3)).T * rng.uniform(0.8, 1.2) + rng.normal(0, 0.05, gt.shape)
        for p, g in zip(pred, gt):
            pa = ((similarity_align(p, g) - g) ** 2).sum()
            centered = ((p - p.mean(0) + g.mean(0) - g) ** 2).sum()
            pa_violations += pa > centered + 1e-12
    t = np.arange(50)[:, None, None]
    velocity = rng.normal(size=(1, 24, 3))
    accel = acceleration(rng.normal(size=(1, 24, 3)) + t * velocity * 0.01)
    ok = chamfer_mismatch == 0 and pa_violations == 0 and abs(accel) <= 1e-9
    verdict(9, ok,
            f"chamfer hash vs brute force: {chamfer_mismatch} mismatches / 1000; "
            f"PA residual violations {pa_violations} / 2000 frames; constant-velocity accel {accel:.1e}")
