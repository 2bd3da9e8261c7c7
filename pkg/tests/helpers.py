"""Shared generators for random but well-posed test instances."""

from pathlib import Path

import numpy as np

from mpgtrack import so3
from mpgtrack.camera import CameraModel, project
from mpgtrack.frames import KeypointFrame
from mpgtrack.kinematics import Pose, keypoints, load_skeleton

DATA = Path(__file__).parent / "data"


def skeleton():
    return load_skeleton(DATA / "skeleton.json")


def front_camera(distance=5.0):
    return CameraModel.look_at([0.0, -distance, 1.0], [0.0, 0.0, 0.9], 1000, 1000, 500, 500,
                               width=1000, height=1000)


def random_pose(rng, joint_scale=0.3, spread=0.5):
    root = so3.log_map(so3.rot_z(rng.uniform(-np.pi, np.pi)) @ so3.exp_map(rng.normal(0, 0.15, 3)))
    trans = np.concatenate([rng.uniform(-spread, spread, 2), [rng.uniform(-0.1, 0.1)]])
    return Pose(root, trans, rng.normal(0, joint_scale, (23, 3)))


def random_camera(rng):
    ang = rng.uniform(-np.pi, np.pi)
    dist = rng.uniform(3.0, 6.0)
    eye = [dist * np.cos(ang), dist * np.sin(ang), rng.uniform(0.3, 2.0)]
    f = rng.uniform(600, 1500)
    return CameraModel.look_at(eye, [0, 0, rng.uniform(-0.2, 0.3)], f, f * rng.uniform(0.95, 1.05),
                               rng.uniform(400, 600), rng.uniform(400, 600))


def exact_frame(tree, camera, pose, index=0):
    return KeypointFrame(project(camera, keypoints(tree, pose)), np.ones(12), index)


def noisy_frame(rng, tree, camera, pose, noise=5.0, min_offset=0.5, hidden=0):
    """Exact projection plus noise; every residual is at least ``min_offset`` px."""
    uv = project(camera, keypoints(tree, pose))
    off = rng.normal(0, noise, uv.shape)
    norm = np.linalg.norm(off, axis=1, keepdims=True)
    off = np.where(norm < min_offset, off / np.maximum(norm, 1e-12) * min_offset, off)
    conf = rng.uniform(0.2, 1.0, 12)
    if hidden:
        conf[rng.choice(12, hidden, replace=False)] = rng.uniform(0, 0.099, hidden)
    return KeypointFrame(uv + off, conf)


def random_instance(rng, noise=5.0, hidden=0, min_offset=0.5):
    tree = skeleton()
    pose = random_pose(rng)
    camera = random_camera(rng)
    return pose, camera, noisy_frame(rng, tree, camera, pose, noise, min_offset, hidden)
