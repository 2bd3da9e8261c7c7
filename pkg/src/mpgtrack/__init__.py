"""Absolute 3D human pose tracking from streaming 2D keypoints using the
multi-step projection gradient (MPG)."""

__version__ = "0.1.0"

from .camera import CameraModel, load_camera, project
from .errors import MpgTrackError
from .frames import KeypointFrame, load_keypoints, save_keypoints
from .kinematics import KinematicTree, Pose, build_tree, forward_kinematics, keypoints, load_skeleton
from .mpg import MpgConfig, MpgFeature, compute_mpg, geometric_translation_refine
from .reproj import reprojection_gradient, reprojection_loss
from .scene import SceneGeometry, load_scene, occupancy_grid, sdf
from .tracker import TrackerConfig, TrackerState, init, step, track

__all__ = [
    "CameraModel",
    "KeypointFrame",
    "KinematicTree",
    "MpgConfig",
    "MpgFeature",
    "MpgTrackError",
    "Pose",
    "SceneGeometry",
    "TrackerConfig",
    "TrackerState",
    "build_tree",
    "compute_mpg",
    "forward_kinematics",
    "geometric_translation_refine",
    "init",
    "keypoints",
    "load_camera",
    "load_keypoints",
    "load_scene",
    "load_skeleton",
    "occupancy_grid",
    "project",
    "reprojection_gradient",
    "reprojection_loss",
    "save_keypoints",
    "sdf",
    "step",
    "track",
]
