"""Multi-step projection gradient (MPG).

Starting from the current pose, MPG takes ``steps`` modified gradient-descent
steps on the reprojection loss against the newest keypoint frame. Each step

1. computes the analytic loss gradient at the current iterate,
2. solves a rigid-body translation correction by linear least squares and adds
   it to the translation block of the step,
3. backtracks the gradient part of the step until the loss does not increase.

The feature is the total displacement ``q_K - q_0`` split into pose blocks,
plus a root-orientation delta towards an external orientation estimate that is
computed once per call and never applied to the iterates.
"""

from dataclasses import dataclass
import logging

import numpy as np

from . import so3
from .camera import rotation_to_world
from .errors import (
    BehindCameraError,
    ConfigError,
    DegenerateGeometryError,
    InsufficientObservationsError,
    InvalidInputError,
)
from .kinematics import KEYPOINT_MATRIX, POSE_DIM, Pose, _as_vector, fk_state
from .reproj import loss_and_grad_vec, loss_vec

log = logging.getLogger(__name__)

MIN_REFINE_KEYPOINTS = 3
RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class MpgConfig:
    steps: int = 5
    step_size: float = 1e-3
    loss_guard: bool = True
    window: int = 81
    max_halvings: int = 8

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigError(f"mpg.steps must be an integer >= 1, got {self.steps}")
        if not self.step_size > 0:
            raise ConfigError(f"mpg.step_size must be positive, got {self.step_size}")
        if int(self.window) != self.window or self.window < 1:
            raise ConfigError(f"mpg.window must be an integer >= 1, got {self.window}")
        if self.max_halvings < 0:
            raise ConfigError("mpg.max_halvings must be non-negative")

    @classmethod
    def from_dict(cls, data):
        known = {"steps", "step_size", "loss_guard", "window", "max_halvings"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown mpg option(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return {
            "steps": self.steps, "step_size": self.step_size, "loss_guard": self.loss_guard,
            "window": self.window, "max_halvings": self.max_halvings,
        }


@dataclass(frozen=True, eq=False)
class MpgFeature:
    orientation_delta: np.ndarray
    d_root_orientation: np.ndarray
    d_root_translation: np.ndarray
    d_joint_angles: np.ndarray
    refined_pose: Pose
    losses: tuple = ()
    flags: tuple = ()
    estimate_available: bool = False

    @property
    def vector(self):
        """Flat 78-dim feature: orientation delta, then the three displacement blocks."""
        return np.concatenate([
            self.orientation_delta, self.d_root_orientation, self.d_root_translation,
            self.d_joint_angles.ravel(),
        ])

    @property
    def displacement(self):
        return np.concatenate([self.d_root_orientation, self.d_root_translation, self.d_joint_angles.ravel()])


class OrientationEstimator:
    """Produces a camera-frame root orientation from a window of keypoint frames.

    ``estimate`` returns a 3x3 rotation or ``None`` to abstain. Implementations
    must not keep per-call state so one instance can serve several trackers.
    """

    name = "base"

    def estimate(self, frames):
        raise NotImplementedError


class NoOrientationEstimator(OrientationEstimator):
    name = "none"

    def estimate(self, frames):
        return None


class OracleNoiseEstimator(OrientationEstimator):
    """Ground-truth world orientations, perturbed, returned in the camera frame.

    Looks the truth up by the newest frame's ``index``; abstains for unknown
    indices. Noise is a random-axis rotation with normally distributed angle
    (``noise_std`` radians), seeded by ``(seed, index)`` so repeated calls agree.
    """

    name = "oracle-noise"

    def __init__(self, world_orientations, camera, noise_std=0.0, seed=0):
        self.world_orientations = {int(k): np.asarray(v, dtype=float) for k, v in dict(world_orientations).items()}
        self.camera = camera
        self.noise_std = float(noise_std)
        self.seed = int(seed)

    @classmethod
    def from_poses(cls, poses, camera, noise_std=0.0, seed=0, first_index=0):
        table = {first_index + i: so3.exp_map(p.root_orientation) for i, p in enumerate(poses)}
        return cls(table, camera, noise_std, seed)

    def estimate(self, frames):
        if not frames:
            return None
        index = frames[-1].index
        truth = self.world_orientations.get(index)
        if truth is None:
            return None
        if truth.shape == (3,):
            truth = so3.exp_map(truth)
        if self.noise_std > 0:
            rng = np.random.default_rng([self.seed, index])
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            truth = so3.exp_map(axis * rng.normal(0.0, self.noise_std)) @ truth
        return self.camera.rotation @ truth


def make_estimator(name, **kwargs):
    if name in (None, "none"):
        return NoOrientationEstimator()
    if name == "oracle-noise":
        return OracleNoiseEstimator(**kwargs)
    raise ConfigError(f"unknown orientation estimator {name!r}")


def _translation_system(q, tree, camera, frame):
    vis = frame.visible
    if vis.sum() < MIN_REFINE_KEYPOINTS:
        raise InsufficientObservationsError(
            f"translation refinement needs {MIN_REFINE_KEYPOINTS} visible keypoints, got {int(vis.sum())}"
        )
    kp3 = KEYPOINT_MATRIX @ fk_state(tree, q)[0]
    pc = camera.to_camera(kp3)
    behind = np.flatnonzero(pc[:, 2] <= 1e-6)
    if behind.size:
        raise BehindCameraError(behind)
    pc = pc[vis]
    uv = frame.uv[vis]
    n = len(pc)
    a_cam = np.zeros((2 * n, 3))
    b = np.empty(2 * n)
    # fx*(x + dx) + (cx - u)*(z + dz) = 0 and the same for y/v
    a_cam[0::2, 0] = camera.fx
    a_cam[0::2, 2] = camera.cx - uv[:, 0]
    a_cam[1::2, 1] = camera.fy
    a_cam[1::2, 2] = camera.cy - uv[:, 1]
    b[0::2] = -(camera.fx * pc[:, 0] + (camera.cx - uv[:, 0]) * pc[:, 2])
    b[1::2] = -(camera.fy * pc[:, 1] + (camera.cy - uv[:, 1]) * pc[:, 2])
    # delta_cam = R @ delta_world
    return a_cam @ camera.rotation, b


def _solve_svd(a, b):
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    if sigma[-1] <= RANK_TOLERANCE * sigma[0]:
        raise DegenerateGeometryError(
            f"translation system is rank deficient (sigma ratio {sigma[-1] / sigma[0]:.3g})"
        )
    return vt.T @ ((u.T @ b) / sigma)


def _refine_vec(q, tree, camera, frame, loss_guard=True, base_loss=None):
    a, b = _translation_system(q, tree, camera, frame)
    delta = _solve_svd(a, b)
    if loss_guard:
        if base_loss is None:
            base_loss = loss_vec(q, tree, camera, frame)
        moved = q.copy()
        moved[3:6] += delta
        try:
            worse = loss_vec(moved, tree, camera, frame) > base_loss
        except BehindCameraError:
            worse = True
        if worse:
            return np.zeros(3)
    return delta


def geometric_translation_refine(pose, tree, camera, frame, loss_guard=True):
    """World-frame root translation change that best re-aligns the rigid skeleton.

    Solves the depth-linearized reprojection system in the least-squares sense
    via SVD. With ``loss_guard`` a correction that would raise the
    reprojection loss is replaced by zero.
    """
    return _refine_vec(_as_vector(pose), tree, camera, frame, loss_guard)


def root_orientation_delta(current_root, estimate, camera):
    """Axis-angle rotation from the current root orientation to the estimate.

    ``estimate`` is a camera-frame rotation (or ``None`` when the estimator
    abstained, which yields the zero vector).
    """
    if estimate is None:
        return np.zeros(3)
    world = rotation_to_world(camera, estimate)
    current = so3.exp_map(np.asarray(current_root, dtype=float))
    return so3.log_map(current.T @ world)


def _safe_loss(q, tree, camera, frame):
    try:
        return loss_vec(q, tree, camera, frame)
    except BehindCameraError:
        return np.inf


def compute_mpg(pose, tree, camera, frames, config=None, estimator=None):
    """Run the multi-step projection gradient against ``frames[-1]``.

    ``frames`` is the keypoint window ending with the target frame; only the
    last ``config.window`` frames are handed to the orientation estimator.
    """
    config = config or MpgConfig()
    estimator = estimator or NoOrientationEstimator()
    frames = list(frames)
    if not frames:
        raise InvalidInputError("compute_mpg needs at least the target frame")
    window = frames[-config.window:]
    target = window[-1]
    pose = pose if isinstance(pose, Pose) else Pose.from_vector(pose)
    q0 = pose.vector
    flags = []

    estimate = estimator.estimate(window)
    orientation_delta = root_orientation_delta(pose.root_orientation, estimate, camera)

    q = q0.copy()
    losses = [loss_vec(q, tree, camera, target)]
    if target.num_visible == 0:
        flags.append("no_observations")
    for _ in range(config.steps if target.num_visible else 0):
        _, grad = loss_and_grad_vec(q, tree, camera, target)
        try:
            # guard against the recorded loss so the sequence stays monotone to the last bit
            delta = _refine_vec(q, tree, camera, target, config.loss_guard, base_loss=losses[-1])
        except InsufficientObservationsError:
            delta = np.zeros(3)
            _add_flag(flags, "refine_insufficient")
        except DegenerateGeometryError:
            delta = np.zeros(3)
            _add_flag(flags, "refine_degenerate")
        base = q.copy()
        base[3:6] += delta
        if config.loss_guard:
            base_loss = _safe_loss(base, tree, camera, target)
            q = base
            if np.any(grad):
                alpha = config.step_size
                for _ in range(config.max_halvings + 1):
                    cand = base - alpha * grad
                    cand_loss = _safe_loss(cand, tree, camera, target)
                    if cand_loss < base_loss:
                        q = cand
                        break
                    alpha *= 0.5
        else:
            q = base - config.step_size * grad
        losses.append(loss_vec(q, tree, camera, target))

    disp = q - q0
    refined = Pose.from_vector(q)
    return MpgFeature(
        orientation_delta=orientation_delta,
        d_root_orientation=disp[0:3],
        d_root_translation=disp[3:6],
        d_joint_angles=disp[6:].reshape(23, 3),
        refined_pose=refined,
        losses=tuple(losses),
        flags=tuple(flags),
        estimate_available=estimate is not None,
    )


def _add_flag(flags, flag):
    if flag not in flags:
        flags.append(flag)
        log.debug("mpg: %s", flag)


__all__ = [
    "MpgConfig",
    "MpgFeature",
    "NoOrientationEstimator",
    "OracleNoiseEstimator",
    "OrientationEstimator",
    "POSE_DIM",
    "compute_mpg",
    "geometric_translation_refine",
    "make_estimator",
    "root_orientation_delta",
]
