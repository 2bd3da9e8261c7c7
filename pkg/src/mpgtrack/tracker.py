"""Causal per-frame tracker built on MPG refinements.

Each step runs MPG from the current pose against the newest keypoint frame
and adopts the refined pose. The root orientation is optionally blended
toward an external orientation estimate, and the root can be pushed out of
scene geometry. Frames with no visible keypoints, or that would put keypoints
behind the camera, hold the previous pose.
"""

from dataclasses import dataclass, field, replace
import json
from pathlib import Path

import numpy as np

from . import so3
from .errors import (
    BehindCameraError,
    ConfigError,
    DivergedStateError,
    InvalidInputError,
    ParseError,
    SchemaError,
)
from .kinematics import Pose, mean_joint_deviation
from .mpg import MpgConfig, NoOrientationEstimator, compute_mpg
from .reproj import loss_vec
from .scene import clamp_out_of_geometry, sdf

TRACKING = "tracking"
DIVERGED = "diverged"


@dataclass(frozen=True)
class TrackerConfig:
    mpg: MpgConfig = field(default_factory=MpgConfig)
    apply_orientation_delta: bool = True
    orientation_blend: float = 0.5
    divergence_threshold: float = 0.3
    scene_clamp: bool = False

    def __post_init__(self):
        if isinstance(self.mpg, dict):
            object.__setattr__(self, "mpg", MpgConfig.from_dict(self.mpg))
        if not 0.0 <= self.orientation_blend <= 1.0:
            raise ConfigError(f"orientation_blend must lie in [0, 1], got {self.orientation_blend}")
        if not self.divergence_threshold > 0:
            raise ConfigError(f"divergence_threshold must be positive, got {self.divergence_threshold}")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {"mpg", "apply_orientation_delta", "orientation_blend", "divergence_threshold", "scene_clamp"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown tracker option(s): {sorted(unknown)}")
        if "mpg" in data:
            data["mpg"] = MpgConfig.from_dict(data["mpg"])
        return cls(**data)

    def to_dict(self):
        return {
            "mpg": self.mpg.to_dict(),
            "apply_orientation_delta": self.apply_orientation_delta,
            "orientation_blend": self.orientation_blend,
            "divergence_threshold": self.divergence_threshold,
            "scene_clamp": self.scene_clamp,
        }


def load_config(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return TrackerConfig.from_dict(data)


@dataclass(frozen=True, eq=False)
class TrackerState:
    current_pose: Pose
    tree: object
    camera: object
    scene: object
    config: TrackerConfig
    estimator: object
    frame_index: int = 0
    window: tuple = ()
    status: str = TRACKING
    deviation_history: tuple = ()


@dataclass(frozen=True, eq=False)
class FrameReport:
    frame: int
    pose: Pose
    loss_before: float | None
    loss_after: float | None
    deviation: float | None = None
    flags: tuple = ()

    def to_record(self):
        return {
            "frame": self.frame,
            "pose": self.pose.vector.tolist(),
            "loss_before": self.loss_before,
            "loss_after": self.loss_after,
            "deviation": self.deviation,
            "flags": list(self.flags),
        }


def init(first_pose, camera, scene, config=None, tree=None, estimator=None):
    """Tracker state at frame 0 holding ``first_pose``.

    ``tree`` is required; it is a keyword so the positional order stays
    ``(first_pose, camera, scene, config)``.
    """
    if tree is None:
        raise InvalidInputError("init needs the kinematic tree")
    config = config or TrackerConfig()
    if not isinstance(config, TrackerConfig):
        raise ConfigError("config must be a TrackerConfig")
    if not config.divergence_threshold > 0:
        raise ConfigError("divergence_threshold must be positive")
    pose = first_pose if isinstance(first_pose, Pose) else Pose.from_vector(first_pose)
    return TrackerState(pose, tree, camera, scene, config, estimator or NoOrientationEstimator())


def _loss(q, state, frame):
    try:
        return loss_vec(q, state.tree, state.camera, frame)
    except BehindCameraError:
        return None


def _clamp_root(pose, state):
    root = state.tree.root_position + pose.root_translation
    if float(sdf(state.scene, root)) >= 0:
        return pose, False
    moved = clamp_out_of_geometry(state.scene, root)
    return Pose(pose.root_orientation, moved - state.tree.root_position, pose.joint_angles), True


def step(state, frame, reference_pose=None):
    """Advance the tracker by one keypoint frame.

    Returns ``(new_state, report)``.
    """
    if state.status != TRACKING:
        raise DivergedStateError(f"tracker diverged before frame {frame.index}; re-initialize it")
    cfg = state.config
    window = (state.window + (frame,))[-(cfg.mpg.window + 1):]
    pose = state.current_pose
    flags = []
    loss_before = _loss(pose.vector, state, frame)

    if loss_before is None:
        flags.append("behind_camera_skip")
    elif frame.num_visible == 0:
        flags.append("occluded_hold")
    else:
        feat = compute_mpg(pose, state.tree, state.camera, window, cfg.mpg, state.estimator)
        flags.extend(feat.flags)
        new = feat.refined_pose
        if cfg.apply_orientation_delta and feat.estimate_available and cfg.orientation_blend > 0:
            target = so3.exp_map(pose.root_orientation) @ so3.exp_map(feat.orientation_delta)
            blended = so3.slerp(so3.exp_map(new.root_orientation), target, cfg.orientation_blend)
            new = Pose(so3.log_map(blended), new.root_translation, new.joint_angles)
            flags.append("orientation_blend")
        if cfg.scene_clamp and state.scene is not None and len(state.scene):
            new, moved = _clamp_root(new, state)
            if moved:
                flags.append("scene_clamp")
        pose = new

    loss_after = _loss(pose.vector, state, frame)
    deviation = None
    status = TRACKING
    history = state.deviation_history
    if reference_pose is not None:
        deviation = mean_joint_deviation(state.tree, pose, reference_pose)
        history = history + (deviation,)
        if deviation > cfg.divergence_threshold:
            status = DIVERGED
            flags.append("diverged")

    new_state = replace(
        state, current_pose=pose, frame_index=state.frame_index + 1, window=window,
        status=status, deviation_history=history,
    )
    return new_state, FrameReport(frame.index, pose, loss_before, loss_after, deviation, tuple(flags))


@dataclass(frozen=True, eq=False)
class TrackResult:
    poses: tuple
    reports: tuple
    summary: dict


def track(initial_pose, frames, camera, scene, config=None, references=None, tree=None, estimator=None):
    """Track a whole keypoint sequence; one output pose per frame.

    After a divergence the remaining frames keep the last pose and carry a
    ``not_tracked`` flag; the summary then reports ``success = False``.
    """
    frames = list(frames)
    if not frames:
        raise InvalidInputError("track needs at least one keypoint frame")
    if references is not None:
        references = list(references)
        if len(references) != len(frames):
            raise InvalidInputError(f"{len(references)} reference poses for {len(frames)} frames")
    state = init(initial_pose, camera, scene, config, tree=tree, estimator=estimator)
    reports = []
    diverged_at = None
    for t, frame in enumerate(frames):
        if state.status != TRACKING:
            reports.append(FrameReport(frame.index, state.current_pose, None, None, None, ("not_tracked",)))
            continue
        ref = references[t] if references is not None else None
        state, report = step(state, frame, ref)
        reports.append(report)
        if state.status == DIVERGED:
            diverged_at = frame.index
    return TrackResult(tuple(r.pose for r in reports), tuple(reports), _summary(reports, state, diverged_at))


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def _summary(reports, state, diverged_at):
    flag_counts = {}
    for r in reports:
        for f in r.flags:
            flag_counts[f] = flag_counts.get(f, 0) + 1
    devs = state.deviation_history
    return {
        "success": diverged_at is None,
        "frames": len(reports),
        "diverged_at": diverged_at,
        "mean_loss_before": _mean(r.loss_before for r in reports),
        "mean_loss_after": _mean(r.loss_after for r in reports),
        "final_loss": reports[-1].loss_after,
        "mean_deviation": _mean(devs),
        "max_deviation": float(max(devs)) if devs else None,
        "final_deviation": float(devs[-1]) if devs else None,
        "flag_counts": flag_counts,
    }


def save_reports(path, reports):
    lines = [json.dumps(r.to_record(), separators=(",", ":")) for r in reports]
    Path(path).write_text("\n".join(lines) + "\n")


def load_pose_records(path):
    """Poses from a tracker output file (records with a ``pose`` field)."""
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})", line=lineno) from exc
        try:
            poses.append(Pose.from_vector(rec["pose"]))
        except (KeyError, TypeError, InvalidInputError) as exc:
            raise SchemaError(f"{path}: line {lineno}: bad pose record ({exc})") from exc
    return poses
