"""Synthetic paired 2D/3D data.

Motion files are JSONL: a header line ``{"frame_rate": 30.0}`` followed by one
JSON array of 75 floats per frame.
"""

from dataclasses import dataclass
import json
from pathlib import Path

import numpy as np

from . import so3
from .camera import MIN_DEPTH, backproject, frustum_contains, project
from .errors import (
    BehindCameraError,
    ConfigError,
    InvalidInputError,
    ParseError,
    PlacementFailureError,
    SchemaError,
)
from .frames import CONFIDENCE_THRESHOLD, KeypointFrame
from .kinematics import KEYPOINT_MATRIX, POSE_DIM, Pose, fk_state, transform_pose

MAX_PLACEMENT_ATTEMPTS = 100


@dataclass(frozen=True, eq=False)
class MotionSequence:
    poses: tuple
    frame_rate: float = 30.0

    def __post_init__(self):
        poses = tuple(p if isinstance(p, Pose) else Pose.from_vector(p) for p in self.poses)
        if not poses:
            raise InvalidInputError("motion sequence needs at least one frame")
        if not self.frame_rate > 0:
            raise InvalidInputError(f"frame rate must be positive, got {self.frame_rate}")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "frame_rate", float(self.frame_rate))

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def as_array(self):
        return np.stack([p.vector for p in self.poses])


@dataclass(frozen=True)
class NoiseConfig:
    pixel_noise_std: float = 0.0
    dropout_probability: float = 0.0
    confidence_mode: str = "fixed"
    confidence_value: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.pixel_noise_std >= 0:
            raise ConfigError("pixel_noise_std must be >= 0")
        if not 0.0 <= self.dropout_probability <= 1.0:
            raise ConfigError("dropout_probability must lie in [0, 1]")
        if self.confidence_mode not in ("uniform", "fixed"):
            raise ConfigError(f"confidence_mode must be 'uniform' or 'fixed', got {self.confidence_mode!r}")
        if not 0.0 <= self.confidence_value <= 1.0:
            raise ConfigError("confidence_value must lie in [0, 1]")

    def rng(self):
        return np.random.default_rng(self.rng_seed)


def load_motion(path):
    path = Path(path)
    lines = path.read_text().splitlines()
    numbered = [(i, line) for i, line in enumerate(lines, start=1) if line.strip()]
    if not numbered:
        raise ParseError(f"{path}: empty motion file")
    lineno, header_line = numbered[0]
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid header ({exc.msg})", line=lineno) from exc
    if not isinstance(header, dict) or "frame_rate" not in header:
        raise ParseError(f"{path}: first line must be a header with 'frame_rate'", line=lineno)
    poses = []
    for frame, (lineno, line) in enumerate(numbered[1:]):
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: frame {frame}: invalid JSON ({exc.msg})", line=lineno) from exc
        if isinstance(row, dict):
            row = row.get("pose")
        try:
            q = np.asarray(row, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: frame {frame}: pose is not numeric", line=lineno) from exc
        if q.shape != (POSE_DIM,):
            raise SchemaError(f"{path}: frame {frame} (line {lineno}): pose has {q.size} values, expected {POSE_DIM}")
        try:
            poses.append(Pose.from_vector(q))
        except InvalidInputError as exc:
            raise SchemaError(f"{path}: frame {frame} (line {lineno}): {exc}") from exc
    if not poses:
        raise ParseError(f"{path}: no pose rows after the header")
    return MotionSequence(tuple(poses), header["frame_rate"])


def save_motion(path, seq):
    lines = [json.dumps({"frame_rate": seq.frame_rate})]
    lines += [json.dumps(p.vector.tolist()) for p in seq.poses]
    Path(path).write_text("\n".join(lines) + "\n")


def randomize_sequence(seq, camera, image_size, depth_range, rng, tree=None, yaw=None, offset=None):
    """Rotate the whole sequence about the vertical and slide it on the ground
    plane so that the root stays inside the camera frustum in every frame.

    ``yaw`` (radians) and ``offset`` (x, y meters) force the transform instead
    of sampling it. The yaw pivots about the first frame's root.
    """
    width, height = image_size
    root_offset = np.zeros(3) if tree is None else tree.root_position
    roots = np.stack([p.root_translation for p in seq.poses]) + root_offset
    pivot = roots[0]

    def apply(angle, shift):
        rot = so3.rot_z(angle)
        trans = pivot + np.array([shift[0], shift[1], 0.0]) - rot @ pivot
        return rot, trans

    def fits(rot, trans):
        return all(frustum_contains(camera, rot @ r + trans, width, height, depth_range) for r in roots)

    forced = yaw is not None or offset is not None
    for _ in range(1 if forced else MAX_PLACEMENT_ATTEMPTS):
        if forced:
            angle = 0.0 if yaw is None else float(yaw)
            shift = np.zeros(2) if offset is None else np.asarray(offset, dtype=float)
        else:
            angle = rng.uniform(0.0, 2.0 * np.pi)
            depth = rng.uniform(*depth_range)
            uv = (rng.uniform(0.0, width), rng.uniform(0.0, height))
            target = backproject(camera, uv, depth)
            # keep the height of the original start
            shift = (target - pivot)[:2]
        rot, trans = apply(angle, shift)
        if forced and angle == 0.0 and not np.any(shift):
            return seq
        if fits(rot, trans):
            return _rigid(seq, rot, trans, tree)
        if forced:
            break
    raise PlacementFailureError(
        f"could not place sequence inside the frustum after {1 if forced else MAX_PLACEMENT_ATTEMPTS} attempts"
    )


def _rigid(seq, rot, trans, tree):
    return MotionSequence(tuple(transform_pose(p, rot, trans, tree) for p in seq.poses), seq.frame_rate)


def synthesize_keypoints(seq, tree, camera, noise=None, rng=None):
    """Project each pose's 12 keypoints and add pixel noise and confidences.

    ``rng`` defaults to a generator seeded from ``noise.rng_seed``.
    """
    noise = noise or NoiseConfig()
    rng = rng if rng is not None else noise.rng()
    qs = seq.as_array()
    kp3 = np.einsum("kj,bjc->bkc", KEYPOINT_MATRIX, fk_state(tree, qs)[0])
    depth = camera.to_camera(kp3)[..., 2]
    behind = np.flatnonzero((depth <= MIN_DEPTH).any(axis=1))
    if behind.size:
        raise BehindCameraError(behind, f"keypoints behind camera in frames {behind.tolist()}")
    uv = project(camera, kp3)
    frames = []
    for t in range(len(seq)):
        pix = uv[t]
        if noise.pixel_noise_std > 0:
            pix = pix + rng.normal(0.0, noise.pixel_noise_std, size=pix.shape)
        if noise.confidence_mode == "uniform":
            conf = rng.uniform(0.0, 1.0, size=len(pix))
        else:
            conf = np.full(len(pix), noise.confidence_value)
        if noise.dropout_probability > 0:
            drop = rng.uniform(size=len(pix)) < noise.dropout_probability
            conf = np.where(drop, rng.uniform(0.0, CONFIDENCE_THRESHOLD, size=len(pix)) * 0.999, conf)
        frames.append(KeypointFrame(pix, conf, index=t))
    return frames


def drop_frames(frames, start, stop):
    """Copy of ``frames`` with every keypoint in ``[start, stop)`` below threshold."""
    out = []
    for f in frames:
        if start <= f.index < stop:
            f = f.with_confidence(np.zeros_like(f.confidence))
        out.append(f)
    return out


def procedural_walk(n_frames, frame_rate=30.0, speed=1.0, heading=0.0, start=(0.0, 0.0, 0.93),
                    cadence=0.9, amplitude=1.0, rng=None):
    """A simple periodic walking motion, for tests and demos.

    The rest skeleton faces -y; ``heading`` rotates the walker about z, and the
    root advances along the facing direction at ``speed`` m/s. ``cadence`` is
    gait cycles per second. ``rng`` jitters amplitudes and phases slightly.
    """
    jitter = (lambda: 1.0 + 0.15 * rng.uniform(-1, 1)) if rng is not None else (lambda: 1.0)
    phase0 = rng.uniform(0, 2 * np.pi) if rng is not None else 0.0
    amp = amplitude
    hip_a, knee_a, arm_a, elbow_a, twist_a = (0.45 * jitter() * amp, 0.7 * jitter() * amp,
                                              0.35 * jitter() * amp, 0.3 * jitter() * amp,
                                              0.12 * jitter() * amp)
    rot = so3.rot_z(heading)
    forward = rot @ np.array([0.0, -1.0, 0.0])
    start = np.asarray(start, dtype=float)
    poses = []
    for i in range(n_frames):
        t = i / frame_rate
        ph = 2 * np.pi * cadence * t + phase0
        s, c = np.sin(ph), np.cos(ph)
        ja = np.zeros((24, 3))
        ja[1] = [-hip_a * s, 0.0, 0.0]
        ja[2] = [hip_a * s, 0.0, 0.0]
        ja[4] = [knee_a * max(0.0, np.sin(ph + 0.6)) + 0.05, 0.0, 0.0]
        ja[5] = [knee_a * max(0.0, -np.sin(ph + 0.6)) + 0.05, 0.0, 0.0]
        ja[3] = [0.03, 0.0, twist_a * s * 0.5]
        ja[6] = [0.02, 0.0, twist_a * s * 0.3]
        ja[9] = [0.0, 0.0, -twist_a * s * 0.4]
        ja[16] = [arm_a * s, 1.25, 0.0]
        ja[17] = [-arm_a * s, -1.25, 0.0]
        ja[18] = [0.0, 0.0, elbow_a * (1.2 + 0.5 * s)]
        ja[19] = [0.0, 0.0, -elbow_a * (1.2 - 0.5 * s)]
        ja[15] = [0.05 * c, 0.0, 0.0]
        root_rot = rot @ so3.exp_map([0.02 * s, 0.0, twist_a * c * 0.3])
        trans = start + forward * speed * t + np.array([0.0, 0.0, 0.02 * np.cos(2 * ph)])
        poses.append(Pose(so3.log_map(root_rot), trans, ja[1:]))
    return MotionSequence(tuple(poses), frame_rate)
