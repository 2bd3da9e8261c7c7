"""Ideal pinhole camera.

Extrinsics map world to camera: ``p_c = R @ p + t``. Camera axes are x right,
y down, z forward; image coordinates (u, v) have their origin at the top-left
pixel corner with v pointing down.
"""

from dataclasses import dataclass
import json
from pathlib import Path

import numpy as np

from . import so3
from .errors import BehindCameraError, InvalidInputError, ParseError, SchemaError

MIN_DEPTH = 1e-6


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        r = so3.check_rotation(np.array(self.rotation, dtype=float), tol=1e-9)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise InvalidInputError("camera translation must be 3 finite values")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def look_at(cls, eye, target, fx, fy, cx, cy, up=(0.0, 0.0, 1.0), width=None, height=None):
        """Camera at ``eye`` looking at ``target`` with image-up along world ``up``."""
        eye = np.asarray(eye, dtype=float)
        forward = np.asarray(target, dtype=float) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=float))
        norm = np.linalg.norm(right)
        if norm < 1e-9:
            raise InvalidInputError("view direction is parallel to the up vector")
        right /= norm
        down = np.cross(forward, right)
        rot = np.vstack([right, down, forward])
        return cls(fx, fy, cx, cy, rot, -rot @ eye, width, height)

    @property
    def intrinsic_matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def with_extrinsics(self, rotation, translation):
        return CameraModel(self.fx, self.fy, self.cx, self.cy, rotation, translation, self.width, self.height)

    def transformed(self, rotation, translation):
        """Camera that sees the world moved by ``p -> rotation @ p + translation``
        exactly as this camera sees the original world."""
        rotation = np.asarray(rotation, dtype=float)
        new_r = self.rotation @ rotation.T
        return self.with_extrinsics(new_r, self.translation - new_r @ np.asarray(translation, dtype=float))

    def to_dict(self):
        out = {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "R": self.rotation.tolist(), "t": self.translation.tolist(),
        }
        if self.width is not None:
            out["width"] = self.width
        if self.height is not None:
            out["height"] = self.height
        return out

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                data["fx"], data["fy"], data["cx"], data["cy"],
                np.asarray(data["R"], dtype=float).reshape(3, 3), data["t"],
                data.get("width"), data.get("height"),
            )
        except KeyError as exc:
            raise SchemaError(f"camera is missing field {exc.args[0]!r}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise SchemaError(f"malformed camera: {exc}") from exc


def load_camera(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc
    return CameraModel.from_dict(data)


def save_camera(path, camera):
    Path(path).write_text(json.dumps(camera.to_dict(), indent=1) + "\n")


def project(camera, points):
    """Pixel coordinates (..., 2) of world points (..., 3)."""
    pc = camera.to_camera(points)
    z = pc[..., 2]
    bad = np.flatnonzero(np.atleast_1d(z <= MIN_DEPTH))
    if bad.size:
        raise BehindCameraError(bad)
    u = camera.fx * pc[..., 0] / z + camera.cx
    v = camera.fy * pc[..., 1] / z + camera.cy
    return np.stack([u, v], axis=-1)


def project_with_jacobian(camera, points):
    """Pixels (N, 2) and the Jacobian d(u, v)/d(world point), shape (N, 2, 3)."""
    pc = camera.to_camera(points)
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    bad = np.flatnonzero(z <= MIN_DEPTH)
    if bad.size:
        raise BehindCameraError(bad)
    inv_z = 1.0 / z
    uv = np.stack([camera.fx * x * inv_z + camera.cx, camera.fy * y * inv_z + camera.cy], axis=-1)
    dcam = np.zeros((len(pc), 2, 3))
    dcam[:, 0, 0] = camera.fx * inv_z
    dcam[:, 0, 2] = -camera.fx * x * inv_z * inv_z
    dcam[:, 1, 1] = camera.fy * inv_z
    dcam[:, 1, 2] = -camera.fy * y * inv_z * inv_z
    return uv, dcam @ camera.rotation


def rotation_to_world(camera, rotation):
    """Express a camera-frame orientation in the world frame: ``R_ext^T @ rotation``."""
    rotation = so3.check_rotation(rotation, tol=1e-6)
    return camera.rotation.T @ rotation


def rotation_to_camera(camera, rotation):
    rotation = so3.check_rotation(rotation, tol=1e-6)
    return camera.rotation @ rotation


def frustum_contains(camera, point, width, height, depth_range):
    near, far = depth_range
    if not 0 < near < far:
        raise InvalidInputError(f"invalid depth range {depth_range}")
    pc = camera.to_camera(point)
    z = pc[2]
    if not near <= z <= far:
        return False
    u = camera.fx * pc[0] / z + camera.cx
    v = camera.fy * pc[1] / z + camera.cy
    return bool(0.0 <= u <= width and 0.0 <= v <= height)


def backproject(camera, uv, depth):
    """World point at camera-frame depth ``depth`` seen at pixel ``uv``."""
    u, v = uv
    pc = np.array([(u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth])
    return camera.rotation.T @ (pc - camera.translation)
