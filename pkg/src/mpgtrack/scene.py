"""Primitive scenes: exact signed distances, the occupancy sensor, penetration.

Distances are in meters and negative inside geometry. Boxes and cylinders are
posed by a local-to-world rotation and translation; cylinders extend along
their local z axis.
"""

from dataclasses import dataclass
import json
from pathlib import Path

import numpy as np

from . import so3
from .errors import EmptySceneError, InvalidInputError, ParseError, SchemaError

GRID_RESOLUTION = 16
GRID_EDGE = 1.8
OCCUPANCY_SIGMA = 0.05
PENETRATION_THRESHOLD = 0.1


def _pose_fields(rotation, translation):
    r = so3.check_rotation(np.array(np.eye(3) if rotation is None else rotation, dtype=float).reshape(3, 3))
    t = np.array(np.zeros(3) if translation is None else translation, dtype=float).reshape(3)
    if not np.all(np.isfinite(t)):
        raise InvalidInputError("primitive translation must be finite")
    return r, t


@dataclass(frozen=True, eq=False)
class Box:
    half_extents: np.ndarray
    rotation: np.ndarray = None
    translation: np.ndarray = None
    tag: str = "furniture"

    def __post_init__(self):
        h = np.array(self.half_extents, dtype=float).reshape(3)
        if not np.all(h > 0):
            raise InvalidInputError(f"box half extents must be positive, got {h.tolist()}")
        r, t = _pose_fields(self.rotation, self.translation)
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def sdf(self, points):
        local = (np.asarray(points, dtype=float) - self.translation) @ self.rotation
        q = np.abs(local) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def to_dict(self):
        return {"shape": "box", "half_extents": self.half_extents.tolist(),
                "rotation": self.rotation.tolist(), "translation": self.translation.tolist(), "tag": self.tag}


@dataclass(frozen=True, eq=False)
class Cylinder:
    radius: float
    half_height: float
    rotation: np.ndarray = None
    translation: np.ndarray = None
    tag: str = "furniture"

    def __post_init__(self):
        if not (self.radius > 0 and self.half_height > 0):
            raise InvalidInputError("cylinder radius and half height must be positive")
        r, t = _pose_fields(self.rotation, self.translation)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "half_height", float(self.half_height))
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def sdf(self, points):
        local = (np.asarray(points, dtype=float) - self.translation) @ self.rotation
        d = np.stack([np.hypot(local[..., 0], local[..., 1]) - self.radius,
                      np.abs(local[..., 2]) - self.half_height], axis=-1)
        return np.minimum(d.max(axis=-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)

    def to_dict(self):
        return {"shape": "cylinder", "radius": self.radius, "half_height": self.half_height,
                "rotation": self.rotation.tolist(), "translation": self.translation.tolist(), "tag": self.tag}


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """Solid region ``normal . p <= offset``; the normal is normalized on construction."""

    normal: np.ndarray
    offset: float = 0.0
    tag: str = "ground"

    def __post_init__(self):
        n = np.array(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise InvalidInputError("half-space normal must be non-zero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def sdf(self, points):
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def to_dict(self):
        return {"shape": "halfspace", "normal": self.normal.tolist(), "offset": self.offset, "tag": self.tag}


@dataclass(frozen=True, eq=False)
class SceneGeometry:
    primitives: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def __len__(self):
        return len(self.primitives)

    def subset(self, tag):
        return SceneGeometry(tuple(p for p in self.primitives if p.tag == tag))

    def excluding(self, tag):
        return SceneGeometry(tuple(p for p in self.primitives if p.tag != tag))

    def to_dict(self):
        return {"primitives": [p.to_dict() for p in self.primitives]}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict) or "primitives" not in data:
            raise SchemaError("scene needs a 'primitives' list")
        prims = []
        for i, entry in enumerate(data["primitives"]):
            try:
                prims.append(_primitive_from_dict(entry))
            except KeyError as exc:
                raise SchemaError(f"primitive {i} is missing field {exc.args[0]!r}") from exc
            except InvalidInputError as exc:
                raise SchemaError(f"primitive {i}: {exc}") from exc
        return cls(tuple(prims))


def _primitive_from_dict(entry):
    shape = entry["shape"]
    tag = entry.get("tag", "ground" if shape in ("halfspace", "plane") else "furniture")
    if shape == "box":
        return Box(entry["half_extents"], entry.get("rotation"), entry.get("translation"), tag)
    if shape == "cylinder":
        return Cylinder(entry["radius"], entry["half_height"], entry.get("rotation"), entry.get("translation"), tag)
    if shape in ("halfspace", "plane"):
        return HalfSpace(entry["normal"], entry.get("offset", 0.0), tag)
    raise SchemaError(f"unknown primitive shape {shape!r}")


def load_scene(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc
    return SceneGeometry.from_dict(data)


def save_scene(path, scene):
    Path(path).write_text(json.dumps(scene.to_dict(), indent=1) + "\n")


def sdf(scene, points):
    """Scene signed distance at ``points`` (..., 3): minimum over primitives."""
    if not scene.primitives:
        raise EmptySceneError("scene has no primitives")
    points = np.asarray(points, dtype=float)
    out = scene.primitives[0].sdf(points)
    for prim in scene.primitives[1:]:
        out = np.minimum(out, prim.sdf(points))
    return out


def sdf_gradient(scene, points, h=1e-6):
    """Central-difference SDF gradient, shape like ``points``."""
    points = np.asarray(points, dtype=float)
    grad = np.empty(points.shape)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        grad[..., i] = (sdf(scene, points + e) - sdf(scene, points - e)) / (2 * h)
    return grad


def occupancy_from_sdf(values, sigma=OCCUPANCY_SIGMA):
    """1 inside or on the surface, 0 beyond ``sigma``, linear ramp in between."""
    if not sigma > 0:
        raise InvalidInputError("sigma must be positive")
    values = np.asarray(values, dtype=float)
    return np.where(values <= 0.0, 1.0, np.where(values > sigma, 0.0, 1.0 - values / sigma))


def grid_offsets(resolution=GRID_RESOLUTION, edge=GRID_EDGE):
    """Cell-center coordinates along one axis of the sensing cube."""
    spacing = edge / resolution
    return -edge / 2 + spacing * (np.arange(resolution) + 0.5)


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Agent-centric occupancy. ``values[i, j, k]`` samples local offset
    ``(axis[i], axis[j], axis[k])`` with x along the heading, z up."""

    values: np.ndarray
    points: np.ndarray
    center: np.ndarray
    heading: float
    edge_length: float = GRID_EDGE
    sigma: float = OCCUPANCY_SIGMA

    @property
    def resolution(self):
        return self.values.shape[0]

    def rows(self):
        """(resolution**3, 4) array of world x, y, z and value in C order."""
        return np.column_stack([self.points.reshape(-1, 3), self.values.reshape(-1)])


def grid_points(center, heading, resolution=GRID_RESOLUTION, edge=GRID_EDGE):
    axis = grid_offsets(resolution, edge)
    local = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    return local @ so3.rot_z(heading).T + np.asarray(center, dtype=float)


def occupancy_grid(scene, agent_root_position, agent_heading, sigma=OCCUPANCY_SIGMA,
                   resolution=GRID_RESOLUTION, edge=GRID_EDGE):
    if not sigma > 0:
        raise InvalidInputError("sigma must be positive")
    pts = grid_points(agent_root_position, agent_heading, resolution, edge)
    values = occupancy_from_sdf(sdf(scene, pts), sigma)
    return OccupancyGrid(values, pts, np.asarray(agent_root_position, dtype=float), float(agent_heading), edge, sigma)


def _penetration(scene, traj, threshold):
    d = sdf(scene, traj)
    freq = float((d < -threshold).any(axis=1).mean())
    neg = d[d < 0]
    pen = float(np.abs(neg).mean() * 1000.0) if neg.size else 0.0
    return {"freq": freq, "pen": pen}


def penetration_metrics(scene, point_trajectories, threshold=PENETRATION_THRESHOLD):
    """Penetration frequency and depth for point trajectories (T, N, 3).

    ``freq`` is the fraction of frames where some point is deeper than
    ``threshold`` meters; ``pen`` the mean depth in mm over penetrating
    point-frames. If the scene tags primitives as ``ground``, separate
    ``ground`` and ``scene`` entries are added.
    """
    traj = np.asarray(point_trajectories, dtype=float)
    if traj.ndim == 2:
        traj = traj[None]
    if traj.size == 0 or traj.shape[-1] != 3:
        raise InvalidInputError("penetration needs a non-empty (T, N, 3) trajectory")
    out = _penetration(scene, traj, threshold)
    ground = scene.subset("ground")
    if len(ground):
        out["ground"] = _penetration(ground, traj, threshold)
        rest = scene.excluding("ground")
        out["scene"] = _penetration(rest, traj, threshold) if len(rest) else {"freq": 0.0, "pen": 0.0}
    return out


def clamp_out_of_geometry(scene, point, max_iter=20, tol=1e-9):
    """Push ``point`` along the SDF gradient until its signed distance is >= 0."""
    p = np.asarray(point, dtype=float).copy()
    for _ in range(max_iter):
        d = float(sdf(scene, p))
        if d >= 0:
            return p
        g = sdf_gradient(scene, p)
        norm = np.linalg.norm(g)
        if norm < 1e-12:
            p[2] += -d + tol
            continue
        p = p - (d - tol) * g / norm
    return p
