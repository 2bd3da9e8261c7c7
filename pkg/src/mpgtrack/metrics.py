"""Evaluation metrics. Inputs are meters; distances are reported in mm."""

from dataclasses import asdict, dataclass, field
import json
import math
import warnings

import numpy as np

from .errors import InsufficientFramesError, InvalidInputError
from .kinematics import NUM_KEYPOINTS, PELVIS_KEYPOINT

DIVERGENCE_THRESHOLD = 0.3
LIMB_SAMPLES = 10
FAR_RINGS = 3


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None] if gt.ndim == 2 else gt
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    if pred.ndim != 3 or pred.shape[-1] != 3 or pred.shape[0] == 0:
        raise InvalidInputError(f"expected (T, J, 3) joint sequences, got {pred.shape}")
    return pred, gt


def similarity_align(source, target):
    """Scale, rotation and translation minimizing ``sum |s R x + t - y|^2``.

    Returns the aligned copy of ``source`` (J, 3).
    """
    mu_x = source.mean(axis=0)
    mu_y = target.mean(axis=0)
    x = source - mu_x
    y = target - mu_y
    var_x = (x * x).sum()
    if var_x == 0.0:
        return np.broadcast_to(mu_y, source.shape).copy()
    cov = y.T @ x
    u, sigma, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[-1] = -1.0
    rot = (u * d) @ vt
    scale = (sigma * d).sum() / var_x
    return scale * x @ rot.T + mu_y


def mpjpe_family(pred, gt, root_index=None):
    """``{"mpjpe", "pa_mpjpe", "a_mpjpe"}`` in mm for (T, J, 3) sequences.

    The root used for root-relative MPJPE is the pelvis keypoint for
    12-point sets and joint 0 otherwise.
    """
    pred, gt = _check_pair(pred, gt)
    if root_index is None:
        root_index = PELVIS_KEYPOINT if pred.shape[1] == NUM_KEYPOINTS else 0
    a_err = np.linalg.norm(pred - gt, axis=-1)
    rel_pred = pred - pred[:, root_index:root_index + 1]
    rel_gt = gt - gt[:, root_index:root_index + 1]
    rel_err = np.linalg.norm(rel_pred - rel_gt, axis=-1)
    aligned = np.stack([similarity_align(p, g) for p, g in zip(pred, gt)])
    pa_err = np.linalg.norm(aligned - gt, axis=-1)
    return {
        "mpjpe": float(rel_err.mean() * 1000.0),
        "pa_mpjpe": float(pa_err.mean() * 1000.0),
        "a_mpjpe": float(a_err.mean() * 1000.0),
    }


def acceleration(joints):
    """Mean second-difference magnitude in mm/frame^2 for a (T, J, 3) sequence."""
    joints = np.asarray(joints, dtype=float)
    if joints.ndim != 3 or joints.shape[0] < 3:
        raise InsufficientFramesError("acceleration needs at least 3 frames")
    acc = joints[2:] - 2.0 * joints[1:-1] + joints[:-2]
    return float(np.linalg.norm(acc, axis=-1).mean() * 1000.0)


def _sqdist(points, samples):
    # explicit component sum so every route rounds identically
    d = points[:, None, :] - samples[None, :, :]
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def nearest_distances_bruteforce(points, samples):
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    samples = np.asarray(samples, dtype=float).reshape(-1, 3)
    return np.sqrt(_sqdist(points, samples).min(axis=1))


class SpatialHash:
    """Uniform-grid bucketing of 3D samples for exact nearest-neighbour queries."""

    def __init__(self, samples, cell_size=None):
        samples = np.asarray(samples, dtype=float).reshape(-1, 3)
        if len(samples) == 0:
            raise InvalidInputError("spatial hash needs at least one sample")
        self.samples = samples
        if cell_size is None:
            extent = np.ptp(samples, axis=0).max()
            # about two samples per occupied cell for roughly surface-like sets
            cell_size = extent / max(1.0, math.sqrt(len(samples) / 2.0)) if extent > 0 else 1.0
        self.cell_size = float(cell_size)
        keys = np.floor(samples / self.cell_size).astype(np.int64)
        self.origin = keys.min(axis=0)
        self.extent = keys.max(axis=0) - self.origin
        self.buckets = {}
        for i, key in enumerate(map(tuple, keys)):
            self.buckets.setdefault(key, []).append(i)
        self.buckets = {k: np.asarray(v) for k, v in self.buckets.items()}

    def _ring(self, center, r):
        """Sample indices in cells at Chebyshev distance exactly ``r`` from ``center``."""
        cx, cy, cz = center
        found = []
        rng = range(-r, r + 1)
        for dx in rng:
            for dy in rng:
                if max(abs(dx), abs(dy)) == r:
                    dzs = rng
                else:
                    dzs = (-r, r) if r else (0,)
                for dz in dzs:
                    idx = self.buckets.get((cx + dx, cy + dy, cz + dz))
                    if idx is not None:
                        found.append(idx)
        return found

    def nearest_distances(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        keys = np.floor(points / self.cell_size).astype(np.int64)
        out = np.empty(len(points))
        groups = {}
        for i, key in enumerate(map(tuple, keys)):
            groups.setdefault(key, []).append(i)
        lo = self.origin
        hi = self.origin + self.extent
        for key, members in groups.items():
            members = np.asarray(members)
            best = np.full(len(members), np.inf)
            key_arr = np.asarray(key)
            # rings beyond this radius cannot contain samples
            max_r = int(np.maximum(np.abs(key_arr - lo), np.abs(key_arr - hi)).max())
            min_r = int(np.maximum(np.maximum(lo - key_arr, key_arr - hi), 0).max())
            if min_r > FAR_RINGS:
                # far outside the sample cloud: rings are mostly empty, scan everything
                out[members] = np.sqrt(_sqdist(points[members], self.samples).min(axis=1))
                continue
            r = min_r
            while True:
                cand = self._ring(key, r)
                if cand:
                    cand = np.concatenate(cand)
                    best = np.minimum(best, _sqdist(points[members], self.samples[cand]).min(axis=1))
                # unsearched samples lie at least r cells away from any point in this cell
                bound = r * self.cell_size
                if np.all(best <= bound * bound) or r >= max_r:
                    break
                r += 1
            out[members] = np.sqrt(best)
        return out


def chamfer_one_way(points, surface_samples, accelerated=True):
    """Mean distance (mm) from each of ``points`` to its nearest surface sample."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    samples = np.asarray(surface_samples, dtype=float).reshape(-1, 3)
    if len(points) == 0 or len(samples) == 0:
        raise InvalidInputError("chamfer distance needs two non-empty point sets")
    if accelerated:
        d = SpatialHash(samples).nearest_distances(points)
    else:
        d = nearest_distances_bruteforce(points, samples)
    return float(d.mean() * 1000.0)


def body_points(joints, parents, samples_per_limb=LIMB_SAMPLES):
    """Joint positions plus evenly spaced interior samples on every limb segment."""
    joints = np.asarray(joints, dtype=float)
    pts = [joints]
    frac = np.arange(1, samples_per_limb + 1) / (samples_per_limb + 1)
    for j, p in enumerate(parents):
        if p >= 0 and samples_per_limb > 0:
            pts.append(joints[p] + frac[:, None] * (joints[j] - joints[p]))
    return np.vstack(pts)


def average_chamfer(clouds, bodies, direction="cloud_to_body"):
    """Per-frame one-way chamfer averaged over frames (mm).

    ``direction`` is ``"cloud_to_body"`` (observation points to their nearest
    body point) or ``"body_to_cloud"``.
    """
    if direction not in ("cloud_to_body", "body_to_cloud"):
        raise InvalidInputError(f"unknown chamfer direction {direction!r}")
    if len(clouds) != len(bodies):
        raise InvalidInputError("cloud and body sequences differ in length")
    vals = []
    for cloud, body in zip(clouds, bodies):
        src, dst = (cloud, body) if direction == "cloud_to_body" else (body, cloud)
        vals.append(chamfer_one_way(src, dst))
    return float(np.mean(vals))


def success_rate(deviation_histories, threshold=DIVERGENCE_THRESHOLD):
    """Fraction of sequences whose deviation never exceeds ``threshold`` meters."""
    histories = list(deviation_histories)
    if not histories:
        warnings.warn("success rate of an empty set of sequences is defined as 1.0", RuntimeWarning)
        return 1.0
    ok = [not np.any(np.asarray(h, dtype=float) > threshold) for h in histories]
    return float(np.mean(ok))


@dataclass
class MetricsReport:
    mpjpe: float | None = None
    pa_mpjpe: float | None = None
    a_mpjpe: float | None = None
    accel: float | None = None
    acd: float | None = None
    success: bool | None = None
    ground_penetration: dict | None = None
    scene_penetration: dict | None = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=False) + "\n"

    def to_table(self):
        rows = [
            ("MPJPE (mm)", self.mpjpe),
            ("PA-MPJPE (mm)", self.pa_mpjpe),
            ("A-MPJPE (mm)", self.a_mpjpe),
            ("Accel (mm/frame^2)", self.accel),
            ("ACD (mm)", self.acd),
            ("Success", self.success),
        ]
        for label, pen in (("Ground", self.ground_penetration), ("Scene", self.scene_penetration)):
            pen = pen or {}
            rows.append((f"{label} pen. freq", pen.get("freq")))
            rows.append((f"{label} pen. (mm)", pen.get("pen")))
        width = max(len(r[0]) for r in rows)
        lines = []
        for label, value in rows:
            if value is None:
                text = "-"
            elif isinstance(value, bool):
                text = "yes" if value else "no"
            else:
                text = f"{value:.3f}"
            lines.append(f"{label:<{width}}  {text:>12}")
        return "\n".join(lines) + "\n"
