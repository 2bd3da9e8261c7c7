"""Reprojection loss, its analytic gradient and a finite-difference oracle.

The loss is the sum over visible keypoints (confidence >= 0.1) of the
Euclidean pixel distance between the projected FK keypoint and the
observation. The distance is not squared, so a keypoint whose residual is
below ``KINK_RADIUS`` pixels contributes a zero (sub)gradient.
"""

from dataclasses import dataclass

import numpy as np

from .camera import project, project_with_jacobian
from .kinematics import KEYPOINT_MATRIX, POSE_DIM, Pose, _as_vector, fk_state, joint_jacobian

KINK_RADIUS = 1e-9


@dataclass(frozen=True, eq=False)
class PoseGradient:
    """Gradient with the same block layout as :class:`Pose`."""

    d_root_orientation: np.ndarray
    d_root_translation: np.ndarray
    d_joint_angles: np.ndarray

    @classmethod
    def from_vector(cls, g):
        g = np.asarray(g, dtype=float).reshape(POSE_DIM)
        return cls(g[0:3].copy(), g[3:6].copy(), g[6:].reshape(23, 3).copy())

    @property
    def vector(self):
        return np.concatenate([self.d_root_orientation, self.d_root_translation, self.d_joint_angles.ravel()])

    def norm(self):
        return float(np.linalg.norm(self.vector))


def loss_vec(q, tree, camera, frame):
    """Loss for a raw pose vector."""
    vis = frame.visible
    if not vis.any():
        # still reject configurations with keypoints behind the camera
        project(camera, KEYPOINT_MATRIX @ fk_state(tree, q)[0])
        return 0.0
    kp3 = KEYPOINT_MATRIX @ fk_state(tree, q)[0]
    uv = project(camera, kp3)
    return float(np.linalg.norm(uv[vis] - frame.uv[vis], axis=1).sum())


def loss_and_grad_vec(q, tree, camera, frame):
    pos, jac = joint_jacobian(tree, q)
    kp3 = KEYPOINT_MATRIX @ pos
    uv, duv = project_with_jacobian(camera, kp3)
    vis = frame.visible
    grad = np.zeros(POSE_DIM)
    if not vis.any():
        return 0.0, grad
    resid = uv[vis] - frame.uv[vis]
    dist = np.linalg.norm(resid, axis=1)
    active = dist >= KINK_RADIUS
    unit = np.zeros_like(resid)
    unit[active] = resid[active] / dist[active, None]
    # dL/dkp3 for each visible keypoint, then pulled back through the selection
    dkp = np.einsum("ki,kic->kc", unit, duv[vis])
    djoint = KEYPOINT_MATRIX[vis].T @ dkp
    grad = np.einsum("jc,jcp->p", djoint, jac)
    return float(dist.sum()), grad


def reprojection_loss(pose, tree, camera, frame):
    return loss_vec(_as_vector(pose), tree, camera, frame)


def reprojection_gradient(pose, tree, camera, frame):
    return PoseGradient.from_vector(loss_and_grad_vec(_as_vector(pose), tree, camera, frame)[1])


def batch_losses(qs, tree, camera, frame):
    """Loss for each row of a (B, 75) batch of raw pose vectors."""
    kp3 = np.einsum("kj,bjc->bkc", KEYPOINT_MATRIX, fk_state(tree, qs)[0])
    uv = project(camera, kp3)
    vis = frame.visible
    return np.linalg.norm(uv[:, vis] - frame.uv[vis], axis=-1).sum(axis=-1)


def finite_difference_gradient(pose, tree, camera, frame, h=1e-5):
    """Central differences ``(L(q + h e_i) - L(q - h e_i)) / 2h`` per coordinate."""
    if not h > 0:
        raise ValueError("step h must be positive")
    q = _as_vector(pose)
    step = h * np.eye(POSE_DIM)
    losses = batch_losses(np.vstack([q + step, q - step]), tree, camera, frame)
    g = (losses[:POSE_DIM] - losses[POSE_DIM:]) / (2.0 * h)
    return PoseGradient.from_vector(g)


def gradient_mismatch(analytic, numeric, abs_floor=1e-7):
    """Largest componentwise relative error; components within ``abs_floor`` count as matching."""
    a = np.asarray(getattr(analytic, "vector", analytic), dtype=float)
    f = np.asarray(getattr(numeric, "vector", numeric), dtype=float)
    diff = np.abs(a - f)
    scale = np.maximum(np.abs(a), np.abs(f))
    rel = np.where(diff <= abs_floor, 0.0, diff / np.where(scale > 0, scale, 1.0))
    return float(rel.max())


__all__ = [
    "KINK_RADIUS",
    "Pose",
    "PoseGradient",
    "finite_difference_gradient",
    "gradient_mismatch",
    "reprojection_gradient",
    "reprojection_loss",
]
