"""Axis-angle helpers: exponential/log maps, the left Jacobian, slerp.

All functions accept a trailing ``(3,)`` or ``(3, 3)`` shape and broadcast over
leading batch dimensions.
"""

import numpy as np

from .errors import InvalidRotationError

SMALL_ANGLE = 1e-8
# below this angle the third-order Jacobian coefficient loses precision to
# cancellation; switch to its series
_SERIES_ANGLE = 1e-3


def skew(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m):
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _coefficients(theta):
    """sin(t)/t, (1-cos t)/t^2 and (t-sin t)/t^3 with small-angle branches."""
    theta = np.asarray(theta, dtype=float)
    small = theta < SMALL_ANGLE
    series = theta < _SERIES_ANGLE
    safe = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    c = np.where(series, 1.0 / 6.0 - t2 / 120.0, (safe - np.sin(safe)) / safe**3)
    return a, b, c


def exp_map(w):
    """Rotation matrix for axis-angle ``w`` (Rodrigues formula)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    a, b, _ = _coefficients(theta)
    k = skew(w)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def left_jacobian(w):
    """Left Jacobian of SO(3) at ``w``.

    ``d exp(w) / d w_i = skew(J e_i) @ exp(w)``, i.e. a perturbation ``dw`` of
    the axis-angle coordinates acts as the world-frame rotation ``J @ dw``.
    """
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    _, b, c = _coefficients(theta)
    k = skew(w)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + b[..., None, None] * k + c[..., None, None] * (k @ k)


def log_map(r):
    """Axis-angle vector with angle in [0, pi] for rotation matrix ``r``."""
    r = np.asarray(r, dtype=float)
    if r.ndim > 2:
        flat = r.reshape(-1, 3, 3)
        return np.stack([log_map(m) for m in flat]).reshape(r.shape[:-2] + (3,))
    cos = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos))
    v = vee(r - r.T)
    if theta < SMALL_ANGLE:
        return v / 2.0
    if np.pi - theta > _SERIES_ANGLE:
        return theta / (2.0 * np.sin(theta)) * v
    # near pi: read the axis off the symmetric part
    m = (r - cos * np.eye(3)) / (1.0 - cos)
    k = int(np.argmax(np.diag(m)))
    axis = m[k] / np.sqrt(max(m[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ v < 0:
        axis = -axis
    return theta * axis


def canonicalize(w):
    """Map axis-angle vectors with angle > pi onto the equivalent angle <= pi."""
    w = np.array(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1, keepdims=True)
    turns = np.floor((theta + np.pi) / (2.0 * np.pi))
    wrapped = theta - 2.0 * np.pi * turns
    scale = np.divide(wrapped, theta, out=np.ones_like(theta), where=theta > np.pi)
    # wrapped may land on -pi exactly; the antipodal flip keeps the angle at pi
    return w * scale


def is_rotation(r, tol=1e-6):
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return bool(np.abs(r.T @ r - np.eye(3)).max() <= tol and np.linalg.det(r) > 0)


def check_rotation(r, tol=1e-6):
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise InvalidRotationError(f"expected 3x3 rotation, got shape {r.shape}")
    if not is_rotation(r, tol):
        err = np.abs(r.T @ r - np.eye(3)).max() if np.all(np.isfinite(r)) else np.inf
        raise InvalidRotationError(f"matrix is not a proper rotation (|R^T R - I| = {err:.3g})")
    return r


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def slerp(r0, r1, t):
    """Geodesic interpolation: ``t = 0`` gives ``r0``, ``t = 1`` gives ``r1``."""
    r0 = np.asarray(r0, dtype=float)
    rel = log_map(r0.T @ np.asarray(r1, dtype=float))
    return r0 @ exp_map(t * rel)


def heading(r):
    """Yaw (about world z) of the rotated x axis."""
    r = np.asarray(r, dtype=float)
    return float(np.arctan2(r[1, 0], r[0, 0]))
