"""Fixed-limb skeleton, forward kinematics and the 12-keypoint subset.

World frame is z-up, meters. Joints follow the SMPL 24-joint ordering; the rest
(T-pose) joint positions come from a skeleton file rather than a body model.

Pose layout (75 values)::

    [0:3]   root orientation, axis-angle (world frame)
    [3:6]   root translation, meters
    [6:75]  joint angles of joints 1..23, axis-angle relative to the parent

The root translation is added to the rest-pose root position, as in SMPL, so
the zero pose reproduces the rest skeleton exactly.
"""

from dataclasses import dataclass
from functools import lru_cache
import json
from pathlib import Path

import numpy as np

from . import so3
from .errors import InvalidInputError, InvalidTreeError, ParseError, SchemaError

POSE_DIM = 75
NUM_JOINTS = 24
NUM_KEYPOINTS = 12

SMPL_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

# Joint indices copied verbatim into keypoints 0..9. Keypoint 10 averages
# joints 15 and 20 ("mid-chest"), keypoint 11 averages 0, 1 and 5 ("pelvis").
# The indices are used exactly as published even though, read against the
# usual SMPL naming, some of them do not name the body part they label.
DIRECT_KEYPOINT_JOINTS = (15, 16, 17, 20, 21, 22, 2, 3, 6, 7)
MID_CHEST_JOINTS = (15, 20)
PELVIS_JOINTS = (0, 1, 5)
PELVIS_KEYPOINT = 11

KEYPOINT_NAMES = (
    "j15", "j16", "j17", "j20", "j21", "j22", "j02", "j03", "j06", "j07",
    "mid_chest", "pelvis",
)


def _keypoint_matrix():
    m = np.zeros((NUM_KEYPOINTS, NUM_JOINTS))
    for row, j in enumerate(DIRECT_KEYPOINT_JOINTS):
        m[row, j] = 1.0
    m[10, list(MID_CHEST_JOINTS)] = 1.0 / len(MID_CHEST_JOINTS)
    m[11, list(PELVIS_JOINTS)] = 1.0 / len(PELVIS_JOINTS)
    return m


# select_keypoints is the linear map ``KEYPOINT_MATRIX @ joints``
KEYPOINT_MATRIX = _keypoint_matrix()
KEYPOINT_MATRIX.setflags(write=False)


@dataclass(frozen=True, eq=False)
class Pose:
    """Body configuration: root orientation, root translation, 23 joint angles.

    Axis-angle blocks are canonicalized to angles in [0, pi] on construction.
    """

    root_orientation: np.ndarray
    root_translation: np.ndarray
    joint_angles: np.ndarray

    def __post_init__(self):
        ro = np.array(self.root_orientation, dtype=float).reshape(-1)
        rt = np.array(self.root_translation, dtype=float).reshape(-1)
        ja = np.array(self.joint_angles, dtype=float)
        if ro.shape != (3,) or rt.shape != (3,) or ja.size != 69:
            raise SchemaError(
                f"pose blocks must have sizes 3/3/69, got {ro.size}/{rt.size}/{ja.size}"
            )
        ja = ja.reshape(23, 3)
        if not (np.all(np.isfinite(ro)) and np.all(np.isfinite(rt)) and np.all(np.isfinite(ja))):
            raise InvalidInputError("pose contains non-finite values")
        ro = so3.canonicalize(ro)
        ja = so3.canonicalize(ja)
        for arr in (ro, rt, ja):
            arr.setflags(write=False)
        object.__setattr__(self, "root_orientation", ro)
        object.__setattr__(self, "root_translation", rt)
        object.__setattr__(self, "joint_angles", ja)

    @classmethod
    def from_vector(cls, q):
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape != (POSE_DIM,):
            raise SchemaError(f"pose vector must have {POSE_DIM} entries, got {q.size}")
        return cls(q[0:3], q[3:6], q[6:])

    @classmethod
    def zero(cls, root_translation=(0.0, 0.0, 0.0)):
        return cls(np.zeros(3), root_translation, np.zeros((23, 3)))

    @property
    def vector(self):
        return np.concatenate([self.root_orientation, self.root_translation, self.joint_angles.ravel()])

    def axis_angles(self):
        """(24, 3) axis-angle per joint, root first."""
        return np.vstack([self.root_orientation[None], self.joint_angles])

    def __repr__(self):
        return (
            f"Pose(root_orientation={self.root_orientation.tolist()}, "
            f"root_translation={self.root_translation.tolist()}, joint_angles=<23x3>)"
        )


@dataclass(frozen=True, eq=False)
class KinematicTree:
    """Fixed-limb skeleton.

    ``local_offsets[j]`` is the child-from-parent offset of joint ``j`` in the
    parent's rest frame (row 0 is zero). ``root_position`` is the rest-pose
    root location that the pose's root translation is added to.
    """

    parents: tuple
    local_offsets: np.ndarray
    root_position: np.ndarray

    @property
    def joint_count(self):
        return len(self.parents)

    def limb_lengths(self):
        return np.linalg.norm(self.local_offsets[1:], axis=1)

    @property
    def depth_order(self):
        return _topological_order(self.parents)


@lru_cache(maxsize=64)
def _topological_order(parents):
    """Joint indices ordered so every parent precedes its children."""
    n = len(parents)
    children = [[] for _ in range(n)]
    roots = []
    for j, p in enumerate(parents):
        if p < 0:
            roots.append(j)
        else:
            children[p].append(j)
    order = []
    stack = list(reversed(roots))
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(reversed(children[j]))
    return tuple(order)


def validate_parents(parents, n=NUM_JOINTS):
    parents = tuple(int(p) for p in parents)
    if len(parents) != n:
        raise InvalidTreeError(f"expected {n} parent indices, got {len(parents)}")
    if parents[0] != -1:
        raise InvalidTreeError("joint 0 must be the root (parent -1)")
    for j, p in enumerate(parents[1:], start=1):
        if not 0 <= p < n or p == j:
            raise InvalidTreeError(f"joint {j} has invalid parent {p}")
    order = _topological_order(parents)
    if len(order) != n:
        raise InvalidTreeError("parent indices contain a cycle")
    return parents


def build_tree(rest_joints, parents=SMPL_PARENTS):
    """Build a fixed-limb tree from rest-pose (zero joint angle) joint positions."""
    rest = np.array(rest_joints, dtype=float)
    if rest.ndim != 2 or rest.shape[1] != 3:
        raise InvalidInputError(f"rest joints must be (N, 3), got {rest.shape}")
    if not np.all(np.isfinite(rest)):
        raise InvalidInputError("rest joints contain non-finite values")
    parents = validate_parents(parents, n=rest.shape[0])
    offsets = np.zeros_like(rest)
    for j, p in enumerate(parents):
        if p >= 0:
            offsets[j] = rest[j] - rest[p]
    offsets.setflags(write=False)
    root = rest[0].copy()
    root.setflags(write=False)
    return KinematicTree(parents=parents, local_offsets=offsets, root_position=root)


def load_skeleton(path):
    """Read a skeleton JSON file (``joints``: 24x3, ``parents``: 24 ints)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, dict) or "joints" not in data:
        raise SchemaError(f"{path}: skeleton file needs a 'joints' array")
    return build_tree(data["joints"], data.get("parents", SMPL_PARENTS))


def save_skeleton(path, rest_joints, parents=SMPL_PARENTS):
    payload = {"joints": np.asarray(rest_joints, dtype=float).tolist(), "parents": list(parents)}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def _as_vector(pose):
    if isinstance(pose, Pose):
        return pose.vector
    q = np.asarray(pose, dtype=float).reshape(-1)
    if q.shape != (POSE_DIM,):
        raise SchemaError(f"pose vector must have {POSE_DIM} entries, got {q.size}")
    return q


def fk_state(tree, q):
    """Joint positions plus the per-joint local and global rotations.

    ``q`` is a raw pose vector (75,) or a batch (B, 75); no canonicalization
    is applied. Returns ``(positions (..., N, 3), local (..., N, 3, 3),
    global (..., N, 3, 3))``.
    """
    q = np.asarray(q, dtype=float)
    n = tree.joint_count
    batch = q.shape[:-1]
    aa = np.concatenate([q[..., None, 0:3], q[..., 6:].reshape(batch + (n - 1, 3))], axis=-2)
    local = so3.exp_map(aa)
    glob = np.empty_like(local)
    pos = np.empty(batch + (n, 3))
    offsets = tree.local_offsets
    for j in tree.depth_order:
        p = tree.parents[j]
        if p < 0:
            glob[..., j, :, :] = local[..., j, :, :]
            pos[..., j, :] = tree.root_position + q[..., 3:6]
        else:
            glob[..., j, :, :] = glob[..., p, :, :] @ local[..., j, :, :]
            pos[..., j, :] = pos[..., p, :] + glob[..., p, :, :] @ offsets[j]
    return pos, local, glob


def forward_kinematics(tree, pose):
    """World positions of all joints, shape (N, 3)."""
    return fk_state(tree, _as_vector(pose))[0]


def joint_jacobian(tree, q):
    """Positions (N, 3) and their Jacobian (N, 3, 75) with respect to ``q``."""
    pos, _, glob = fk_state(tree, q)
    n = tree.joint_count
    jac = np.zeros((n, 3, POSE_DIM))
    jac[:, :, 3:6] = np.eye(3)
    desc = descendants_mask(tree)
    lj = so3.left_jacobian(np.vstack([q[None, 0:3], q[6:].reshape(n - 1, 3)]))
    for a in range(n):
        p = tree.parents[a]
        # world-frame rotation axes for the three coordinates of joint a
        axes = lj[a] if p < 0 else glob[p] @ lj[a]
        col = slice(0, 3) if a == 0 else slice(3 + 3 * a, 6 + 3 * a)
        idx = desc[a]
        lever = pos[idx] - pos[a]
        # d p_d / d w = -skew(p_d - p_a) @ axes
        jac[idx, :, col] = -so3.skew(lever) @ axes
    return pos, jac


def descendants_mask(tree):
    """Boolean (N, N) matrix; ``[a, d]`` is true when ``d`` is a strict descendant of ``a``."""
    cached = _DESC_CACHE.get(tree.parents)
    if cached is not None:
        return cached
    n = tree.joint_count
    mask = np.zeros((n, n), dtype=bool)
    for d in range(n):
        p = tree.parents[d]
        while p >= 0:
            mask[p, d] = True
            p = tree.parents[p]
    mask.setflags(write=False)
    _DESC_CACHE[tree.parents] = mask
    return mask


_DESC_CACHE = {}


def select_keypoints(joints):
    """The 12 evaluation keypoints from 24 joint positions.

    Output order: joints 15, 16, 17, 20, 21, 22, 2, 3, 6, 7, then the mean of
    joints 15 and 20, then the mean of joints 0, 1 and 5. Accepts leading batch
    dimensions, e.g. (T, 24, 3).
    """
    joints = np.asarray(joints, dtype=float)
    if joints.ndim < 2 or joints.shape[-2:] != (NUM_JOINTS, 3):
        raise InvalidInputError(f"expected (..., {NUM_JOINTS}, 3) joints, got {joints.shape}")
    return np.einsum("kj,...jc->...kc", KEYPOINT_MATRIX, joints)


def keypoints(tree, pose):
    return select_keypoints(forward_kinematics(tree, pose))


def transform_pose(pose, rotation, translation, tree=None):
    """Apply the world rigid motion ``p -> R p + t`` to every joint of ``pose``.

    ``tree`` supplies the rest root position the translation is relative to
    (origin when omitted).
    """
    rotation = so3.check_rotation(rotation)
    translation = np.asarray(translation, dtype=float)
    pose = pose if isinstance(pose, Pose) else Pose.from_vector(pose)
    rest_root = np.zeros(3) if tree is None else tree.root_position
    root_rot = rotation @ so3.exp_map(pose.root_orientation)
    new_trans = rotation @ (rest_root + pose.root_translation) + translation - rest_root
    return Pose(so3.log_map(root_rot), new_trans, pose.joint_angles)


def mean_joint_deviation(tree, pose_a, pose_b):
    """Mean Euclidean distance over all joints, meters."""
    a = forward_kinematics(tree, pose_a)
    b = forward_kinematics(tree, pose_b)
    return float(np.linalg.norm(a - b, axis=1).mean())
