"""Rigid-body primitives on SO(3) and SE(3).

Poses are 4x4 homogeneous matrices (any leading batch shape ``(..., 4, 4)``)
acting on column vectors. Camera frames follow the pinhole convention
x-right, y-down, z-forward, so a point in front of the camera has z > 0.
All angles are radians.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateRotation, SequenceTooShort

#: Norm threshold below which a 6D token is treated as corrupted.
DEGENERATE_EPS = 1e-8


def make_pose(rotation, translation) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=float)
    translation = np.asarray(translation, dtype=float)
    batch = np.broadcast_shapes(rotation.shape[:-2], translation.shape[:-1])
    out = np.zeros(batch + (4, 4))
    out[..., :3, :3] = rotation
    out[..., :3, 3] = translation
    out[..., 3, 3] = 1.0
    return out


def identity_pose(*batch: int) -> np.ndarray:
    return np.broadcast_to(np.eye(4), batch + (4, 4)).copy()


def rotation_of(pose) -> np.ndarray:
    return np.asarray(pose)[..., :3, :3]


def translation_of(pose) -> np.ndarray:
    return np.asarray(pose)[..., :3, 3]


def invert_pose(pose) -> np.ndarray:
    R = rotation_of(pose)
    t = translation_of(pose)
    Rt = np.swapaxes(R, -1, -2)
    return make_pose(Rt, -np.einsum("...ij,...j->...i", Rt, t))


def rot6d_encode(rotation) -> np.ndarray:
    """First two columns of ``rotation``, laid out as ``[a1, a2, a3, b1, b2, b3]``."""
    R = np.asarray(rotation, dtype=float)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot6d_decode(r6, eps: float = DEGENERATE_EPS) -> np.ndarray:
    """Gram-Schmidt a 6D token back into a rotation matrix.

    Raises:
        DegenerateRotation: if the first column is (near) zero or the two
            columns are (near) parallel.
    """
    r6 = np.asarray(r6, dtype=float)
    a, b = r6[..., :3], r6[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(~np.isfinite(r6)) or np.any(na <= eps):
        raise DegenerateRotation("first 6D column is zero or non-finite")
    c1 = a / na
    b_perp = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    nb = np.linalg.norm(b_perp, axis=-1, keepdims=True)
    if np.any(nb <= eps):
        raise DegenerateRotation("6D columns are parallel")
    c2 = b_perp / nb
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def geodesic_angle(R1, R2) -> np.ndarray:
    """Rotation angle of ``R1^T R2`` in [0, pi]."""
    R1 = np.asarray(R1, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    trace = np.sum(R1 * R2, axis=(-2, -1))
    return np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))


def pose_increment(p_k, p_k1) -> tuple[np.ndarray, np.ndarray]:
    """Translation difference and relative rotation ``R_k^T R_{k+1}``."""
    dt = translation_of(p_k1) - translation_of(p_k)
    dR = np.swapaxes(rotation_of(p_k), -1, -2) @ rotation_of(p_k1)
    return dt, dR


def apply_increment(p_k, dt, dR) -> np.ndarray:
    """Inverse of :func:`pose_increment`: rebuild ``p_{k+1}`` from ``p_k``."""
    return make_pose(rotation_of(p_k) @ dR, translation_of(p_k) + dt)


def increments(poses) -> tuple[np.ndarray, np.ndarray]:
    """Consecutive increments along axis -3 of a ``(..., K, 4, 4)`` stack."""
    poses = np.asarray(poses, dtype=float)
    return pose_increment(poses[..., :-1, :, :], poses[..., 1:, :, :])


def second_difference(dt, dR) -> tuple[np.ndarray, np.ndarray]:
    """Second increments from a sequence of first increments.

    Translation: ``dt[k+1] - dt[k]``. Rotation: ``dR[k]^T dR[k+1]``.
    Needs at least two increments (three poses).
    """
    dt = np.asarray(dt, dtype=float)
    dR = np.asarray(dR, dtype=float)
    if dt.shape[-2] < 2:
        raise SequenceTooShort("second differences need at least 3 poses")
    d2t = dt[..., 1:, :] - dt[..., :-1, :]
    d2R = np.swapaxes(dR[..., :-1, :, :], -1, -2) @ dR[..., 1:, :, :]
    return d2t, d2R


def reexpress_in_anchor(pose_in_cam_t, cam_t_to_world, cam_anchor_to_world) -> np.ndarray:
    """Map a pose observed in camera ``t`` into the anchor camera frame."""
    return invert_pose(cam_anchor_to_world) @ np.asarray(cam_t_to_world) @ np.asarray(pose_in_cam_t)


def pose_to_vec9(pose) -> np.ndarray:
    """``[x, y, z, a1, a2, a3, b1, b2, b3]`` serialization of a pose."""
    return np.concatenate([translation_of(pose), rot6d_encode(rotation_of(pose))], axis=-1)


def pose_from_vec9(vec) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    return make_pose(rot6d_decode(vec[..., 3:]), vec[..., :3])


def axis_angle_matrix(axis, angle) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def random_rotations(rng: np.random.Generator, n: int) -> np.ndarray:
    """Haar-uniform rotations from normalized Gaussian quaternions."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )
