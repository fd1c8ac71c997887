"""Rotation utilities: axis rotations, chordal quaternion mean, Euler angles.

Euler angles follow the heading-x / attitude-y / bank-z convention used for
reporting: intrinsic rotations about x, then y, then z, so that
``R = Rx(heading) @ Ry(attitude) @ Rz(bank)``.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.spatial.transform import Rotation

EULER_SEQ = "XYZ"
EULER_TAG = "intrinsic-XYZ (heading-x, attitude-y, bank-z)"
GIMBAL_MARGIN_DEG = 0.1


def rot_x(deg: float) -> np.ndarray:
    return Rotation.from_euler("x", deg, degrees=True).as_matrix()


def rot_y(deg: float) -> np.ndarray:
    return Rotation.from_euler("y", deg, degrees=True).as_matrix()


def rot_z(deg: float) -> np.ndarray:
    return Rotation.from_euler("z", deg, degrees=True).as_matrix()


def from_euler(angles_deg) -> np.ndarray:
    return Rotation.from_euler(EULER_SEQ, angles_deg, degrees=True).as_matrix()


def to_euler(R: np.ndarray) -> np.ndarray:
    """Heading, attitude, bank in degrees.  At gimbal lock the bank is set to
    zero; callers check :func:`near_gimbal` themselves."""
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Gimbal lock")
        return Rotation.from_matrix(R).as_euler(EULER_SEQ, degrees=True)


def near_gimbal(R: np.ndarray, margin_deg: float = GIMBAL_MARGIN_DEG) -> bool:
    # attitude = asin(R[0, 2]) for intrinsic XYZ
    att = np.degrees(np.arcsin(np.clip(R[0, 2], -1.0, 1.0)))
    return bool(abs(abs(att) - 90.0) <= margin_deg)


def is_rotation(R: np.ndarray, atol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    return R.shape == (3, 3) and np.allclose(R.T @ R, np.eye(3), atol=atol) and np.linalg.det(R) > 0


def mean_rotation(rotations) -> np.ndarray:
    """Chordal mean: normalized average of sign-aligned unit quaternions.

    Quaternions are first put on the hemisphere of the dominant eigenvector
    of ``sum(q q^T)``, which depends on neither input order nor input
    signs.
    """
    mats = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    if len(mats) == 0:
        raise ValueError("mean of an empty rotation set")
    q = Rotation.from_matrix(mats).as_quat()  # (x, y, z, w)
    if len(q) == 1:
        return mats[0].copy()
    _, vecs = np.linalg.eigh(q.T @ q)
    axis = vecs[:, -1]
    signs = np.where(q @ axis < 0, -1.0, 1.0)
    avg = (q * signs[:, None]).sum(axis=0)
    avg /= np.linalg.norm(avg)
    return Rotation.from_quat(avg).as_matrix()
