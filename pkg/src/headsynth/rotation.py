"""Axis-angle and Euler rotation helpers.

Conventions used across the package:
  * rotation vectors are axis * angle (radians), angle < pi
  * euler triples (pitch, yaw, roll) compose as Rz(roll) @ Ry(yaw) @ Rx(pitch),
    i.e. pitch about +x first, then yaw about +y, then roll about +z
  * all frames are right-handed
"""

from __future__ import annotations

import numpy as np


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix K such that K @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_matrix(rotvec: np.ndarray) -> np.ndarray:
    """Rodrigues formula mapping an axis-angle vector to a 3x3 matrix."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    theta = float(np.linalg.norm(rotvec))
    if theta < 1e-12:
        # second-order Taylor expansion keeps the map smooth through zero
        k = skew(rotvec)
        return np.eye(3) + k + 0.5 * (k @ k)
    k = skew(rotvec / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rotation_vector(mat: np.ndarray) -> np.ndarray:
    """Inverse of rotation_matrix for angles in [0, pi)."""
    mat = np.asarray(mat, dtype=np.float64)
    cos = np.clip((np.trace(mat) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos))
    antisym = np.array(
        [mat[2, 1] - mat[1, 2], mat[0, 2] - mat[2, 0], mat[1, 0] - mat[0, 1]]
    )
    if theta < 1e-7:
        return antisym / 2.0
    if theta > np.pi - 1e-6:
        # near pi the antisymmetric part degenerates; recover |axis| from the
        # diagonal (R_ii = 2 k_i^2 - 1 at pi) and signs from off-diagonals
        mags = np.sqrt(np.maximum(0.0, (np.diag(mat) + 1.0) / 2.0))
        i = int(np.argmax(mags))
        axis = mags.copy()
        for j in range(3):
            if j != i:
                axis[j] = mags[j] * np.sign(mat[i, j] + mat[j, i])
        # antisymmetric part still carries the sign for theta slightly below pi
        if np.linalg.norm(antisym) > 1e-8 and np.dot(antisym, axis) < 0:
            axis = -axis
        return axis * theta
    return antisym / (2.0 * np.sin(theta)) * theta


def euler_matrix(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Compose Rz(roll) @ Ry(yaw) @ Rx(pitch)."""
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cr, sr = np.cos(roll), np.sin(roll)
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]], dtype=np.float64)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=np.float64)
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]], dtype=np.float64)
    return rz @ ry @ rx


def euler_to_rotvec(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Axis-angle vector of the composed euler rotation."""
    return rotation_vector(euler_matrix(pitch, yaw, roll))
