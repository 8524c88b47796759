"""Rotation algebra on SO(3).

Rotations are plain ``(3, 3)`` float arrays. Quaternions are ``(w, x, y, z)``
with the canonical sign ``w >= 0``. The stable axis of the placement plane is
world ``+z`` throughout.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

Z_AXIS = np.array([0.0, 0.0, 1.0])

# Below this cross-product norm the upright vector is treated as (anti)parallel to +z.
_PARALLEL_EPS = 1e-9
_UNIT_TOL = 1e-9
# 6D inputs whose second vector is within this relative angle of the first are rejected.
_PARALLEL_REL = 1e-12
GIMBAL_TOL = 1e-6


class DegenerateRotationError(ValueError):
    """Raised when input cannot define a rotation (zero or parallel vectors)."""


class Euler(NamedTuple):
    roll: float
    pitch: float
    yaw: float
    gimbal_lock: bool


def hat(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    ortho = np.max(np.abs(R @ R.T - np.eye(3)))
    return bool(ortho <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


def axis_angle_to_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues' formula. ``axis`` must already be a unit vector."""
    axis = np.asarray(axis, dtype=float)
    norm = float(np.linalg.norm(axis))
    if abs(norm - 1.0) > _UNIT_TOL:
        raise ValueError(f"rotation axis must be unit length, got norm {norm!r}")
    K = hat(axis)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def rotvec_to_matrix(rotvec) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=float)
    angle = float(np.linalg.norm(rotvec))
    if angle < 1e-300:
        return np.eye(3)
    return axis_angle_to_matrix(rotvec / angle, angle)


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(R) -> float:
    """Angle of ``R`` in ``[0, pi]``.

    Uses ``atan2`` of the skew and symmetric parts, which equals the clamped
    ``arccos((tr R - 1) / 2)`` for proper rotations but keeps full precision
    near 0 and pi.
    """
    R = np.asarray(R, dtype=float)
    cos_part = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    sin_part = 0.5 * math.sqrt(
        (R[2, 1] - R[1, 2]) ** 2 + (R[0, 2] - R[2, 0]) ** 2 + (R[1, 0] - R[0, 1]) ** 2
    )
    return math.atan2(sin_part, cos_part)


def trace_angle(trace: float) -> float:
    """The textbook form ``arccos((tr - 1) / 2)`` with the argument clamped to [-1, 1]."""
    return math.acos(min(1.0, max(-1.0, 0.5 * (trace - 1.0))))


def geodesic_distance(a, b) -> float:
    """Angle of the relative rotation ``a @ b.T``, in radians within ``[0, pi]``."""
    return rotation_angle(np.asarray(a, dtype=float) @ np.asarray(b, dtype=float).T)


def matrix_to_axis_angle(R) -> tuple[np.ndarray, float]:
    """Inverse of :func:`axis_angle_to_matrix` with angle in ``[0, pi]``."""
    R = np.asarray(R, dtype=float)
    angle = rotation_angle(R)
    if angle < 1e-12:
        return Z_AXIS.copy(), 0.0
    # Near pi the skew part vanishes; read the axis from the symmetric part.
    if angle > math.pi - 1e-6:
        S = 0.5 * (R + R.T) - math.cos(angle) * np.eye(3)
        col = S[:, int(np.argmax(np.diag(S)))]
        axis = col / np.linalg.norm(col)
        skew = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if skew @ axis < 0:
            axis = -axis
        return axis, angle
    skew = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return skew / np.linalg.norm(skew), angle


def ground_truth_rotation(upright) -> np.ndarray:
    """Shortest rotation taking the world-frame ``upright`` vector onto +z.

    The rotation axis is ``upright x z`` so that ``R @ upright == z``. An
    upright vector already along +z gives the identity; one along -z gives a
    half turn about +x.
    """
    v = np.asarray(upright, dtype=float)
    n = float(np.linalg.norm(v))
    if abs(n - 1.0) > _UNIT_TOL:
        raise ValueError(f"upright vector must be unit length, got norm {n!r}")
    axis = np.cross(v, Z_AXIS)
    s = float(np.linalg.norm(axis))
    c = float(v[2])
    if s < _PARALLEL_EPS:
        if c > 0:
            return np.eye(3)
        return rot_x(math.pi)
    return axis_angle_to_matrix(axis / s, math.atan2(s, c))


def upright_angle(R, upright=Z_AXIS) -> float:
    """Angle (radians) between ``R @ upright`` and +z."""
    w = np.asarray(R, dtype=float) @ np.asarray(upright, dtype=float)
    return math.atan2(math.hypot(w[0], w[1]), w[2])


# --- 6D representation -----------------------------------------------------

def sixd_to_matrix(sixd) -> np.ndarray:
    """Gram-Schmidt decode of two stacked 3-vectors into a rotation matrix.

    Column 1 is ``a1`` normalised, column 2 is ``a2`` with its column-1
    component removed, column 3 is their cross product.
    """
    s = np.asarray(sixd, dtype=float).reshape(6)
    a1, a2 = s[:3], s[3:]
    n1 = float(np.linalg.norm(a1))
    if not n1 > 0.0 or not math.isfinite(n1):
        raise DegenerateRotationError(f"6D first vector is zero or non-finite: {a1.tolist()}")
    b1 = a1 / n1
    u2 = a2 - (b1 @ a2) * b1
    n2 = float(np.linalg.norm(u2))
    n_a2 = float(np.linalg.norm(a2))
    if not n2 > _PARALLEL_REL * n_a2 or n_a2 == 0.0:
        raise DegenerateRotationError(
            f"6D vectors are parallel or a2 is zero: a1={a1.tolist()} a2={a2.tolist()}"
        )
    b2 = u2 / n2
    # A second pass removes the residual component left by cancellation when
    # a2 is nearly parallel to a1.
    b2 = b2 - (b1 @ b2) * b1
    b2 /= np.linalg.norm(b2)
    b3 = np.cross(b1, b2)
    return np.column_stack([b1, b2, b3])


def matrix_to_sixd(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[:, 0], R[:, 1]])


def orthonormalize(R) -> np.ndarray:
    """Project a nearly-orthonormal matrix back onto SO(3)."""
    return sixd_to_matrix(matrix_to_sixd(R))


# --- quaternions -----------------------------------------------------------

def canonical_quaternion(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    if q[0] < 0 or (q[0] == 0 and next((c for c in q[1:] if c != 0), 0.0) < 0):
        q = -q
    return q


def from_quaternion(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def to_quaternion(R) -> np.ndarray:
    """Shepperd's method; picks the largest diagonal term for stability."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    diag = (tr, R[0, 0], R[1, 1], R[2, 2])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return canonical_quaternion(q)


def quaternion_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quaternion_mean(quats) -> np.ndarray:
    """Sign-aligned arithmetic mean, renormalised. Exact for tight clusters."""
    quats = np.asarray(quats, dtype=float)
    ref = quats[0]
    signs = np.where(quats @ ref < 0, -1.0, 1.0)
    return canonical_quaternion((quats * signs[:, None]).sum(axis=0))


# --- Euler angles ------------------------------------------------------------
# Intrinsic Z-Y-X: R = Rz(yaw) @ Ry(pitch) @ Rx(roll).

def from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def to_euler(R) -> Euler:
    R = np.asarray(R, dtype=float)
    pitch = math.atan2(-R[2, 0], math.hypot(R[0, 0], R[1, 0]))
    locked = abs(abs(pitch) - math.pi / 2) < GIMBAL_TOL
    if locked:
        # Only yaw -/+ roll is observable; put it all into yaw.
        roll = 0.0
        yaw = math.atan2(-R[0, 1], R[1, 1])
    else:
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
    return Euler(roll, pitch, yaw, locked)


# --- sampling ------------------------------------------------------------------

def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniform unit quaternion from three uniform variates (Shoemake)."""
    u1, u2, u3 = rng.random(3)
    r1, r2 = math.sqrt(1.0 - u1), math.sqrt(u1)
    t1, t2 = 2.0 * math.pi * u2, 2.0 * math.pi * u3
    return canonical_quaternion([r2 * math.cos(t2), r1 * math.sin(t1), r1 * math.cos(t1), r2 * math.sin(t2)])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform random rotation."""
    return from_quaternion(random_quaternion(rng))


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


# --- swing-twist -----------------------------------------------------------------

def wrap_angle(a: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    a = math.remainder(a, 2.0 * math.pi)
    return math.pi if a == -math.pi else a


def swing_twist_z(R) -> tuple[float, np.ndarray]:
    """Factor ``R = rot_z(twist) @ tilt`` with the tilt axis in the xy-plane.

    Returns ``(twist, tilt)``. A half-turn about a horizontal axis has no
    well-defined twist and reports ``twist = 0``.
    """
    R = np.asarray(R, dtype=float)
    q = to_quaternion(R)
    w, z = q[0], q[3]
    if math.hypot(w, z) < 1e-12:
        return 0.0, R.copy()
    twist = wrap_angle(2.0 * math.atan2(z, w))
    tilt = rot_z(-twist) @ R
    return twist, tilt


def min_twist_angle(R) -> float:
    """Angle ``phi`` minimising the geodesic distance of ``rot_z(phi) @ R`` to I."""
    R = np.asarray(R, dtype=float)
    a, b = R[0, 1] - R[1, 0], R[0, 0] + R[1, 1]
    if abs(a) < 1e-15 and abs(b) < 1e-15:
        return 0.0
    return math.atan2(a, b)
