"""Rotation/pose math: exp and log maps on SO(3), rotation representation
codecs, and the translation + geodesic pose distance.

Conventions fixed here and relied on everywhere else:

- Rotations are 3x3 right-handed orthonormal matrices (float64).
- Rotation vectors (so(3) coordinates) are axis * angle with ||w|| <= pi.
- Euler encoding is intrinsic ZYX: R = Rz(a) @ Ry(b) @ Rx(c).
- Serialized poses are translation (3 float64, meters) plus a unit
  quaternion in wxyz order with the sign normalized so w >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidInput

ORTHONORMALITY_TOL = 1e-9
# Below this margin of trace above -1 the standard log-map formula loses
# precision; switch to off-diagonal axis extraction.
NEAR_PI_TRACE_MARGIN = 1e-6
_SMALL_ANGLE = 1e-7


def check_rotation(matrix: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Validate and return a rotation matrix as a float64 array.

    `tol` is deliberately looser than the construction-time invariant so
    matrices that went through a few floating-point round trips still pass.
    """
    R = np.asarray(matrix, dtype=np.float64)
    if R.shape != (3, 3):
        raise InvalidInput(f"rotation must be 3x3, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise InvalidInput("rotation contains non-finite entries")
    if not np.allclose(R.T @ R, np.eye(3), atol=tol):
        raise InvalidInput("matrix is not orthonormal within tolerance")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise InvalidInput("matrix determinant is not +1 within tolerance")
    return R


@dataclass(frozen=True)
class GraspPose:
    """Rigid transform of the gripper frame expressed in the object frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise InvalidInput("translation contains non-finite entries")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)


class ReprKind(str, Enum):
    LIE_ALGEBRA = "lie_algebra"
    EULER = "euler"
    SIXD = "sixd"


REPR_WIDTH = {ReprKind.LIE_ALGEBRA: 3, ReprKind.EULER: 3, ReprKind.SIXD: 6}


@dataclass(frozen=True)
class RotationRepr:
    """Rotation coordinates scaled into [-1, 1] for network consumption."""

    kind: ReprKind
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.shape[0] != REPR_WIDTH[self.kind]:
            raise InvalidInput(
                f"{self.kind.value} repr needs {REPR_WIDTH[self.kind]} values, got {v.shape[0]}"
            )
        object.__setattr__(self, "values", v)


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_map_so3(omega: np.ndarray) -> np.ndarray:
    """Rodrigues exponential so(3) -> SO(3).

    Small angles use the Taylor expansion of the sin/cos coefficients so the
    formula stays exact as ||omega|| -> 0.
    """
    w = np.asarray(omega, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(w)):
        raise InvalidInput("rotation vector contains non-finite entries")
    theta2 = float(w @ w)
    W = skew(w)
    if theta2 < _SMALL_ANGLE**2:
        # sin(t)/t and (1-cos t)/t^2 to second order in t^2
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    else:
        theta = math.sqrt(theta2)
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    return np.eye(3) + a * W + b * (W @ W)


def log_map_so3(R: np.ndarray) -> np.ndarray:
    """Log map SO(3) -> so(3), output in the canonical ball ||w|| <= pi.

    Three branches: small-angle series, the generic formula, and the
    angle-near-pi case where (R - R^T) nearly vanishes and the axis must be
    recovered from the off-diagonal entries of (R + I)/2 instead.
    """
    R = check_rotation(R)
    trace = float(np.trace(R))
    cos_angle = max(-1.0, min(1.0, (trace - 1.0) / 2.0))
    angle = math.acos(cos_angle)
    antisym = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])

    if trace <= -1.0 + NEAR_PI_TRACE_MARGIN:
        # Near pi the trace-based angle saturates (acos conditioning), but
        # ||antisym||/2 = sin(angle) still resolves the gap to pi exactly.
        gap = math.asin(min(1.0, float(np.linalg.norm(antisym)) / 2.0))
        angle = math.pi - gap
        # The symmetric part (R + R^T)/2 = I cos(t) + (1-cos t) nn^T cancels
        # the sin(t) K term, so nn^T is recovered with full precision where
        # the generic formula degrades.
        S = (R + R.T) / 2.0
        M = (S - cos_angle * np.eye(3)) / (1.0 - cos_angle)
        i = int(np.argmax(np.diag(M)))
        axis = M[:, i] / math.sqrt(max(M[i, i], 1e-300))
        axis = axis / np.linalg.norm(axis)
        # Resolve the sign from the antisymmetric part when it is non-zero;
        # at exactly pi pick the first non-zero component positive.
        if np.linalg.norm(antisym) > 1e-12:
            if float(axis @ antisym) < 0.0:
                axis = -axis
        else:
            for c in axis:
                if abs(c) > 1e-12:
                    if c < 0.0:
                        axis = -axis
                    break
        return angle * axis

    if angle < _SMALL_ANGLE:
        # w = antisym/2 * (1 + theta^2/6 + ...); the correction is below
        # double precision at this angle.
        return antisym / 2.0

    return (angle / (2.0 * math.sin(angle))) * antisym


def rotation_angle_between(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, equal to ||log(Ra^T Rb)||.

    Computed through the chordal form ||Ra - Rb||_F = 2 sqrt(2) sin(t/2):
    exactly zero for identical inputs and well conditioned near zero, where
    the trace formula loses precision.
    """
    chord = float(np.linalg.norm(np.asarray(Ra) - np.asarray(Rb)))
    return 2.0 * math.asin(min(1.0, chord / (2.0 * math.sqrt(2.0))))


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation from the identity."""
    return rotation_angle_between(np.asarray(R), np.eye(3))


def pose_distance(a: GraspPose, b: GraspPose) -> float:
    """||t_a - t_b|| + geodesic angle between the rotations (meters + radians)."""
    dt = float(np.linalg.norm(a.translation - b.translation))
    return dt + rotation_angle_between(a.rotation, b.rotation)


# ---------------------------------------------------------------------------
# Rotation representation codecs
# ---------------------------------------------------------------------------


def _euler_zyx_from_matrix(R: np.ndarray) -> np.ndarray:
    # R = Rz(a) Ry(b) Rx(c); at gimbal lock (|cos b| ~ 0) the split between
    # a and c is not unique -- pick c = 0, which is a valid encoding.
    sb = -R[2, 0]
    sb = max(-1.0, min(1.0, sb))
    b = math.asin(sb)
    if abs(math.cos(b)) < 1e-9:
        c = 0.0
        a = math.atan2(-R[0, 1], R[1, 1])
    else:
        c = math.atan2(R[2, 1], R[2, 2])
        a = math.atan2(R[1, 0], R[0, 0])
    return np.array([a, b, c])


def _euler_zyx_to_matrix(angles: np.ndarray) -> np.ndarray:
    a, b, c = angles
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    cc, sc = math.cos(c), math.sin(c)
    Rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cc, -sc], [0.0, sc, cc]])
    return Rz @ Ry @ Rx


def gram_schmidt_sixd(values: np.ndarray) -> np.ndarray:
    """Decode two stacked column vectors into an orthonormal right-handed
    matrix. Tolerates perturbed inputs; the third column is a cross product,
    so the result is right-handed by construction."""
    v = np.asarray(values, dtype=np.float64).reshape(6)
    a, b = v[:3], v[3:]
    na = np.linalg.norm(a)
    if na < 1e-12:
        raise InvalidInput("first column of sixd repr is numerically zero")
    c0 = a / na
    b = b - (b @ c0) * c0
    nb = np.linalg.norm(b)
    if nb < 1e-12:
        raise InvalidInput("sixd repr columns are numerically collinear")
    c1 = b / nb
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=1)


def rotation_to_repr(R: np.ndarray, kind: ReprKind) -> RotationRepr:
    """Encode a rotation into [-1, 1]-scaled coordinates.

    Lie-algebra and Euler coordinates are divided by pi; the two matrix
    columns of the sixd encoding are already unit vectors and pass unscaled.
    """
    R = check_rotation(R)
    kind = ReprKind(kind)
    if kind is ReprKind.LIE_ALGEBRA:
        return RotationRepr(kind, log_map_so3(R) / math.pi)
    if kind is ReprKind.EULER:
        return RotationRepr(kind, _euler_zyx_from_matrix(R) / math.pi)
    return RotationRepr(kind, np.concatenate([R[:, 0], R[:, 1]]))


def repr_to_rotation(repr_: RotationRepr) -> np.ndarray:
    """Decode network coordinates back to a valid rotation matrix.

    Off-manifold values (as produced mid-diffusion) are accepted: sixd goes
    through Gram-Schmidt, the other two kinds through the exp map / Euler
    composition which are total functions.
    """
    kind = ReprKind(repr_.kind)
    v = repr_.values
    if kind is ReprKind.LIE_ALGEBRA:
        return exp_map_so3(v * math.pi)
    if kind is ReprKind.EULER:
        return _euler_zyx_to_matrix(v * math.pi)
    return gram_schmidt_sixd(v)


# ---------------------------------------------------------------------------
# Quaternion serialization (wire format for pose records)
# ---------------------------------------------------------------------------


def rotation_to_quat_wxyz(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0, via Shepperd's method."""
    R = check_rotation(R)
    t = np.trace(R)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quat_wxyz_to_rotation(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if n < 1e-12 or not np.all(np.isfinite(q)):
        raise InvalidInput("quaternion is degenerate")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform (Haar) random rotation via a normalized Gaussian quaternion."""
    q = rng.normal(size=4)
    return quat_wxyz_to_rotation(q / np.linalg.norm(q))


def pose_to_record(pose: GraspPose) -> dict:
    """Pose as the serializable dict used in grasp-set files."""
    q = rotation_to_quat_wxyz(pose.rotation)
    return {"quat_wxyz": [float(v) for v in q], "trans": [float(v) for v in pose.translation]}


def pose_from_record(rec: dict) -> GraspPose:
    return GraspPose(quat_wxyz_to_rotation(np.array(rec["quat_wxyz"])), np.array(rec["trans"]))
