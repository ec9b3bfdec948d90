"""Joint parameterization, forward kinematics and screw algebra.

A joint is ``(type, origin, axis, range)``; the range ``(m_min, m_max)`` is in
radians for revolute/continuous joints and meters for prismatic ones.  The
state index ``t`` in ``[0, 1]`` interpolates linearly between the two limits,
so ``t = 0`` is the closed state and ``t = 1`` the fully opened one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

TWO_PI = 2.0 * math.pi
UNIT_TOL = 1e-9
ANGLE_EPS = 1e-6
TRANSLATION_EPS = 1e-9
# Components at or below this magnitude are skipped when choosing the axis
# hemisphere, so that near axis-aligned estimates agree with their exact
# counterparts.
CANONICAL_TOL = 0.25


class KinematicsError(ValueError):
    pass


class UnsupportedJointTypeError(KinematicsError):
    pass


class DegenerateAxisError(KinematicsError):
    pass


class RangeDomainError(KinematicsError):
    pass


class JointType(IntEnum):
    FIXED = 0
    REVOLUTE = 1
    CONTINUOUS = 2
    PRISMATIC = 3
    RESERVED_4 = 4
    RESERVED_5 = 5
    RESERVED_6 = 6

    @property
    def is_reserved(self) -> bool:
        return self.value >= 4

    @property
    def is_kinematic(self) -> bool:
        return self.value >= 1

    @property
    def is_angular(self) -> bool:
        return self in (JointType.REVOLUTE, JointType.CONTINUOUS)

    @classmethod
    def from_code(cls, code: int, permissive: bool = False) -> "JointType":
        try:
            jt = cls(int(code))
        except ValueError:
            raise UnsupportedJointTypeError(f"joint type code {code!r} outside 0..6") from None
        if jt.is_reserved and not permissive:
            raise UnsupportedJointTypeError(f"joint type code {jt.value} is reserved")
        return jt

    @classmethod
    def from_name(cls, name: str) -> "JointType":
        key = name.strip().lower()
        if key == "rotate":
            key = "revolute"
        try:
            return cls[key.upper()]
        except KeyError:
            raise UnsupportedJointTypeError(f"unknown joint type {name!r}") from None

    @property
    def urdf_name(self) -> str:
        return self.name.lower()


def is_kinematic(code: int) -> bool:
    """Pruning predicate: everything except ``fixed`` moves."""
    return int(code) >= 1


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis``."""
    k = np.asarray(axis, dtype=float)
    kx, ky, kz = k
    K = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    s, c = math.sin(angle), math.cos(angle)
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise KinematicsError("non-finite transform")
        if np.abs(R.T @ R - np.eye(3)).max() > UNIT_TOL or abs(np.linalg.det(R) - 1.0) > UNIT_TOL:
            raise KinematicsError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def distance(self, other: "RigidTransform") -> float:
        """Operator-norm distance between the two homogeneous matrices."""
        return float(np.linalg.norm(self.as_matrix() - other.as_matrix(), ord=2))


@dataclass(frozen=True)
class Joint:
    type: JointType
    origin: np.ndarray
    axis: np.ndarray
    range: tuple[float, float] = (0.0, 0.0)
    permissive: bool = False

    def __post_init__(self):
        jt = JointType.from_code(self.type, permissive=self.permissive)
        origin = _frozen(self.origin, (3,))
        axis = _frozen(self.axis, (3,))
        lo, hi = (float(v) for v in self.range)
        if not (np.all(np.isfinite(origin)) and np.all(np.isfinite(axis))
                and math.isfinite(lo) and math.isfinite(hi)):
            raise KinematicsError("joint parameters must be finite")
        norm = float(np.linalg.norm(axis))
        if jt.is_kinematic and abs(norm - 1.0) > UNIT_TOL:
            raise KinematicsError(f"joint axis must be unit length, got norm {norm:.3g}")
        if jt == JointType.FIXED:
            if norm != 0.0 and abs(norm - 1.0) > UNIT_TOL:
                raise KinematicsError("fixed joint axis must be zero or unit length")
            if lo != 0.0 or hi != 0.0:
                raise KinematicsError("fixed joints carry range (0, 0)")
        if lo > hi:
            raise KinematicsError(f"range lower {lo} exceeds upper {hi}")
        if jt.is_angular and (lo < -TWO_PI - 1e-12 or hi > TWO_PI + 1e-12):
            raise KinematicsError("angular range must lie within [-2pi, 2pi]")
        object.__setattr__(self, "type", jt)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "range", (lo, hi))

    @classmethod
    def fixed(cls, origin=(0.0, 0.0, 0.0)) -> "Joint":
        return cls(JointType.FIXED, origin, np.zeros(3), (0.0, 0.0))

    def motion_value(self, t: float) -> float:
        lo, hi = self.range
        return lo + float(t) * (hi - lo)

    def to_dict(self) -> dict:
        return {
            "type": int(self.type),
            "type_name": self.type.urdf_name,
            "origin": [float(v) for v in self.origin],
            "axis": [float(v) for v in self.axis],
            "range": [float(v) for v in self.range],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Joint":
        return cls(JointType.from_code(d["type"]), d["origin"], d["axis"], tuple(d["range"]))

    def equals(self, other: "Joint", tol: float = 1e-9) -> bool:
        return (self.type == other.type
                and np.allclose(self.origin, other.origin, atol=tol, rtol=0)
                and np.allclose(self.axis, other.axis, atol=tol, rtol=0)
                and np.allclose(self.range, other.range, atol=tol, rtol=0))


def _check_state(t: float) -> float:
    t = float(t)
    if not (0.0 <= t <= 1.0):
        raise KinematicsError(f"state index {t} outside [0, 1]")
    return t


def motion_transform(joint: Joint, m: float) -> RigidTransform:
    """Transform of ``joint`` at an explicit motion value ``m``."""
    if joint.type.is_reserved:
        raise UnsupportedJointTypeError(f"cannot pose reserved joint type {int(joint.type)}")
    if joint.type == JointType.FIXED:
        return RigidTransform.identity()
    if joint.type == JointType.PRISMATIC:
        return RigidTransform(np.eye(3), m * joint.axis)
    R = rotation_matrix(joint.axis, m)
    return RigidTransform(R, joint.origin - R @ joint.origin)


def pose_at(joint: Joint, t: float) -> RigidTransform:
    """Rigid pose of the child part at state index ``t``."""
    return motion_transform(joint, joint.motion_value(_check_state(t)))


@dataclass(frozen=True)
class ScrewParams:
    axis: np.ndarray
    pivot: np.ndarray
    angle: float
    slide: float
    near_half_turn: bool = False

    def __post_init__(self):
        axis = _frozen(self.axis, (3,))
        if abs(float(np.linalg.norm(axis)) - 1.0) > UNIT_TOL:
            raise KinematicsError("screw axis must be unit length")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "pivot", _frozen(self.pivot, (3,)))
        object.__setattr__(self, "angle", float(self.angle))
        object.__setattr__(self, "slide", float(self.slide))


def transform_from_screw(s: ScrewParams) -> RigidTransform:
    R = rotation_matrix(s.axis, s.angle)
    t = (np.eye(3) - R) @ s.pivot + s.slide * s.axis
    return RigidTransform(R, t)


def _vee(M: np.ndarray) -> np.ndarray:
    return np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])


def rotation_axis_angle(R: np.ndarray) -> tuple[np.ndarray, float]:
    """Axis and angle in ``[0, pi]`` of a rotation matrix.

    Below a quarter turn the axis comes from the skew part; beyond it from the
    symmetric part, whose conditioning improves as the angle approaches pi.
    The skew part then only fixes the sign.
    """
    w = _vee(R)
    s = 0.5 * float(np.linalg.norm(w))
    c = 0.5 * (float(np.trace(R)) - 1.0)
    angle = math.atan2(s, c)
    if angle < ANGLE_EPS:
        return np.array([0.0, 0.0, 1.0]), angle
    if c >= 0.0:
        return w / np.linalg.norm(w), angle
    B = 0.5 * (R + R.T) - c * np.eye(3)
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / math.sqrt(max(B[i, i] * (1.0 - c), 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ w < 0.0:
        axis = -axis
    return axis, angle


def screw_from_transform(T: RigidTransform, anchor=(0.0, 0.0, 0.0)) -> ScrewParams:
    """Decompose ``T`` into a screw motion.

    The pivot is the point of the screw axis closest to ``anchor``.  Rotations
    below ``ANGLE_EPS`` are reported as pure translations along ``t/|t|``.
    """
    anchor = np.asarray(anchor, dtype=float)
    t = T.translation
    axis, angle = rotation_axis_angle(T.rotation)
    if angle < ANGLE_EPS:
        norm = float(np.linalg.norm(t))
        if norm < TRANSLATION_EPS:
            return ScrewParams(np.array([0.0, 0.0, 1.0]), anchor, 0.0, 0.0)
        return ScrewParams(t / norm, anchor, 0.0, norm)
    slide = float(axis @ t)
    t_perp = t - slide * axis
    # closed form for (I - R) p = t_perp with p orthogonal to the axis
    p0 = 0.5 * (t_perp + np.cross(axis, t_perp) / math.tan(0.5 * angle))
    pivot = p0 + float((anchor - p0) @ axis) * axis
    near_pi = abs(angle - math.pi) < ANGLE_EPS
    return ScrewParams(axis, pivot, angle, slide, near_half_turn=near_pi)


def canonicalize_axis(axis, rng=(0.0, 0.0), tol: float = CANONICAL_TOL):
    """Resolve the ``(a, range) ~ (-a, -range)`` gauge.

    The returned axis has a positive first significant component in z, y, x
    priority order, where significant means ``|c| > tol``.
    """
    a = np.asarray(axis, dtype=float)
    norm = float(np.linalg.norm(a))
    if not norm > 0.0:
        raise DegenerateAxisError("cannot canonicalize a zero axis")
    # leave unit vectors alone so that canonicalizing twice changes nothing
    if abs(norm - 1.0) > 4.0 * np.finfo(float).eps:
        a = a / norm
    lo, hi = (float(v) for v in rng)
    for c in (a[2], a[1], a[0]):
        if abs(c) > tol:
            if c < 0.0:
                return -a, (-hi, -lo)
            break
    return a, (lo, hi)


def canonical_joint(joint: Joint, tol: float = CANONICAL_TOL) -> Joint:
    if not joint.type.is_kinematic or not np.any(joint.axis):
        return joint
    a, rng = canonicalize_axis(joint.axis, joint.range, tol)
    return Joint(joint.type, joint.origin, a, rng, permissive=joint.permissive)


def normalize_range(rng, joint_type, scale: float = 1.0) -> np.ndarray:
    """Map a motion range onto ``[0, 2]``.

    Angular ranges map ``[-360°, 360°]`` linearly; prismatic ranges map
    ``[-scale, scale]`` with ``scale`` the object's bounding-box diagonal.
    Fixed joints use the angular map.
    """
    m = np.asarray(rng, dtype=float)
    if JointType(int(joint_type)) == JointType.PRISMATIC:
        if not scale > 0.0:
            raise RangeDomainError("prismatic normalization needs a positive scale")
        if np.any(np.abs(m) > scale * (1.0 + 1e-12)):
            raise RangeDomainError(f"prismatic motion {m} exceeds scale {scale}")
        return (m + scale) / scale
    if np.any(np.abs(m) > TWO_PI + 1e-12):
        raise RangeDomainError(f"angular motion {m} outside [-2pi, 2pi]")
    return (np.degrees(m) + 360.0) / 360.0


def denormalize_range(n, joint_type, scale: float = 1.0) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if np.any(n < -1e-12) or np.any(n > 2.0 + 1e-12):
        raise RangeDomainError(f"normalized value {n} outside [0, 2]")
    if JointType(int(joint_type)) == JointType.PRISMATIC:
        if not scale > 0.0:
            raise RangeDomainError("prismatic normalization needs a positive scale")
        return n * scale - scale
    return np.radians(n * 360.0 - 360.0)


def line_angle(a, b) -> float:
    """Unsigned angle between two lines, in ``[0, pi/2]``; zero vectors count as orthogonal."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return math.pi / 2
    c = min(1.0, abs(float(a @ b)) / (na * nb))
    return math.acos(c)


def point_line_distance(p, origin, axis) -> float:
    d = np.asarray(p, dtype=float) - np.asarray(origin, dtype=float)
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    return float(np.linalg.norm(d - (d @ a) * a))
