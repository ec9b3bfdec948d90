"""A URDF subset: box links and revolute/continuous/prismatic/fixed joints.

Only ``robot``, ``link/visual/(origin, geometry/box)`` and
``joint/(origin, parent, child, axis, limit)`` are read.  Anything else is
skipped and reported in :attr:`UrdfModel.warnings`.  ``rpy`` is extrinsic
XYZ, as in the URDF convention.
"""
from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .kinematics import DegenerateAxisError, Joint, JointType, RigidTransform

DIGITS = 9
# relative error of a value printed with DIGITS significant digits
ROUNDING_RTOL = 0.5 * 10.0 ** (1 - DIGITS)


class UrdfError(ValueError):
    pass


class UrdfSyntaxError(UrdfError):
    """The text is not well-formed XML or lacks a ``robot`` root."""


class UrdfCycleError(UrdfError):
    pass


class UrdfDanglingLinkError(UrdfError):
    pass


class UrdfMissingLimitError(UrdfError):
    pass


class UrdfValidationError(UrdfError):
    pass


def _vec(values, n=3) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if len(out) != n or not all(math.isfinite(v) for v in out):
        raise UrdfValidationError(f"expected {n} finite numbers, got {values!r}")
    return out


@dataclass(frozen=True)
class Pose:
    xyz: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rpy: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "xyz", _vec(self.xyz))
        object.__setattr__(self, "rpy", _vec(self.rpy))

    @classmethod
    def from_transform(cls, T: RigidTransform) -> "Pose":
        rpy = Rotation.from_matrix(T.rotation).as_euler("xyz") if np.any(T.rotation != np.eye(3)) else (0, 0, 0)
        return cls(tuple(T.translation), tuple(rpy))

    def transform(self) -> RigidTransform:
        R = Rotation.from_euler("xyz", self.rpy).as_matrix()
        return RigidTransform(R, np.array(self.xyz))


@dataclass(frozen=True)
class BoxVisual:
    size: tuple[float, float, float]
    origin: Pose = Pose()

    def __post_init__(self):
        object.__setattr__(self, "size", _vec(self.size))
        if min(self.size) <= 0.0:
            raise UrdfValidationError(f"box size must be positive, got {self.size}")


@dataclass(frozen=True)
class UrdfLink:
    name: str
    visuals: tuple[BoxVisual, ...] = ()


@dataclass(frozen=True)
class UrdfJoint:
    name: str
    type: JointType
    parent: str
    child: str
    origin: Pose = Pose()
    axis: tuple[float, float, float] | None = None
    limit: tuple[float, float] | None = None


@dataclass
class UrdfModel:
    name: str
    links: list[UrdfLink]
    joints: list[UrdfJoint]
    warnings: list[str] = field(default_factory=list, compare=False)

    def link(self, name: str) -> UrdfLink:
        for lk in self.links:
            if lk.name == name:
                return lk
        raise UrdfDanglingLinkError(f"no link named {name!r}")

    @property
    def root(self) -> str:
        children = {j.child for j in self.joints}
        return next(lk.name for lk in self.links if lk.name not in children)

    def validate(self) -> "UrdfModel":
        names = [lk.name for lk in self.links]
        if not names:
            raise UrdfValidationError("a model needs at least one link")
        if len(set(names)) != len(names):
            raise UrdfValidationError("duplicate link names")
        if len({j.name for j in self.joints}) != len(self.joints):
            raise UrdfValidationError("duplicate joint names")
        known = set(names)
        parent_of: dict[str, str] = {}
        for j in self.joints:
            for end in (j.parent, j.child):
                if end not in known:
                    raise UrdfDanglingLinkError(f"joint {j.name!r} refers to unknown link {end!r}")
            if j.child in parent_of:
                raise UrdfCycleError(f"link {j.child!r} has more than one parent")
            parent_of[j.child] = j.parent
            _check_joint_fields(j)
        for start in names:
            seen, cur = {start}, start
            while cur in parent_of:
                cur = parent_of[cur]
                if cur in seen:
                    raise UrdfCycleError(f"joint graph has a cycle through link {cur!r}")
                seen.add(cur)
        roots = [n for n in names if n not in parent_of]
        if len(roots) != 1:
            raise UrdfValidationError(f"expected a single root link, found {roots}")
        return self

    def equals(self, other: "UrdfModel", rtol: float = ROUNDING_RTOL, atol: float = 1e-9) -> bool:
        """Structural equality with numeric fields compared within tolerance."""

        def close(a, b) -> bool:
            if a is None or b is None:
                return a is b
            return bool(np.allclose(a, b, rtol=rtol, atol=atol))

        def pose_close(p: Pose, q: Pose) -> bool:
            if not close(p.xyz, q.xyz):
                return False
            # compare orientations, not angle triples, near gimbal lock
            Rp = Rotation.from_euler("xyz", p.rpy).as_matrix()
            Rq = Rotation.from_euler("xyz", q.rpy).as_matrix()
            # each printed angle is off by up to rtol * pi, and matrix entries add the three
            return bool(np.allclose(Rp, Rq, rtol=0.0, atol=atol + 3.0 * math.pi * rtol))

        if self.name != other.name or len(self.links) != len(other.links) or len(self.joints) != len(other.joints):
            return False
        for a, b in zip(self.links, other.links):
            if a.name != b.name or len(a.visuals) != len(b.visuals):
                return False
            for va, vb in zip(a.visuals, b.visuals):
                if not (close(va.size, vb.size) and pose_close(va.origin, vb.origin)):
                    return False
        for a, b in zip(self.joints, other.joints):
            if (a.name, a.type, a.parent, a.child) != (b.name, b.type, b.parent, b.child):
                return False
            if not (pose_close(a.origin, b.origin) and close(a.axis, b.axis) and close(a.limit, b.limit)):
                return False
        return True


def _check_joint_fields(j: UrdfJoint) -> None:
    if j.type.is_reserved:
        raise UrdfValidationError(f"joint {j.name!r} has a reserved type")
    if j.type == JointType.FIXED:
        if j.axis is not None or j.limit is not None:
            raise UrdfValidationError(f"fixed joint {j.name!r} must carry neither axis nor limit")
        return
    if j.axis is None or not np.linalg.norm(j.axis) > 0.0:
        raise DegenerateAxisError(f"joint {j.name!r} needs a non-zero axis")
    if j.type == JointType.CONTINUOUS:
        if j.limit is not None:
            raise UrdfValidationError(f"continuous joint {j.name!r} must not carry a limit")
    elif j.limit is None:
        raise UrdfMissingLimitError(f"{j.type.urdf_name} joint {j.name!r} needs a limit")
    elif j.limit[0] > j.limit[1]:
        raise UrdfValidationError(f"joint {j.name!r} has lower limit above upper limit")


# ---------------------------------------------------------------------------
# parsing

def _floats(text: str | None, default, n=3) -> tuple[float, ...]:
    if text is None:
        return tuple(default)
    try:
        return _vec(text.split(), n)
    except ValueError as exc:
        raise UrdfValidationError(f"bad numeric attribute {text!r}") from exc


def _pose(elem) -> Pose:
    if elem is None:
        return Pose()
    return Pose(_floats(elem.get("xyz"), (0, 0, 0)), _floats(elem.get("rpy"), (0, 0, 0)))


LINK_CHILDREN = {"visual"}
JOINT_CHILDREN = {"origin", "parent", "child", "axis", "limit"}


def parse_urdf(text: str) -> UrdfModel:
    """Parse a URDF document into a validated :class:`UrdfModel`."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise UrdfSyntaxError(f"malformed XML: {exc}") from exc
    if root.tag != "robot":
        raise UrdfSyntaxError(f"root element must be <robot>, got <{root.tag}>")
    warnings: list[str] = []
    links, joints = [], []
    for elem in root:
        if elem.tag == "link":
            links.append(_parse_link(elem, warnings))
        elif elem.tag == "joint":
            joints.append(_parse_joint(elem, warnings))
        else:
            warnings.append(f"ignored <{elem.tag}> under <robot>")
    return UrdfModel(root.get("name", ""), links, joints, warnings).validate()


def _parse_link(elem, warnings) -> UrdfLink:
    name = elem.get("name")
    if not name:
        raise UrdfValidationError("link without a name")
    visuals = []
    for child in elem:
        if child.tag not in LINK_CHILDREN:
            warnings.append(f"ignored <{child.tag}> in link {name!r}")
            continue
        box = child.find("geometry/box")
        if box is None:
            warnings.append(f"ignored non-box visual in link {name!r}")
            continue
        visuals.append(BoxVisual(_floats(box.get("size"), None), _pose(child.find("origin"))))
    return UrdfLink(name, tuple(visuals))


def _parse_joint(elem, warnings) -> UrdfJoint:
    name = elem.get("name")
    if not name:
        raise UrdfValidationError("joint without a name")
    jt = JointType.from_name(elem.get("type", ""))
    for child in elem:
        if child.tag not in JOINT_CHILDREN:
            warnings.append(f"ignored <{child.tag}> in joint {name!r}")
    parent, child = elem.find("parent"), elem.find("child")
    if parent is None or child is None or not parent.get("link") or not child.get("link"):
        raise UrdfDanglingLinkError(f"joint {name!r} lacks a parent or child link")
    axis_el, limit_el = elem.find("axis"), elem.find("limit")
    axis = limit = None
    if jt == JointType.FIXED:
        if axis_el is not None or limit_el is not None:
            warnings.append(f"ignored axis/limit of fixed joint {name!r}")
    else:
        # URDF's default axis is x
        axis = _floats(None if axis_el is None else axis_el.get("xyz"), (1.0, 0.0, 0.0))
        norm = float(np.linalg.norm(axis))
        if norm == 0.0:
            raise DegenerateAxisError(f"joint {name!r} has a zero axis")
        axis = tuple(v / norm for v in axis)
        if jt == JointType.CONTINUOUS:
            if limit_el is not None:
                warnings.append(f"ignored limit of continuous joint {name!r}")
        elif limit_el is not None:
            limit = (float(limit_el.get("lower", 0.0)), float(limit_el.get("upper", 0.0)))
    return UrdfJoint(name, jt, parent.get("link"), child.get("link"), _pose(elem.find("origin")), axis, limit)


# ---------------------------------------------------------------------------
# emission

def _num(v: float) -> str:
    s = f"{float(v):.{DIGITS}g}"
    return "0" if s in ("-0", "0") else s


def _nums(vals) -> str:
    return " ".join(_num(v) for v in vals)


def _origin(p: Pose) -> str:
    return f'<origin xyz="{_nums(p.xyz)}" rpy="{_nums(p.rpy)}"/>'


def emit_urdf(model: UrdfModel) -> str:
    """Deterministic URDF text: model order, fixed attribute order, 9 significant digits."""
    model.validate()
    out = ['<?xml version="1.0" encoding="utf-8"?>', f'<robot name="{_escape(model.name)}">']
    for lk in model.links:
        if not lk.visuals:
            out.append(f'  <link name="{_escape(lk.name)}"/>')
            continue
        out.append(f'  <link name="{_escape(lk.name)}">')
        for v in lk.visuals:
            out += ["    <visual>", f"      {_origin(v.origin)}",
                    f'      <geometry><box size="{_nums(v.size)}"/></geometry>', "    </visual>"]
        out.append("  </link>")
    for j in model.joints:
        out += [f'  <joint name="{_escape(j.name)}" type="{j.type.urdf_name}">',
                f"    {_origin(j.origin)}",
                f'    <parent link="{_escape(j.parent)}"/>',
                f'    <child link="{_escape(j.child)}"/>']
        if j.axis is not None:
            out.append(f'    <axis xyz="{_nums(j.axis)}"/>')
        if j.limit is not None:
            out.append(f'    <limit lower="{_num(j.limit[0])}" upper="{_num(j.limit[1])}"/>')
        out.append("  </joint>")
    out.append("</robot>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


# ---------------------------------------------------------------------------
# conversion to and from articulated objects

BASE_LINK = "base"


def object_to_urdf(obj) -> UrdfModel:
    """One base link holding the static boxes plus one child link per movable part.

    Joint frames sit on the joint origin with the base orientation; each child
    box is stored relative to its joint frame at motion value zero.
    """
    links = [UrdfLink(BASE_LINK, tuple(_box_visual(b, np.zeros(3)) for b in obj.base))]
    joints = []
    for k, part in enumerate(obj.movable):
        j = part.joint
        name = part.box.name or f"part_{k}"
        child = f"link_{k}_{name}"
        links.append(UrdfLink(child, (_box_visual(part.box, j.origin),)))
        moving = j.type != JointType.FIXED
        joints.append(UrdfJoint(f"joint_{k}", j.type, BASE_LINK, child, Pose(tuple(j.origin)),
                                tuple(j.axis) if moving else None,
                                tuple(j.range) if moving and j.type != JointType.CONTINUOUS else None))
    return UrdfModel(f"{obj.category}_{obj.seed}", links, joints).validate()


def _box_visual(box, frame_origin) -> BoxVisual:
    T = RigidTransform(box.rotation, box.center - frame_origin)
    return BoxVisual(tuple(box.size), Pose.from_transform(T))


def _link_poses(model: UrdfModel) -> dict[str, RigidTransform]:
    """Root-frame pose of every link at zero joint values."""
    poses = {model.root: RigidTransform()}
    pending = list(model.joints)
    while pending:
        j = next(j for j in pending if j.parent in poses)
        pending.remove(j)
        poses[j.child] = poses[j.parent].compose(j.origin.transform())
    return poses


def urdf_joints(model: UrdfModel) -> list[Joint]:
    """Joints in the root frame, in document order."""
    poses = _link_poses(model)
    out = []
    for j in model.joints:
        T = poses[j.child]
        if j.type == JointType.FIXED:
            out.append(Joint.fixed(T.translation))
            continue
        axis = T.apply_vector(j.axis)
        rng = j.limit if j.limit is not None else (0.0, 2.0 * math.pi)
        out.append(Joint(j.type, T.translation, axis / np.linalg.norm(axis), rng))
    return out


def urdf_to_object(model: UrdfModel, category: str = "urdf", seed: int = 0):
    """Rebuild an articulated object; every moving link must hold exactly one box."""
    from .sim.objects import ArticulatedObject, Box, MovablePart

    poses = _link_poses(model)
    joint_of = {j.child: (j, jj) for j, jj in zip(model.joints, urdf_joints(model))}
    base, movable = [], []
    for lk in model.links:
        T = poses[lk.name]
        boxes = []
        for v in lk.visuals:
            B = T.compose(v.origin.transform())
            boxes.append(Box(B.translation, np.array(v.size), B.rotation, lk.name))
        entry = joint_of.get(lk.name)
        if entry is None or entry[1].type == JointType.FIXED:
            base += boxes
            continue
        if len(boxes) != 1:
            raise UrdfValidationError(f"moving link {lk.name!r} must hold exactly one box")
        movable.append(MovablePart(boxes[0], entry[1]))
    return ArticulatedObject(category, int(seed), base, movable)
