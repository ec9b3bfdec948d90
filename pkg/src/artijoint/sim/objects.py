"""Procedural box-composed articulated objects.

Object frame: z up, the front of every object faces +y, the footprint is
centred on the origin and the object stands on z = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..kinematics import Joint, JointType, RigidTransform, pose_at

K_MAX = 16
WALL = 0.02
PANEL = 0.02

CATEGORIES = (
    "cabinet_door",
    "drawer_unit",
    "laptop_lid",
    "microwave",
    "trashcan_lid",
    "multi_joint_mixed",
)


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    size: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    name: str = ""

    def __post_init__(self):
        for attr, shape in (("center", (3,)), ("size", (3,)), ("rotation", (3, 3))):
            arr = np.array(getattr(self, attr), dtype=float).reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        if np.any(self.size <= 0.0):
            raise ValueError(f"box {self.name!r} has non-positive extent {self.size}")

    def transformed(self, T: RigidTransform) -> "Box":
        return Box(T.apply(self.center), self.size, T.rotation @ self.rotation, self.name)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
        return self.center + (signs * 0.5 * self.size) @ self.rotation.T


@dataclass(frozen=True)
class MovablePart:
    box: Box
    joint: Joint


@dataclass(frozen=True)
class ArticulatedObject:
    category: str
    seed: int
    base: tuple[Box, ...]
    movable: tuple[MovablePart, ...]
    # azimuth/elevation (degrees) of the intended viewing direction
    view: tuple[float, float] = (30.0, 30.0)
    # pose of the object's own frame; global rigid motions compose onto it
    frame: RigidTransform = field(default_factory=RigidTransform.identity, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(self.base))
        object.__setattr__(self, "movable", tuple(self.movable))
        if len(self.movable) > K_MAX:
            raise ValueError(f"at most {K_MAX} joints supported")

    @property
    def joints(self) -> list[Joint]:
        return [m.joint for m in self.movable]

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """Closed-state bounds, axis-aligned in the object's own frame."""
        pts = np.concatenate([b.corners() for b in self.posed_boxes()[0]])
        pts = self.frame.inverse().apply(pts)
        return pts.min(axis=0), pts.max(axis=0)

    @property
    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def posed_boxes(self, states=None) -> tuple[list[Box], np.ndarray]:
        """Boxes at the given per-joint states plus their part ids (base = 0)."""
        if states is None:
            states = np.zeros(len(self.movable))
        states = np.asarray(states, dtype=float).reshape(-1)
        if len(states) != len(self.movable):
            raise ValueError(f"expected {len(self.movable)} joint states, got {len(states)}")
        boxes = list(self.base)
        ids = [0] * len(self.base)
        for i, (part, t) in enumerate(zip(self.movable, states)):
            # rest geometry is stored at motion value 0, where the transform is identity
            boxes.append(part.box.transformed(pose_at(part.joint, t)))
            ids.append(i + 1)
        return boxes, np.asarray(ids, dtype=np.int64)

    def baked(self, states) -> "ArticulatedObject":
        """Clone with the joint poses at ``states`` folded into the geometry."""
        boxes, ids = self.posed_boxes(states)
        base = [b for b, i in zip(boxes, ids) if i == 0]
        moved = [MovablePart(b, j) for b, i, j in
                 zip(boxes[len(self.base):], ids[len(self.base):], self.joints)]
        frozen = [MovablePart(m.box, Joint(m.joint.type, m.joint.origin, m.joint.axis, (0.0, 0.0))
                              if m.joint.type != JointType.FIXED else m.joint) for m in moved]
        return ArticulatedObject(self.category, self.seed, base, frozen, self.view, self.frame)

    def transformed(self, T: RigidTransform) -> "ArticulatedObject":
        """Apply one global rigid transform to geometry and joints."""
        base = [b.transformed(T) for b in self.base]
        moved = []
        for m in self.movable:
            j = m.joint
            axis = T.apply_vector(j.axis) if np.any(j.axis) else j.axis
            moved.append(MovablePart(m.box.transformed(T),
                                     Joint(j.type, T.apply(j.origin), axis, j.range)))
        return ArticulatedObject(self.category, self.seed, base, moved, self.view, T.compose(self.frame))


def _box(cx, cy, cz, sx, sy, sz, name="") -> Box:
    return Box(np.array([cx, cy, cz]), np.array([sx, sy, sz]), name=name)


def _shell(W, D, H, *, open_front=True, open_top=False, z0=0.0, prefix="body") -> list[Box]:
    """Hollow carcass; the front (and optionally top) face is left open."""
    w = WALL
    boxes = [
        _box(0.0, -D / 2 + w / 2, z0 + H / 2, W, w, H, f"{prefix}_back"),
        _box(-W / 2 + w / 2, w / 2, z0 + H / 2, w, D - w, H, f"{prefix}_left"),
        _box(W / 2 - w / 2, w / 2, z0 + H / 2, w, D - w, H, f"{prefix}_right"),
        _box(0.0, w / 2, z0 + w / 2, W - 2 * w, D - w, w, f"{prefix}_bottom"),
    ]
    if not open_top:
        boxes.append(_box(0.0, w / 2, z0 + H - w / 2, W - 2 * w, D - w, w, f"{prefix}_top"))
    if not open_front:
        boxes.append(_box(0.0, D / 2 - w / 2, z0 + H / 2, W - 2 * w, w, H - 2 * w, f"{prefix}_front"))
    return boxes


def _angle(rng) -> float:
    return math.radians(rng.uniform(40.0, 170.0))


def _vertical_door(x_hinge, side, width, D, z0, height, theta, name) -> MovablePart:
    """Overlay door whose back edge at ``x_hinge`` is the hinge; ``side`` is +1 for a left hinge."""
    cx = x_hinge + side * width / 2
    box = _box(cx, D / 2 + PANEL / 2, z0 + height / 2, width, PANEL, height, name)
    axis = np.array([0.0, 0.0, 1.0 if side > 0 else -1.0])
    joint = Joint(JointType.REVOLUTE, [x_hinge, D / 2, z0 + height / 2], axis, (0.0, theta))
    return MovablePart(box, joint)


def _top_lid(W, D, z_top, thickness, theta, name) -> MovablePart:
    box = _box(0.0, 0.0, z_top + thickness / 2, W, D, thickness, name)
    joint = Joint(JointType.REVOLUTE, [0.0, -D / 2, z_top], [1.0, 0.0, 0.0], (0.0, theta))
    return MovablePart(box, joint)


def _drawer_stack(x0, x1, D, z_bottom, n, slot_h, rng, prefix="drawer"):
    """Drawers stacked bottom-up inside a carcass section, plus their dividers."""
    dividers, parts = [], []
    clear = 0.006
    width = x1 - x0
    depth = D - WALL - clear
    for k in range(n):
        z_lo = z_bottom + WALL + k * (slot_h + WALL)
        if k > 0:
            dividers.append(_box((x0 + x1) / 2, WALL / 2, z_lo - WALL / 2, width, D - WALL, WALL,
                                 f"{prefix}_rail{k}"))
        h = slot_h - 2 * clear
        cz = z_lo + slot_h / 2
        box = _box((x0 + x1) / 2, D / 2 - depth / 2, cz, width - 2 * clear, depth, h, f"{prefix}{k}")
        slide = rng.uniform(0.3, 0.9) * depth
        joint = Joint(JointType.PRISMATIC, [(x0 + x1) / 2, D / 2, cz], [0.0, 1.0, 0.0], (0.0, slide))
        parts.append(MovablePart(box, joint))
    return dividers, parts


def _cabinet_door(rng, seed):
    W, D, H = rng.uniform(0.4, 0.8), rng.uniform(0.35, 0.6), rng.uniform(0.5, 1.0)
    base = _shell(W, D, H)
    if rng.uniform() < 0.5:
        base.append(_box(0.0, WALL / 2, rng.uniform(0.35, 0.65) * H, W - 2 * WALL, D - WALL, WALL, "shelf"))
    hinge = rng.choice(["left", "right", "bottom"], p=[0.4, 0.4, 0.2])
    theta = _angle(rng)
    if hinge == "bottom":
        box = _box(0.0, D / 2 + PANEL / 2, H / 2, W, PANEL, H, "door")
        door = MovablePart(box, Joint(JointType.REVOLUTE, [0.0, D / 2, 0.0], [-1.0, 0.0, 0.0], (0.0, theta)))
        view = (rng.uniform(-20, 20), rng.uniform(25, 35))
    else:
        side = 1 if hinge == "left" else -1
        door = _vertical_door(-side * W / 2, side, W, D, 0.0, H, theta, "door")
        view = (side * rng.uniform(25, 40), rng.uniform(20, 35))
    return base, [door], view


def _microwave(rng, seed):
    W, D, H = rng.uniform(0.45, 0.6), rng.uniform(0.3, 0.45), rng.uniform(0.25, 0.35)
    base = _shell(W, D, H)
    panel_w = 0.25 * W
    base.append(_box(W / 2 - panel_w / 2, D / 2 + PANEL / 2, H / 2, panel_w, PANEL, H, "panel"))
    door = _vertical_door(-W / 2, 1, W - panel_w, D, 0.0, H, _angle(rng), "door")
    return base, [door], (rng.uniform(25, 40), rng.uniform(20, 35))


def _trashcan_lid(rng, seed):
    W, D, H = rng.uniform(0.25, 0.4), rng.uniform(0.25, 0.4), rng.uniform(0.4, 0.7)
    base = _shell(W, D, H, open_front=False, open_top=True)
    lid = _top_lid(W, D, H, PANEL, _angle(rng), "lid")
    return base, [lid], (rng.uniform(-30, 30), rng.uniform(35, 50))


def _laptop_lid(rng, seed):
    W, D = rng.uniform(0.3, 0.4), rng.uniform(0.2, 0.28)
    h = 0.02
    base = [_box(0.0, 0.0, h / 2, W, D, h, "base")]
    lid = _top_lid(W, D, h, PANEL, _angle(rng), "lid")
    return base, [lid], (rng.uniform(-35, 35), rng.uniform(30, 45))


def _drawer_unit(rng, seed):
    W, D = rng.uniform(0.4, 0.7), rng.uniform(0.35, 0.55)
    n = int(rng.integers(1, 4))
    slot_h = rng.uniform(0.15, 0.25)
    H = n * slot_h + (n + 1) * WALL
    base = _shell(W, D, H)
    rails, drawers = _drawer_stack(-W / 2 + WALL, W / 2 - WALL, D, 0.0, n, slot_h, rng)
    return base + rails, drawers, (rng.uniform(-25, 25), rng.uniform(25, 40))


def _multi_joint_mixed(rng, seed):
    W, D = rng.uniform(0.8, 1.1), rng.uniform(0.4, 0.55)
    if rng.uniform() < 0.6:
        # door on the left section, drawers on the right, optional chest lid
        H = rng.uniform(0.6, 0.9)
        with_lid = rng.uniform() < 0.5
        base = _shell(W, D, H, open_top=with_lid)
        split = rng.uniform(-0.1, 0.1) * W
        base.append(_box(split, WALL / 2, H / 2, WALL, D - WALL, H - 2 * WALL, "divider"))
        parts = [_vertical_door(-W / 2, 1, split + W / 2, D, 0.0, H, _angle(rng), "door")]
        n = int(rng.integers(1, 3))
        slot_h = (H - (n + 1) * WALL) / n
        rails, drawers = _drawer_stack(split + WALL / 2, W / 2 - WALL, D, 0.0, n, slot_h, rng)
        base += rails
        parts += drawers
        if with_lid:
            parts.append(_top_lid(W, D, H, PANEL, _angle(rng), "lid"))
        view = (rng.uniform(25, 40), rng.uniform(25, 35))
    else:
        # double doors above an optional drawer row
        n = int(rng.integers(0, 3))
        slot_h = rng.uniform(0.15, 0.2)
        z_doors = slot_h + WALL if n else 0.0
        H_doors = rng.uniform(0.45, 0.7)
        H = z_doors + H_doors
        base = _shell(W, D, H)
        parts = [
            _vertical_door(-W / 2, 1, W / 2, D, z_doors, H_doors, _angle(rng), "door_left"),
            _vertical_door(W / 2, -1, W / 2, D, z_doors, H_doors, _angle(rng), "door_right"),
        ]
        if n:
            base.append(_box(0.0, WALL / 2, z_doors - WALL / 2, W - 2 * WALL, D - WALL, WALL, "door_floor"))
            half = W / 2
            for k in range(n):
                x0 = -half + WALL + k * (W - 2 * WALL) / n
                x1 = x0 + (W - 2 * WALL) / n
                _, drawers = _drawer_stack(x0 + 0.004, x1 - 0.004, D, 0.0, 1, slot_h - WALL, rng,
                                           prefix=f"drawer_{k}_")
                parts += drawers
            if n == 2:
                base.append(_box(0.0, WALL / 2, slot_h / 2, 0.008, D - WALL, slot_h, "drawer_mullion"))
        view = (rng.uniform(-10, 10), rng.uniform(25, 35))
    return base, parts, view


_BUILDERS = {
    "cabinet_door": _cabinet_door,
    "drawer_unit": _drawer_unit,
    "laptop_lid": _laptop_lid,
    "microwave": _microwave,
    "trashcan_lid": _trashcan_lid,
    "multi_joint_mixed": _multi_joint_mixed,
}


def generate_object(category: str, seed: int) -> tuple[ArticulatedObject, list[Joint]]:
    """Deterministic procedural object plus its ground-truth joint set."""
    if category not in _BUILDERS:
        raise ValueError(f"unknown category {category!r}; choose from {', '.join(CATEGORIES)}")
    rng = np.random.default_rng([int(seed), CATEGORIES.index(category)])
    base, parts, view = _BUILDERS[category](rng, seed)
    obj = ArticulatedObject(category, int(seed), base, parts, (float(view[0]), float(view[1])))
    return obj, obj.joints
