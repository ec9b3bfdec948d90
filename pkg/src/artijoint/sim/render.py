"""Ray-cast point-map renderer for box-composed objects."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .objects import ArticulatedObject, Box

EDGE_JUMP = 0.02
RIBBON_CONF = (0.3, 0.8)
RIBBON_LIFT = 0.05


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    position: tuple
    look_at: tuple
    up: tuple = (0.0, 0.0, 1.0)
    vertical_fov: float = math.radians(40.0)
    width: int = 128
    height: int = 128

    def __post_init__(self):
        pos = np.asarray(self.position, float)
        tgt = np.asarray(self.look_at, float)
        up = np.asarray(self.up, float)
        if pos.shape != (3,) or tgt.shape != (3,) or up.shape != (3,):
            raise CameraError("camera vectors must be 3-vectors")
        fwd = tgt - pos
        if np.linalg.norm(fwd) < 1e-12:
            raise CameraError("camera position coincides with look_at")
        fwd = fwd / np.linalg.norm(fwd)
        if np.linalg.norm(np.cross(fwd, up)) < 1e-9 * max(np.linalg.norm(up), 1e-300):
            raise CameraError("up vector is parallel to the view direction")
        if int(self.width) < 16 or int(self.height) < 16:
            raise CameraError("image must be at least 16x16 pixels")
        if not 0.0 < self.vertical_fov < math.pi:
            raise CameraError("vertical_fov must lie in (0, pi)")
        object.__setattr__(self, "position", tuple(float(v) for v in pos))
        object.__setattr__(self, "look_at", tuple(float(v) for v in tgt))
        object.__setattr__(self, "up", tuple(float(v) for v in up))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = np.asarray(self.position)
        fwd = np.asarray(self.look_at) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return fwd, right, up

    def rays(self, rows=None, cols=None) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions through pixel centres (or continuous pixel coordinates)."""
        if rows is None:
            rr, cc = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
            rows, cols = rr.astype(float).ravel(), cc.astype(float).ravel()
        fwd, right, up = self.basis()
        tan_half = math.tan(0.5 * self.vertical_fov)
        aspect = self.width / self.height
        x = (2.0 * (np.asarray(cols) + 0.5) / self.width - 1.0) * tan_half * aspect
        y = (1.0 - 2.0 * (np.asarray(rows) + 0.5) / self.height) * tan_half
        d = fwd[None, :] + x[:, None] * right[None, :] + y[:, None] * up[None, :]
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.asarray(self.position, float), d

    def transformed(self, T) -> "Camera":
        return Camera(tuple(T.apply(self.position)), tuple(T.apply(self.look_at)),
                      tuple(T.apply_vector(self.up)), self.vertical_fov, self.width, self.height)

    def to_dict(self) -> dict:
        return {"position": list(self.position), "look_at": list(self.look_at), "up": list(self.up),
                "vertical_fov": self.vertical_fov, "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(tuple(d["position"]), tuple(d["look_at"]), tuple(d["up"]),
                   float(d["vertical_fov"]), int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class NoiseConfig:
    point_sigma: float = 0.0
    edge_conf: float = 0.9
    artifact_rate: float = 0.0

    def __post_init__(self):
        for name in ("point_sigma", "edge_conf", "artifact_rate"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)
        if self.point_sigma > 0.05:
            raise ValueError("point_sigma must not exceed 0.05")

    def to_dict(self) -> dict:
        return {"point_sigma": self.point_sigma, "edge_conf": self.edge_conf,
                "artifact_rate": self.artifact_rate}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(**{k: d[k] for k in ("point_sigma", "edge_conf", "artifact_rate") if k in d})


@dataclass
class PointMap:
    """Image-aligned world points with per-pixel confidence; ``conf == 0`` marks a miss."""

    points: np.ndarray
    conf: np.ndarray
    part_ids: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.conf = np.asarray(self.conf, dtype=float)
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise ValueError("points must have shape (H, W, 3)")
        if self.conf.shape != self.points.shape[:2]:
            raise ValueError("conf must have shape (H, W)")

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.conf > 0.0

    def copy(self) -> "PointMap":
        ids = None if self.part_ids is None else self.part_ids.copy()
        return PointMap(self.points.copy(), self.conf.copy(), ids)

    def transformed(self, T) -> "PointMap":
        pts = np.where(self.valid[..., None], T.apply(self.points), 0.0)
        return PointMap(pts, self.conf.copy(), None if self.part_ids is None else self.part_ids.copy())


def intersect_boxes(boxes: list[Box], origin, dirs) -> tuple[np.ndarray, np.ndarray]:
    """Nearest positive hit distance per ray and the index of the box hit (-1 on a miss)."""
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    which = np.full(n, -1, dtype=np.int64)
    origin = np.asarray(origin, float)
    for k, box in enumerate(boxes):
        o = (origin - box.center) @ box.rotation
        d = dirs @ box.rotation
        half = 0.5 * box.size
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-half - o) * inv
            t2 = (half - o) * inv
        # rays parallel to a slab: inside -> unbounded, outside -> empty
        par = d == 0.0
        inside = np.abs(o) <= half
        t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
        tn = np.minimum(t1, t2).max(axis=1)
        tf = np.maximum(t1, t2).min(axis=1)
        hit = (tn <= tf) & (tn > 1e-9) & (tn < best)
        best[hit] = tn[hit]
        which[hit] = k
    return best, which


def depth_edges(depth: np.ndarray, valid: np.ndarray, jump: float) -> np.ndarray:
    """Pixels whose 4-neighbourhood has a depth jump above ``jump``; misses count as jumps."""
    d = np.where(valid, depth, np.inf)
    edge = np.zeros_like(valid)
    for axis in (0, 1):
        with np.errstate(invalid="ignore"):
            diff = np.abs(np.diff(d, axis=axis))
        diff = np.where(np.isnan(diff), np.inf, diff)
        big = diff > jump
        if axis == 0:
            edge[1:, :] |= big
            edge[:-1, :] |= big
        else:
            edge[:, 1:] |= big
            edge[:, :-1] |= big
    return edge & valid


def _noise_rng(seed: int, stream: int) -> np.random.Generator:
    # counter-based stream keyed on the seed: results do not depend on call order
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), stream]))


def render_pointmap(obj: ArticulatedObject, joint_states, camera: Camera,
                    noise: NoiseConfig | None = None, seed: int = 0) -> PointMap:
    """Render the front surfaces of ``obj`` at ``joint_states`` as a point map."""
    noise = noise or NoiseConfig()
    states = np.asarray(joint_states, dtype=float).reshape(-1)
    if np.any(states < 0.0) or np.any(states > 1.0):
        raise ValueError("joint states must lie in [0, 1]")
    boxes, ids = obj.posed_boxes(states)
    origin, dirs = camera.rays()
    t, which = intersect_boxes(boxes, origin, dirs)
    H, W = camera.height, camera.width
    valid = (which >= 0).reshape(H, W)
    depth = np.where(valid, t.reshape(H, W), 0.0)
    pts = (origin + np.where(np.isfinite(t), t, 0.0)[:, None] * dirs).reshape(H, W, 3)
    pts[~valid] = 0.0
    part_ids = np.where(which >= 0, ids[np.maximum(which, 0)], -1).reshape(H, W)

    diag = obj.bbox_diagonal
    conf = valid.astype(float)
    conf[depth_edges(depth, valid, EDGE_JUMP * diag)] = noise.edge_conf

    if noise.artifact_rate > 0.0:
        rng = _noise_rng(seed, 1)
        start = rng.uniform(size=H) < noise.artifact_rate
        height = rng.integers(1, 3, size=H)
        lift = rng.uniform(0.0, RIBBON_LIFT * diag, size=(H, W))
        rconf = rng.uniform(*RIBBON_CONF, size=(H, W))
        rows = np.zeros(H, dtype=bool)
        for r in np.flatnonzero(start):
            rows[r:r + height[r]] = True
        strip = rows[:, None] & valid
        conf = np.where(strip, rconf, conf)
        toward_cam = -dirs.reshape(H, W, 3)
        pts = np.where(strip[..., None], pts + lift[..., None] * toward_cam, pts)

    if noise.point_sigma > 0.0:
        rng = _noise_rng(seed, 2)
        jitter = rng.normal(0.0, noise.point_sigma * diag, size=(H, W, 3))
        pts = np.where(valid[..., None], pts + jitter, 0.0)

    return PointMap(pts, conf, part_ids)


def render_state_pair(obj: ArticulatedObject, camera: Camera, noise: NoiseConfig | None = None,
                      seed: int = 0) -> tuple[PointMap, PointMap]:
    n = len(obj.movable)
    p0 = render_pointmap(obj, np.zeros(n), camera, noise, seed)
    p1 = render_pointmap(obj, np.ones(n), camera, noise, seed + 1)
    return p0, p1


def tracked_correspondences(obj: ArticulatedObject, camera: Camera, n_samples: int,
                            seed: int = 0) -> list[tuple[np.ndarray, np.ndarray, int]]:
    """Surface points visible at t=0 together with their true positions at t=1."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    from ..kinematics import pose_at

    n = len(obj.movable)
    boxes, ids = obj.posed_boxes(np.zeros(n))
    motions = [None] + [pose_at(j, 1.0).compose(pose_at(j, 0.0).inverse()) for j in obj.joints]
    rng = _noise_rng(seed, 3)
    out: list[tuple[np.ndarray, np.ndarray, int]] = []
    while len(out) < n_samples:
        m = 4 * (n_samples - len(out)) + 16
        rows = rng.uniform(-0.5, camera.height - 0.5, size=m)
        cols = rng.uniform(-0.5, camera.width - 0.5, size=m)
        origin, dirs = camera.rays(rows, cols)
        t, which = intersect_boxes(boxes, origin, dirs)
        for k in np.flatnonzero(which >= 0):
            pid = int(ids[which[k]])
            p0 = origin + t[k] * dirs[k]
            p1 = p0.copy() if pid == 0 else motions[pid].apply(p0)
            out.append((p0, p1, pid))
            if len(out) == n_samples:
                break
    return out


def suggest_camera(obj: ArticulatedObject, width: int = 128, height: int = 128,
                   fov_deg: float = 40.0, jitter_seed: int | None = None,
                   margin: float = 0.92) -> Camera:
    """Camera on the object's preferred viewing side framing both articulation extremes."""
    n = len(obj.movable)
    pts = np.concatenate([b.corners() for s in (np.zeros(n), np.ones(n))
                          for b in obj.posed_boxes(s)[0]])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = 0.5 * (lo + hi)
    radius = 0.5 * float(np.linalg.norm(hi - lo))
    az, el = obj.view
    if jitter_seed is not None:
        rng = _noise_rng(jitter_seed, 4)
        az += rng.uniform(-3.0, 3.0)
        el += rng.uniform(-3.0, 3.0)
    az, el = math.radians(az), math.radians(el)
    direction = np.array([math.sin(az) * math.cos(el), math.cos(az) * math.cos(el), math.sin(el)])
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    tan_v = math.tan(math.radians(fov_deg) / 2) * margin
    tan_h = tan_v * width / height

    def fits(dist: float) -> bool:
        cam = Camera(tuple(center + dist * direction), tuple(center), (0.0, 0.0, 1.0),
                     math.radians(fov_deg), width, height)
        fwd, right, up = cam.basis()
        rel = corners - np.asarray(cam.position)
        z = rel @ fwd
        return bool(np.all(z > 0) and np.all(np.abs(rel @ right) <= tan_h * z)
                    and np.all(np.abs(rel @ up) <= tan_v * z))

    near, far = radius, 20.0 * radius
    for _ in range(40):
        mid = 0.5 * (near + far)
        near, far = (near, mid) if fits(mid) else (mid, far)
    return Camera(tuple(center + far * direction), tuple(center), (0.0, 0.0, 1.0),
                  math.radians(fov_deg), width, height)
