"""Joint hypotheses from a closed/opened point-map pair.

Pipeline: motion seeds -> seed clusters -> per-part rigid fit -> screw
decomposition -> typed joint hypothesis.  Seed clusters act as the joint
queries; the rigid fit for each query uses the part surfaces that changed
between the two states, since same-pixel pairs on a rotating surface do not
observe the same material.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from .geometry import (
    DegenerateClusterError,
    check_rank,
    dominant_directions,
    orthogonal_frame,
    fit_pointmap_camera,
    kabsch,
    min_area_rectangle,
    pointmap_scale,
    principal_frame,
    project,
    projection_center,
    surface_normals,
    trimmed_icp,
)
from .kinematics import (
    Joint,
    JointType,
    RigidTransform,
    canonicalize_axis,
    line_angle,
    point_line_distance,
    rotation_matrix,
    screw_from_transform,
)
from .motionseed import SeedFilterConfig, SeedSet, SeedStats, motion_seeds
from .sim.render import PointMap

MODES = ("icp", "paired")


@dataclass(frozen=True)
class EstimateConfig:
    K: int = 16
    conf_threshold: float = 0.5
    cluster_3d_gap: float = 0.05
    direction_max_deg: float = 60.0
    min_cluster_seeds: int = 8
    revolute_min_angle: float = 0.087
    prismatic_min_slide: float = 0.01
    icp_max_iters: int = 50
    icp_trim_fraction: float = 0.2
    fit_mode: str = "icp"
    change_eps: float = 0.02
    max_angle_deg: float = 175.0
    support_saturation: int = 200
    max_fit_points: int = 600
    min_landing: float = 0.5

    def __post_init__(self):
        if int(self.K) < 1:
            raise ValueError("K must be at least 1")
        for name in ("cluster_3d_gap", "revolute_min_angle", "prismatic_min_slide", "change_eps",
                     "direction_max_deg", "max_angle_deg"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ValueError("conf_threshold must lie in [0, 1]")
        if not 0.0 < self.min_landing <= 1.0:
            raise ValueError("min_landing must lie in (0, 1]")
        if not 0.0 <= self.icp_trim_fraction < 1.0:
            raise ValueError("icp_trim_fraction must lie in [0, 1)")
        if self.fit_mode not in MODES:
            raise ValueError(f"fit_mode must be one of {MODES}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# ---------------------------------------------------------------------------
# seed clusters

@dataclass
class MotionCluster:
    seeds: SeedSet
    centroid0: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.seeds) == 0:
            raise ValueError("a motion cluster needs at least one seed")
        self.centroid0 = self.seeds.p0.mean(axis=0)

    @property
    def pixel_footprint(self) -> int:
        return len(self.seeds)


FOUR_NEIGHBOURS = ((0, 1), (1, 0))


def _grid_edges(rows: np.ndarray, cols: np.ndarray, offsets=FOUR_NEIGHBOURS) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs of pixels at the given (row, col) offsets within a sparse pixel list."""
    if len(rows) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    W = int(cols.max()) + 4
    key = (rows + 2) * W + cols + 2
    order = np.argsort(key)
    skey = key[order]
    ii, jj = [], []
    for dr, dc in offsets:
        want = key + dr * W + dc
        pos = np.minimum(np.searchsorted(skey, want), len(skey) - 1)
        hit = skey[pos] == want
        ii.append(np.flatnonzero(hit))
        jj.append(order[pos[hit]])
    return np.concatenate(ii), np.concatenate(jj)


def _components(n: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    g = coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    return connected_components(g, directed=False)[1]


def cluster_seeds(seeds: SeedSet, cfg: EstimateConfig | None = None, scale: float = 1.0) -> list[MotionCluster]:
    """Connected groups of 4-adjacent seeds with nearby closed-state points and
    displacement directions within ``direction_max_deg``."""
    cfg = cfg or EstimateConfig()
    n = len(seeds)
    if n == 0:
        return []
    i, j = _grid_edges(seeds.rows, seeds.cols)
    gap = cfg.cluster_3d_gap * scale
    near = np.linalg.norm(seeds.p0[i] - seeds.p0[j], axis=1) < gap
    disp = seeds.p1 - seeds.p0
    unit = disp / np.maximum(np.linalg.norm(disp, axis=1, keepdims=True), 1e-300)
    aligned = np.sum(unit[i] * unit[j], axis=1) >= math.cos(math.radians(cfg.direction_max_deg))
    keep = near & aligned
    labels = _components(n, i[keep], j[keep])
    groups = [np.flatnonzero(labels == lab) for lab in np.unique(labels)]
    groups = [g for g in groups if len(g) >= cfg.min_cluster_seeds]
    # size descending; ties by first pixel in row-major order
    groups.sort(key=lambda g: (-len(g), int(g[0])))
    return [MotionCluster(seeds.subset(g)) for g in groups[:cfg.K]]


# ---------------------------------------------------------------------------
# change evidence

MIN_FACE_POINTS = 30
FACE_GAP = 0.15
FACE_OFFSET = 0.01
FACE_NORMAL_DEG = 20.0
BEHIND = 0.08


@dataclass
class SceneEvidence:
    """What changed between the two states, in image space.

    The source is every closed-state pixel whose point has no counterpart in
    the opened state; the target is every opened-state pixel whose point has
    no closed-state counterpart and lies in front of what was seen before.
    The target is split into planar faces, one or more per moved part.
    Both states share one camera, recovered from the closed-state map.
    """

    scale: float
    center: np.ndarray
    projection: np.ndarray
    shape: tuple[int, int]
    depth0: np.ndarray
    depth1: np.ndarray
    source_mask: np.ndarray
    source_idx: np.ndarray
    source_pts: np.ndarray
    face_labels: np.ndarray
    faces: list[np.ndarray]
    points1: np.ndarray
    frame: np.ndarray | None = None

    @classmethod
    def from_maps(cls, P0: PointMap, P1: PointMap, cfg: EstimateConfig, scale: float,
                  projection: np.ndarray, gate: float = 0.0) -> "SceneEvidence":
        eps = cfg.change_eps * scale
        center = projection_center(projection)
        v0 = P0.valid & (P0.conf > gate)
        v1 = P1.valid & (P1.conf > gate)
        pts0, pts1 = P0.points, P1.points
        moved0 = np.zeros_like(v0)
        moved1 = np.zeros_like(v1)
        if v0.any() and v1.any():
            d01, _ = cKDTree(pts1[v1]).query(pts0[v0], distance_upper_bound=eps)
            d10, _ = cKDTree(pts0[v0]).query(pts1[v1], distance_upper_bound=eps)
            moved0[v0] = ~np.isfinite(d01)
            moved1[v1] = ~np.isfinite(d10)
        else:
            moved0, moved1 = v0.copy(), v1.copy()
        depth0 = np.where(v0, np.linalg.norm(pts0 - center, axis=2), np.inf)
        depth1 = np.where(v1, np.linalg.norm(pts1 - center, axis=2), np.inf)
        in_front = moved1 & (~v0 | (depth1 < depth0 - eps))
        labels = cls._segment_faces(pts1, v1, in_front, center, scale)
        flat = labels.reshape(-1)
        faces = [np.flatnonzero(flat == k) for k in range(int(labels.max(initial=-1)) + 1)]
        source_idx = np.flatnonzero(moved0.reshape(-1))
        frame = None
        if v0.sum() >= MIN_FACE_POINTS:
            n0 = surface_normals(pts0, v0)[v0]
            n0 *= np.where(np.sum((center - pts0[v0]) * n0, axis=1) < 0.0, -1.0, 1.0)[:, None]
            frame = orthogonal_frame(n0, math.radians(FACE_NORMAL_DEG), MIN_FACE_POINTS)
        return cls(scale, center, projection, v0.shape, depth0.reshape(-1), depth1.reshape(-1),
                   moved0.reshape(-1), source_idx, pts0.reshape(-1, 3)[source_idx], flat, faces,
                   pts1.reshape(-1, 3), frame)

    @staticmethod
    def _segment_faces(pts, valid, mask, center, scale) -> np.ndarray:
        """Planar faces of the masked pixels: normal groups split into 3D-connected pieces."""
        labels = np.full(mask.shape, -1, dtype=np.int64)
        rows, cols = np.nonzero(mask)
        if len(rows) < MIN_FACE_POINTS:
            return labels
        p = pts[rows, cols]
        n = surface_normals(pts, valid)[rows, cols]
        n *= np.where(np.sum((center - p) * n, axis=1) < 0.0, -1.0, 1.0)[:, None]
        group = dominant_directions(n, math.radians(FACE_NORMAL_DEG), MIN_FACE_POINTS)
        i, j = _grid_edges(rows, cols)
        # adjacent pixels of one plane may lie far apart at grazing views,
        # so the step is judged mostly across the plane
        step = p[i] - p[j]
        ok = ((group[i] >= 0) & (group[i] == group[j])
              & (np.abs(np.sum(step * n[i], axis=1)) < FACE_OFFSET * scale)
              & (np.linalg.norm(step, axis=1) < FACE_GAP * scale))
        comp = _components(len(rows), i[ok], j[ok])
        comp[group < 0] = -1
        next_label = 0
        vals, counts = np.unique(comp[comp >= 0], return_counts=True)
        # larger faces first so that labels do not depend on pixel order
        for v in vals[np.lexsort((vals, -counts))]:
            members = comp == v
            if members.sum() < MIN_FACE_POINTS:
                continue
            labels[rows[members], cols[members]] = next_label
            next_label += 1
        return labels

    def pixels(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat pixel index (-1 outside the image) and camera distance of each point."""
        H, W = self.shape
        uv, w = project(self.projection, pts)
        col = np.floor(uv[:, 0])
        row = np.floor(uv[:, 1])
        inside = (w > 0) & (col >= 0) & (col < W) & (row >= 0) & (row < H)
        flat = np.where(inside, row * W + col, -1).astype(np.int64)
        return flat, np.linalg.norm(pts - self.center, axis=1)

    def lands_on_source(self, pts: np.ndarray, graded: bool = False) -> np.ndarray:
        """Points that sit on, or just behind, the changed closed-state surface.

        With ``graded`` the points just behind count half, so that searches
        prefer motions that put the surface exactly where it was seen.
        """
        pix, z = self.pixels(pts)
        ok = pix >= 0
        ok[ok] = self.source_mask[pix[ok]]
        delta = np.where(ok, z - self.depth0[np.maximum(pix, 0)], -np.inf)
        tol = 0.5 * FACE_LANDING * self.scale
        on = ok & (np.abs(delta) < tol)
        behind = ok & (delta >= tol) & (delta < BEHIND * self.scale)
        if graded:
            return on + 0.5 * behind
        return on | behind

    def lands_on_face(self, pts: np.ndarray, face: int) -> tuple[np.ndarray, np.ndarray]:
        """Points that sit on, or just behind, target face ``face``, and their pixels."""
        pix, z = self.pixels(pts)
        ok = pix >= 0
        ok[ok] = self.face_labels[pix[ok]] == face
        delta = np.where(ok, z - self.depth1[np.maximum(pix, 0)], -np.inf)
        tol = 0.5 * FACE_LANDING * self.scale
        return ok & (delta > -tol) & (delta < BEHIND * self.scale), pix


FACE_LANDING = 0.05


# ---------------------------------------------------------------------------
# motion proposals

@dataclass(frozen=True)
class MotionFit:
    transform: RigidTransform
    inlier_ratio: float
    residual: float
    support: int
    source: np.ndarray = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class Proposal:
    """Candidate part motion explaining one target face."""

    transform: RigidTransform
    face: int
    kind: str
    landing: float
    hinge: tuple | None = field(default=None, repr=False, compare=False)


FACE_POINTS = 150
ANGLE_STEP = math.radians(2.5)
FINE_STEP = math.radians(0.25)
SLIDE_STEP = 0.01
PLATEAU = 0.02
SLIDE_BONUS = 1.25


def _subsample(pts: np.ndarray, n: int) -> np.ndarray:
    if len(pts) <= n:
        return pts
    idx = np.linspace(0, len(pts) - 1, n).round().astype(np.int64)
    return pts[idx]


def face_frame(pts: np.ndarray, toward=None) -> tuple[np.ndarray, np.ndarray]:
    """Principal frame of a patch with the normal (third column) facing ``toward``."""
    c, E = principal_frame(pts)
    if toward is not None and (np.asarray(toward) - c) @ E[:, 2] < 0.0:
        # flip two columns to stay right-handed
        E[:, [0, 2]] = -E[:, [0, 2]]
    return c, E


def hinge_lines(pts: np.ndarray, frame: np.ndarray | None = None,
                toward=None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Candidate hinge lines ``(point, direction)`` along the edges of a surface patch.

    Hinges run along the object's own axes, so when a ``frame`` is given the
    candidates are the two extreme lines of the patch along each frame axis
    lying in the patch plane.  Otherwise they are the four sides of the
    smallest rectangle enclosing the patch in its principal plane.
    """
    c, E = face_frame(pts, toward)
    local = (pts - c) @ E
    depth = 0.5 * (local[:, 2].min() + local[:, 2].max())
    lines = []
    if frame is not None:
        n = E[:, 2]
        for a in frame.T:
            if abs(a @ n) > HINGE_TILT:
                continue
            a = a - (a @ n) * n
            a /= np.linalg.norm(a)
            b = np.cross(n, a)
            across = (pts - c) @ b
            for edge in np.percentile(across, [1.0, 99.0]):
                lines.append((c + edge * b + depth * n, a))
        if lines:
            return lines
    mid, A, half = min_area_rectangle(local[:, :2])
    for k in range(2):
        side, along = A[:, k], A[:, 1 - k]
        for sign in (-1.0, 1.0):
            p2 = mid + sign * half[k] * side
            point = c + E @ np.array([p2[0], p2[1], depth])
            lines.append((point, E[:, :2] @ along))
    return lines


HINGE_TILT = math.sin(math.radians(20.0))


def _plateau_centre(values: np.ndarray, scores: np.ndarray) -> tuple[float, float]:
    """Middle of the run of near-best scores around the best one."""
    k = int(np.argmax(scores))
    good = scores >= scores[k] - PLATEAU
    lo = k
    while lo > 0 and good[lo - 1]:
        lo -= 1
    hi = k
    while hi < len(scores) - 1 and good[hi + 1]:
        hi += 1
    return float(values[(lo + hi) // 2]), float(scores[k])


def _landing_scores(ev: SceneEvidence, moved: np.ndarray) -> np.ndarray:
    """Fraction landing on the source for a stack of moved copies, shape (n_copies,)."""
    n_copies, n_pts = moved.shape[:2]
    return ev.lands_on_source(moved.reshape(-1, 3), graded=True).reshape(n_copies, n_pts).mean(axis=1)


def _rotated(pts, point, axis, angles) -> np.ndarray:
    rel = pts - point
    along = np.outer(rel @ axis, axis)
    perp = rel - along
    cross = np.cross(axis, rel)
    cos, sin = np.cos(angles), np.sin(angles)
    return (point + along)[None] + cos[:, None, None] * perp[None] + sin[:, None, None] * cross[None]


def _search_hinge(ev, pts, point, axis, max_angle) -> tuple[float, float]:
    coarse = np.arange(ANGLE_STEP, max_angle + 1e-12, ANGLE_STEP)
    coarse = np.concatenate([-coarse[::-1], coarse])
    phi, _ = _plateau_centre(coarse, _landing_scores(ev, _rotated(pts, point, axis, coarse)))
    fine = phi + np.arange(-ANGLE_STEP, ANGLE_STEP + 1e-12, FINE_STEP)
    fine = fine[np.abs(fine) <= max_angle]
    return _plateau_centre(fine, _landing_scores(ev, _rotated(pts, point, axis, fine)))


def _search_slide(ev, pts, normal, scale) -> tuple[float, float]:
    step = SLIDE_STEP * scale
    coarse = np.arange(-scale, scale + 0.5 * step, step)
    s, _ = _plateau_centre(coarse, _landing_scores(ev, pts[None] + coarse[:, None, None] * normal))
    fine = s + np.linspace(-step, step, 21)
    return _plateau_centre(fine, _landing_scores(ev, pts[None] + fine[:, None, None] * normal))


PIVOT_ACROSS = 0.08
PIVOT_DEPTH = 0.03
PIVOT_STEP = 0.01


def _refine_pivot(ev, pts, point, axis, phi, normal) -> tuple[np.ndarray, float]:
    """Shift the hinge line to where the rotated face lands best.

    The visible patch edge can sit short of the true hinge when the part is
    partly hidden, and the depth of the patch is the panel face rather than
    the hinge, so the line is searched across the face and along its normal.
    """
    across = np.cross(normal, axis)
    best = (-1.0, 0.0, point, phi)

    def search(centre, angles, du, dn, best):
        for u in du:
            for v in dn:
                p = centre + u * across + v * normal
                a, score = _plateau_centre(angles, _landing_scores(ev, _rotated(pts, p, axis, angles)))
                shift = float(np.linalg.norm(p - point))
                if score > best[0] + 1e-9 or (abs(score - best[0]) <= 1e-9 and shift < best[1]):
                    best = (score, shift, p, a)
        return best

    coarse = np.arange(-PIVOT_ACROSS, PIVOT_ACROSS + 1e-12, PIVOT_STEP) * ev.scale
    depth = np.arange(-PIVOT_DEPTH, PIVOT_DEPTH + 1e-12, PIVOT_STEP) * ev.scale
    angles = phi + np.arange(-4 * ANGLE_STEP, 4 * ANGLE_STEP + 1e-12, FINE_STEP)
    best = search(point, angles, coarse, depth, best)
    fine = np.linspace(-PIVOT_STEP, PIVOT_STEP, 9) * ev.scale
    angles = best[3] + np.arange(-ANGLE_STEP, ANGLE_STEP + 1e-12, FINE_STEP)
    best = search(best[2], angles, fine, fine, best)
    return best[2], best[3]


def face_proposals(ev: SceneEvidence, face: int, cfg: EstimateConfig) -> list[Proposal]:
    """Best slide and best hinge rotation carrying the source onto one target face.

    Each search moves the face back into the closed state and asks how much
    of it lands on (or just behind) the changed closed-state surface.
    Slides run along the face normal; rotations about the sides of the face.
    """
    full = ev.points1[ev.faces[face]]
    pts = _subsample(full, FACE_POINTS)
    # a camera-facing normal keeps the searches' tie-breaks independent of the SVD sign
    _, E = face_frame(full, ev.center)
    out = []
    s, _ = _search_slide(ev, pts, E[:, 2], ev.scale)
    score = float(ev.lands_on_source(pts + s * E[:, 2]).mean())
    if score >= cfg.min_landing:
        # the face sits at source + s * n, so the forward motion is the opposite shift
        out.append(Proposal(RigidTransform(np.eye(3), -s * E[:, 2]), face, "slide", score))
    best = None
    max_angle = math.radians(cfg.max_angle_deg)
    for point, axis in hinge_lines(full, ev.frame, ev.center):
        phi, graded = _search_hinge(ev, pts, point, axis, max_angle)
        if best is None or graded > best[0]:
            best = (graded, point, axis, phi)
    if best is not None:
        _, point, axis, phi = best
        score = float(ev.lands_on_source(_rotated(pts, point, axis, np.array([phi]))[0]).mean())
    if best is not None and score >= cfg.min_landing:
        R = rotation_matrix(axis, -phi)
        out.append(Proposal(RigidTransform(R, point - R @ point), face, "hinge", score,
                            (point, axis, phi, E[:, 2])))
    return out


def refine_proposal(ev: SceneEvidence, prop: Proposal) -> Proposal:
    """Hinge proposal with its pivot line re-searched; slides come back unchanged."""
    if prop.hinge is None:
        return prop
    point, axis, phi, normal = prop.hinge
    pts = _subsample(ev.points1[ev.faces[prop.face]], FACE_POINTS)
    point, phi = _refine_pivot(ev, pts, point, axis, phi, normal)
    score = float(ev.lands_on_source(_rotated(pts, point, axis, np.array([phi]))[0]).mean())
    R = rotation_matrix(axis, -phi)
    return Proposal(RigidTransform(R, point - R @ point), prop.face, "hinge", score, (point, axis, phi, normal))


@dataclass
class _Explanation:
    proposal: Proposal
    hits: np.ndarray
    pixels: np.ndarray


def _explain(ev: SceneEvidence, prop: Proposal) -> _Explanation:
    hits, pix = ev.lands_on_face(prop.transform.apply(ev.source_pts), prop.face)
    return _Explanation(prop, hits, pix)


def _gain(ex: _Explanation, free_src: np.ndarray, covered: np.ndarray) -> tuple[np.ndarray, int]:
    """Usable source points of an explanation and the fresh target pixels they reach."""
    use = ex.hits & free_src
    fresh = np.unique(ex.pixels[use])
    return use, int(np.count_nonzero(~covered[fresh]))


def _refined_choice(ev, ex: _Explanation, use, free, covered):
    """Swap a chosen hinge for its refined pivot when that still explains the part."""
    if ex.proposal.hinge is None:
        return ex, use
    new = _explain(ev, refine_proposal(ev, ex.proposal))
    new_use, gain = _gain(new, free, covered)
    if gain < MIN_PART_POINTS:
        return ex, use
    return new, new_use


def _motion_fit(ev: SceneEvidence, ex: _Explanation, use: np.ndarray) -> MotionFit:
    moved = ex.proposal.transform.apply(ev.source_pts[use])
    pix, z = ev.pixels(moved)
    residual = float(np.sqrt(np.mean((z - ev.depth1[pix]) ** 2))) if len(pix) else 0.0
    return MotionFit(ex.proposal.transform, ex.proposal.landing, residual, int(use.sum()),
                     _largest_piece(ev, use))


def _largest_piece(ev: SceneEvidence, use: np.ndarray) -> np.ndarray:
    """Closed-state points of the largest image-connected piece of a source subset."""
    idx = ev.source_idx[use]
    W = ev.shape[1]
    rows, cols = idx // W, idx % W
    i, j = _grid_edges(rows, cols)
    labels = _components(len(idx), i, j)
    big = np.argmax(np.bincount(labels))
    return ev.source_pts[use][labels == big]


def _pca_inits(src: np.ndarray, dst: np.ndarray) -> list[RigidTransform]:
    """Centroid shift plus the proper principal-axis alignments of two point sets."""
    cs, Es = principal_frame(src)
    cd, Ed = principal_frame(dst)
    inits = [RigidTransform(np.eye(3), cd - cs)]
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            F = Ed * np.array([sx, sy, sx * sy])
            R = F @ Es.T
            if np.linalg.det(R) < 0:
                R = (Ed * np.array([sx, sy, -sx * sy])) @ Es.T
            inits.append(RigidTransform(R, cd - R @ cs))
    return inits


def fit_cluster_motion(cluster: MotionCluster, mode: str = "icp", cfg: EstimateConfig | None = None,
                       scale: float = 1.0, evidence: SceneEvidence | None = None,
                       proposals: list[Proposal] | None = None) -> MotionFit:
    """Rigid motion of the part a seed cluster lies on.

    ``paired`` solves Kabsch on the seed endpoints.  ``icp`` registers the
    closed-state seed points against the opened-state ones, or, when scene
    evidence is given, picks the face proposal that carries the most
    changed surface through this cluster's pixels onto the opened state.
    """
    cfg = cfg or EstimateConfig()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    seeds = cluster.seeds
    check_rank(seeds.p0)
    if mode == "paired":
        T = kabsch(seeds.p0, seeds.p1)
        res = np.linalg.norm(T.apply(seeds.p0) - seeds.p1, axis=1)
        inlier = float(np.mean(res < 0.5 * cfg.cluster_3d_gap * scale))
        return MotionFit(T, inlier, float(np.sqrt(np.mean(res ** 2))), len(seeds), seeds.p0)
    if evidence is None:
        best = None
        for init in _pca_inits(seeds.p0, seeds.p1):
            r = trimmed_icp(seeds.p0, seeds.p1, init, cfg.icp_max_iters, cfg.icp_trim_fraction,
                            0.5 * cfg.cluster_3d_gap * scale)
            if best is None or r.residual < best.residual:
                best = r
        return MotionFit(best.transform, best.inlier_ratio, best.residual, len(seeds), seeds.p0)
    ev = evidence
    if proposals is None:
        proposals = [p for f in range(len(ev.faces)) for p in face_proposals(ev, f, cfg)]
    mine = np.zeros(len(ev.source_mask), dtype=bool)
    mine[seeds.rows * ev.shape[1] + seeds.cols] = True
    mine = mine[ev.source_idx]
    covered = np.zeros(len(ev.face_labels), dtype=bool)
    free = np.ones(len(ev.source_idx), dtype=bool)
    best = None
    for prop in proposals:
        ex = _explain(ev, prop)
        use, gain = _gain(ex, free, covered)
        if np.count_nonzero(use & mine) < cfg.min_cluster_seeds:
            continue
        weight = gain * (SLIDE_BONUS if prop.kind == "slide" else 1.0)
        if best is None or weight > best[0]:
            best = (weight, ex, use)
    if best is None:
        raise DegenerateClusterError("no motion proposal explains this cluster")
    ex, use = _refined_choice(ev, best[1], best[2], free, covered)
    return _motion_fit(ev, ex, use)


def _seeded_source(ev: SceneEvidence, clusters, cfg: EstimateConfig) -> np.ndarray:
    """Image pixels of the changed closed-state regions that motion seeds reach.

    Seeds thin out where displacements are longest, so a whole connected
    region of changed surface counts once enough seed pixels fall inside it.
    """
    W = ev.shape[1]
    seeds = np.zeros(len(ev.source_mask), dtype=bool)
    for cl in clusters:
        seeds[cl.seeds.rows * W + cl.seeds.cols] = True
    idx = ev.source_idx
    i, j = _grid_edges(idx // W, idx % W)
    labels = _components(len(idx), i, j)
    counts = np.bincount(labels, weights=seeds[idx].astype(float))
    out = np.zeros(len(ev.source_mask), dtype=bool)
    out[idx] = counts[labels] >= cfg.min_cluster_seeds
    return out


def explain_scene(ev: SceneEvidence, seed_pixels: np.ndarray, cfg: EstimateConfig) -> list[MotionFit]:
    """Greedy choice of part motions covering the changed opened-state surface.

    Each round commits the proposal reaching the most not-yet-covered target
    pixels from not-yet-used source pixels (slides get a mild preference, as
    the simpler motion), provided enough motion seeds lie on its source.
    """
    proposals = [p for f in range(len(ev.faces)) for p in face_proposals(ev, f, cfg)]
    explanations = [_explain(ev, p) for p in proposals]
    seeded = seed_pixels[ev.source_idx]
    covered = np.zeros(len(ev.face_labels), dtype=bool)
    free = np.ones(len(ev.source_idx), dtype=bool)
    fits: list[MotionFit] = []
    while len(fits) < cfg.K:
        best = None
        for k, ex in enumerate(explanations):
            use, gain = _gain(ex, free, covered)
            if gain < MIN_PART_POINTS or np.count_nonzero(use & seeded) < cfg.min_cluster_seeds:
                continue
            weight = gain * (SLIDE_BONUS if ex.proposal.kind == "slide" else 1.0)
            if best is None or weight > best[0]:
                best = (weight, k, use)
        if best is None:
            break
        _, k, use = best
        ex, use = _refined_choice(ev, explanations.pop(k), use, free, covered)
        fits.append(_motion_fit(ev, ex, use))
        covered[ex.pixels[use]] = True
        free &= ~use
    return fits


# ---------------------------------------------------------------------------
# hypotheses

@dataclass(frozen=True)
class JointHypothesis:
    joint: Joint
    confidence: float
    support: int
    residual: float
    inlier_ratio: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    def to_dict(self) -> dict:
        j = self.joint
        return {"type": j.type.urdf_name, "origin": [float(v) for v in j.origin],
                "axis": [float(v) for v in j.axis], "range": [float(v) for v in j.range],
                "confidence": float(self.confidence), "support": int(self.support),
                "residual": float(self.residual), "inlier_ratio": float(self.inlier_ratio)}

    @classmethod
    def from_dict(cls, d: dict) -> "JointHypothesis":
        jt = JointType.from_name(d["type"])
        if jt == JointType.FIXED:
            joint = Joint.fixed(d["origin"])
        else:
            joint = Joint(jt, d["origin"], d["axis"], tuple(d["range"]))
        return cls(joint, float(d["confidence"]), int(d["support"]), float(d["residual"]),
                   float(d.get("inlier_ratio", 0.0)))


def hypotheses_to_json(hyps) -> str:
    return json.dumps([h.to_dict() for h in hyps], indent=2)


def hypotheses_from_json(text: str) -> list[JointHypothesis]:
    return [JointHypothesis.from_dict(d) for d in json.loads(text)]


def hypothesis_from_motion(fit: MotionFit | RigidTransform, cluster: MotionCluster | None,
                           cfg: EstimateConfig | None = None, scale: float = 1.0,
                           anchor=None) -> JointHypothesis:
    """Classify a fitted motion and read off pivot, axis and excursion."""
    cfg = cfg or EstimateConfig()
    if isinstance(fit, RigidTransform):
        n = 0 if cluster is None else len(cluster.seeds)
        fit = MotionFit(fit, 1.0, 0.0, n, None if cluster is None else cluster.seeds.p0)
    T = fit.transform
    if anchor is None:
        anchor = fit.source.mean(axis=0) if fit.source is not None else cluster.centroid0
    anchor = np.asarray(anchor, dtype=float)
    conf = float(np.clip(fit.inlier_ratio * min(1.0, fit.support / cfg.support_saturation), 0.0, 1.0))
    s = screw_from_transform(T, anchor)
    if s.angle >= cfg.revolute_min_angle:
        axis, rng = canonicalize_axis(s.axis, (0.0, float(s.angle)))
        joint = Joint(JointType.REVOLUTE, s.pivot, axis, rng)
    else:
        # a small spurious rotation would tilt the screw axis, so the
        # prismatic direction comes from the displacement of the anchor
        disp = T.apply(anchor) - anchor
        slide = float(np.linalg.norm(disp))
        if slide >= cfg.prismatic_min_slide * scale:
            slide = min(slide, scale)
            axis, rng = canonicalize_axis(disp / np.linalg.norm(disp), (0.0, slide))
            joint = Joint(JointType.PRISMATIC, anchor, axis, rng)
        else:
            joint = Joint.fixed(anchor)
    return JointHypothesis(joint, conf, int(fit.support), float(fit.residual), float(fit.inlier_ratio))


# ---------------------------------------------------------------------------
# pipeline

@dataclass
class EstimateResult:
    hypotheses: list[JointHypothesis]
    seed_stats: SeedStats
    n_clusters: int
    candidates: list[JointHypothesis]
    scale: float

    @property
    def unused_slots(self) -> int:
        return 0

    def diagnostics(self, K: int) -> dict:
        return {"seeds": self.seed_stats.to_dict(), "clusters": self.n_clusters,
                "candidates": len(self.candidates), "kept": len(self.hypotheses),
                "unused_slots": K - len(self.hypotheses), "scale": self.scale}


def estimate_joints_detailed(P0: PointMap, P1: PointMap, cfg: EstimateConfig | None = None,
                             filter_cfg: SeedFilterConfig | None = None,
                             projection: np.ndarray | None = None) -> EstimateResult:
    cfg = cfg or EstimateConfig()
    filter_cfg = filter_cfg or SeedFilterConfig()
    scale = pointmap_scale(P0)
    if projection is None:
        projection = _camera(P0)
    if projection is None:
        return EstimateResult([], SeedStats(), 0, [], scale)
    center = projection_center(projection)
    seeds, stats = motion_seeds(P0, P1, filter_cfg, center, scale)
    clusters = cluster_seeds(seeds, cfg, scale)
    if not clusters:
        return EstimateResult([], stats, 0, [], scale)
    candidates: list[JointHypothesis] = []
    if cfg.fit_mode == "paired":
        for cl in clusters:
            try:
                fit = fit_cluster_motion(cl, "paired", cfg, scale)
            except DegenerateClusterError:
                continue
            candidates.append(hypothesis_from_motion(fit, cl, cfg, scale))
    else:
        ev = SceneEvidence.from_maps(P0, P1, cfg, scale, projection, filter_cfg.conf_gate)
        fits = explain_scene(ev, _seeded_source(ev, clusters, cfg), cfg)
        candidates = _dedupe([hypothesis_from_motion(f, None, cfg, scale) for f in fits], scale)
    candidates.sort(key=lambda h: -h.confidence)
    kept = [h for h in candidates if h.joint.type.is_kinematic and h.confidence > cfg.conf_threshold]
    return EstimateResult(kept[:cfg.K], stats, len(clusters), candidates, scale)


MIN_PART_POINTS = 30
DUPLICATE_ANGLE = 0.15
DUPLICATE_GAP = 0.05


def _same_joint(a: Joint, b: Joint, scale: float) -> bool:
    if a.type != b.type:
        return False
    if line_angle(a.axis, b.axis) > DUPLICATE_ANGLE:
        return False
    if a.type.is_angular:
        gap = point_line_distance(b.origin, a.origin, a.axis)
        excursion = abs(abs(a.range[1] - a.range[0]) - abs(b.range[1] - b.range[0]))
        return gap < DUPLICATE_GAP * scale and excursion < DUPLICATE_ANGLE
    gap = float(np.linalg.norm(a.origin - b.origin))
    excursion = abs(abs(a.range[1] - a.range[0]) - abs(b.range[1] - b.range[0]))
    return gap < DUPLICATE_GAP * scale and excursion < DUPLICATE_GAP * scale


def _dedupe(hyps: list[JointHypothesis], scale: float) -> list[JointHypothesis]:
    """Collapse hypotheses describing the same joint, keeping the best supported."""
    kept: list[JointHypothesis] = []
    for h in sorted(hyps, key=lambda h: (-h.support, -h.confidence)):
        if not any(_same_joint(k.joint, h.joint, scale) for k in kept):
            kept.append(h)
    return kept


def estimate_joints(P0: PointMap, P1: PointMap, cfg: EstimateConfig | None = None,
                    filter_cfg: SeedFilterConfig | None = None) -> list[JointHypothesis]:
    """Kinematic hypotheses (at most ``K``) whose confidence exceeds the threshold."""
    return estimate_joints_detailed(P0, P1, cfg, filter_cfg).hypotheses


# ---------------------------------------------------------------------------
# ablation modes

ABLATION_MODES = ("oracle", "direct", "2d")


def flatten_depth(pm: PointMap, projection: np.ndarray, reference: np.ndarray) -> PointMap:
    """Remove the component of every point along the viewing direction.

    The points collapse onto the fronto-parallel plane through ``reference``
    and keep only their image-plane coordinates: the scene as a pixel
    displacement method sees it, with no 3D lifting.
    """
    view = projection[2, :3] / np.linalg.norm(projection[2, :3])
    pts = pm.points - ((pm.points - reference) @ view)[..., None] * view
    return PointMap(np.where(pm.valid[..., None], pts, pm.points), pm.conf.copy(), pm.part_ids)


def _camera(P0: PointMap) -> np.ndarray | None:
    try:
        return fit_pointmap_camera(P0)
    except DegenerateClusterError:
        return None


def prepare_pair(P0: PointMap, P1: PointMap, mode: str = "oracle") -> tuple[PointMap, PointMap]:
    """The point-map pair an ablation mode hands to the estimator.

    ``oracle`` uses the true opened state; ``direct`` has no second state and
    substitutes a copy of the closed map; ``2d`` flattens both maps onto the
    image plane of the closed-state camera.
    """
    if mode == "oracle":
        return P0, P1
    if mode == "direct":
        return P0, P0.copy()
    if mode == "2d":
        projection = _camera(P0)
        if projection is None:
            return P0, P0.copy()
        reference = np.median(P0.points[P0.valid], axis=0)
        return flatten_depth(P0, projection, reference), flatten_depth(P1, projection, reference)
    raise ValueError(f"mode must be one of {ABLATION_MODES}")


def estimate_scene(P0: PointMap, P1: PointMap, mode: str = "oracle", cfg: EstimateConfig | None = None,
                   filter_cfg: SeedFilterConfig | None = None) -> EstimateResult:
    cfg = cfg or EstimateConfig()
    projection = None
    if mode == "2d":
        # flattened maps carry no change evidence in 3D and no longer pin
        # down a camera; the seed pairs are all a 2D pairing has to go on
        projection = _camera(P0)
        cfg = replace(cfg, fit_mode="paired")
    return estimate_joints_detailed(*prepare_pair(P0, P1, mode), cfg, filter_cfg, projection)


# ---------------------------------------------------------------------------
# estimator interface

class JointEstimator(BaseEstimator):
    """Joint estimation from ``(P0, P1)`` point-map pairs.

    ``fit`` only needs ground truth to pick the confidence threshold: it
    keeps ``conf_threshold`` unless ``tune_threshold`` is set, in which case
    the threshold with the best success rate on the training pairs wins.
    ``predict`` returns one list of :class:`JointHypothesis` per pair.
    """

    def __init__(self, K=16, conf_threshold=0.5, conf_gate=0.85, low_pct=0.15, high_pct=0.20,
                 mode="oracle", tune_threshold=False):
        self.K = K
        self.conf_threshold = conf_threshold
        self.conf_gate = conf_gate
        self.low_pct = low_pct
        self.high_pct = high_pct
        self.mode = mode
        self.tune_threshold = tune_threshold

    def _configs(self, conf_threshold: float) -> tuple[EstimateConfig, SeedFilterConfig]:
        return (EstimateConfig(K=int(self.K), conf_threshold=float(conf_threshold)),
                SeedFilterConfig(self.conf_gate, self.low_pct, self.high_pct))

    def fit(self, X, y=None):
        from .validation import check_pairs, check_targets

        pairs = check_pairs(X)
        if self.mode not in ABLATION_MODES:
            raise ValueError(f"mode must be one of {ABLATION_MODES}")
        self._configs(self.conf_threshold)
        self.conf_threshold_ = float(self.conf_threshold)
        if self.tune_threshold and y is not None:
            targets = check_targets(y, len(pairs))
            cfg, fcfg = self._configs(0.0)
            results = [estimate_scene(P0, P1, self.mode, cfg, fcfg) for P0, P1 in pairs]
            best = None
            for th in THRESHOLD_GRID:
                preds = [[h for h in r.candidates if h.joint.type.is_kinematic and h.confidence > th][:cfg.K]
                         for r in results]
                sr = _success_rate(preds, targets, cfg.K)
                if best is None or sr > best[0]:
                    best = (sr, th)
            self.conf_threshold_ = float(best[1])
        self.n_pairs_ = len(pairs)
        return self

    def predict(self, X) -> list[list[JointHypothesis]]:
        from .validation import check_fitted, check_pairs

        check_fitted(self, "conf_threshold_")
        cfg, fcfg = self._configs(self.conf_threshold_)
        return [estimate_scene(P0, P1, self.mode, cfg, fcfg).hypotheses for P0, P1 in check_pairs(X)]

    def score(self, X, y) -> float:
        """Overall success rate of the predictions against ``(joints, scale)`` targets."""
        from .validation import check_targets

        preds = self.predict(X)
        return _success_rate(preds, check_targets(y, len(preds)), int(self.K))


THRESHOLD_GRID = tuple(np.round(np.arange(0.0, 0.95, 0.05), 2))


def _success_rate(preds, targets, K: int) -> float:
    from .metrics import evaluate_dataset

    records = [(joints, p, scale) for p, (joints, scale) in zip(preds, targets)]
    return evaluate_dataset(records, K=K).overall_sr
