"""Point-set geometry shared by the seed and estimation stages: rigid alignment,
trimmed ICP, and a pinhole camera recovered from a point map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .kinematics import RigidTransform


class DegenerateClusterError(ValueError):
    """Point set too thin (collinear or coincident) to fix a rigid motion."""


def check_rank(points: np.ndarray, tol: float = 1e-9) -> None:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        raise DegenerateClusterError(f"need at least 3 points, got {len(pts)}")
    centred = pts - pts.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    if s[0] <= tol or s[1] <= tol * max(1.0, s[0]):
        raise DegenerateClusterError("point set is collinear or coincident")


def kabsch(src: np.ndarray, dst: np.ndarray, weights=None) -> RigidTransform:
    """Least-squares rigid motion taking ``src`` onto ``dst`` (no reflections)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    cs = w @ src
    cd = w @ dst
    H = (src - cs).T @ ((dst - cd) * w[:, None])
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    # re-orthonormalise against round-off before building the frozen transform
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return RigidTransform(R, cd - R @ cs)


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    inlier_ratio: float
    residual: float
    iterations: int


def trimmed_icp(src: np.ndarray, dst: np.ndarray, init: RigidTransform | None = None,
                max_iters: int = 50, trim: float = 0.2, inlier_dist: float = np.inf,
                tree: cKDTree | None = None, tol: float = 1e-8,
                translation_only: bool = False, tol_scale: float = 1.0,
                max_match_dist: float | None = None) -> IcpResult:
    """Point-to-point ICP that refits on the closest ``1 - trim`` fraction of matches.

    With ``max_match_dist`` the refit instead uses every match closer than
    that distance, which keeps boundary points pulling a sliding surface back.
    """
    src = np.asarray(src, dtype=float)
    tree = tree if tree is not None else cKDTree(np.asarray(dst, dtype=float))
    T = init or RigidTransform.identity()
    keep = max(3, int(np.ceil((1.0 - trim) * len(src))))
    it = 0
    for it in range(1, max_iters + 1):
        moved = T.apply(src)
        dist, idx = tree.query(moved)
        sel = np.argpartition(dist, keep - 1)[:keep] if keep < len(src) else np.arange(len(src))
        if max_match_dist is not None:
            near = np.flatnonzero(dist < max_match_dist)
            if len(near) >= 3:
                sel = near
        if translation_only:
            step = RigidTransform(np.eye(3), np.mean(tree.data[idx[sel]] - moved[sel], axis=0))
        else:
            step = kabsch(moved[sel], tree.data[idx[sel]])
        T = step.compose(T)
        if np.linalg.norm(step.rotation - np.eye(3)) + np.linalg.norm(step.translation) / tol_scale < tol:
            break
    dist, _ = tree.query(T.apply(src))
    trimmed = np.sort(dist)[:keep]
    return IcpResult(T, float(np.mean(dist < inlier_dist)), float(np.sqrt(np.mean(trimmed ** 2))), it)


def principal_frame(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and right-handed principal axes (columns, descending variance)."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    E = vt.T.copy()
    if np.linalg.det(E) < 0:
        E[:, 2] = -E[:, 2]
    return c, E


def min_area_rectangle(xy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smallest-area enclosing rectangle of 2D points.

    Returns ``(center, axes, half_extents)`` with ``axes`` a 2x2 matrix whose
    columns are the rectangle's side directions.
    """
    xy = np.asarray(xy, dtype=float)
    try:
        hull = xy[ConvexHull(xy).vertices]
    except QhullError:
        hull = xy
    edges = np.diff(np.vstack([hull, hull[:1]]), axis=0)
    ang = np.unique(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), np.pi / 2))
    best = None
    for a in ang:
        A = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        q = hull @ A
        lo, hi = q.min(axis=0), q.max(axis=0)
        area = float(np.prod(hi - lo))
        if best is None or area < best[0]:
            best = (area, A, lo, hi)
    _, A, lo, hi = best
    return A @ ((lo + hi) / 2), A, (hi - lo) / 2


def surface_normals(points: np.ndarray, mask: np.ndarray, radius: int = 2) -> np.ndarray:
    """Per-pixel unit normals from a windowed PCA over the masked points, shape (H, W, 3)."""
    m = mask.astype(float)
    P = np.where(mask[..., None], points, 0.0)
    size = 2 * radius + 1

    def box(a):
        return uniform_filter(a, size=size, mode="constant")

    n = np.maximum(box(m), 1e-12)[..., None]
    mu = np.stack([box(P[..., i]) for i in range(3)], axis=-1) / n
    second = np.empty(mask.shape + (3, 3))
    for i in range(3):
        for j in range(i, 3):
            second[..., i, j] = second[..., j, i] = box(P[..., i] * P[..., j]) / n[..., 0]
    C = second - mu[..., :, None] * mu[..., None, :]
    _, vecs = np.linalg.eigh(C)
    return vecs[..., :, 0]


def dominant_directions(normals: np.ndarray, max_angle: float, min_count: int,
                        max_groups: int = 8, sample: int = 400) -> np.ndarray:
    """Group unit normals around their densest directions; -1 for leftovers."""
    cos = np.cos(max_angle)
    group = np.full(len(normals), -1, dtype=np.int64)
    free = np.ones(len(normals), dtype=bool)
    for g in range(max_groups):
        idx = np.flatnonzero(free)
        if len(idx) < min_count:
            break
        probe = idx[::max(1, len(idx) // sample)]
        density = (normals[probe] @ normals[idx].T > cos).sum(axis=1)
        direction = normals[probe[np.argmax(density)]]
        for _ in range(3):
            members = idx[normals[idx] @ direction > cos]
            direction = normals[members].mean(axis=0)
            direction /= np.linalg.norm(direction)
        members = idx[normals[idx] @ direction > cos]
        if len(members) < min_count:
            break
        group[members] = g
        free[members] = False
    return group


def orthogonal_frame(normals: np.ndarray, max_angle: float, min_count: int) -> np.ndarray | None:
    """Right-handed frame (columns) from the two largest mutually orthogonal
    normal groups, or None when the normals do not show two such groups."""
    group = dominant_directions(normals, max_angle, min_count)
    dirs = []
    for g in range(int(group.max(initial=-1)) + 1):
        d = normals[group == g].mean(axis=0)
        dirs.append(d / np.linalg.norm(d))
    if not dirs:
        return None
    e1 = dirs[0]
    for d in dirs[1:]:
        if abs(d @ e1) < np.sin(max_angle):
            e2 = d - (d @ e1) * e1
            e2 /= np.linalg.norm(e2)
            return np.stack([e1, e2, np.cross(e1, e2)], axis=1)
    return None


SCALE_NORMAL_DEG = 20.0
SCALE_MIN_POINTS = 30


def pointmap_frame(pm) -> np.ndarray:
    """Orthonormal frame (columns) that rotates with the scene.

    Box-built scenes show two orthogonal families of surface normals, which
    recover the object's own axes; otherwise the principal axes stand in.
    """
    pts = pm.points[pm.valid]
    if len(pts) >= SCALE_MIN_POINTS:
        try:
            center = camera_center_from_pointmap(pm)
        except DegenerateClusterError:
            center = None
        if center is not None:
            n = surface_normals(pm.points, pm.valid)[pm.valid]
            # eigenvector signs are arbitrary; face every normal toward the camera
            n *= np.where(np.sum((center - pts) * n, axis=1) < 0.0, -1.0, 1.0)[:, None]
            frame = orthogonal_frame(n, np.radians(SCALE_NORMAL_DEG), SCALE_MIN_POINTS)
            if frame is not None:
                return frame
    if len(pts) >= 3:
        return principal_frame(pts)[1]
    return np.eye(3)


def pointmap_scale(pm) -> float:
    """Bounding-box diagonal of the valid points, with the box aligned to
    :func:`pointmap_frame` so that the value survives rigid motions."""
    pts = pm.points[pm.valid]
    if len(pts) == 0:
        return 1.0
    local = pts @ pointmap_frame(pm)
    return float(np.linalg.norm(local.max(axis=0) - local.min(axis=0))) or 1.0


def pixel_coordinates(height: int, width: int) -> np.ndarray:
    """Pixel-centre image coordinates ``(x, y)`` for every pixel, shape (H, W, 2)."""
    rr, cc = np.meshgrid(np.arange(height, dtype=float), np.arange(width, dtype=float), indexing="ij")
    return np.stack([cc + 0.5, rr + 0.5], axis=-1)


def _normaliser(x: np.ndarray) -> np.ndarray:
    c = x.mean(axis=0)
    s = np.sqrt(x.shape[1]) / max(np.mean(np.linalg.norm(x - c, axis=1)), 1e-12)
    N = np.eye(x.shape[1] + 1)
    N[:-1, :-1] *= s
    N[:-1, -1] = -s * c
    return N


def fit_projection(world: np.ndarray, image: np.ndarray) -> np.ndarray:
    """Normalised DLT estimate of a 3x4 projection matrix from 2D-3D pairs."""
    world = np.asarray(world, dtype=float)
    image = np.asarray(image, dtype=float)
    if len(world) < 6:
        raise DegenerateClusterError("need at least 6 correspondences for a camera fit")
    Nw, Ni = _normaliser(world), _normaliser(image)
    Xh = np.c_[world, np.ones(len(world))] @ Nw.T
    xh = np.c_[image, np.ones(len(image))] @ Ni.T
    n = len(world)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xh[:, 0:1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xh[:, 1:2] * Xh
    _, _, vt = np.linalg.svd(A, full_matrices=False)
    P = vt[-1].reshape(3, 4)
    P = np.linalg.inv(Ni) @ P @ Nw
    # orient so that points in front of the camera have positive depth
    if np.median(np.c_[world, np.ones(n)] @ P[2]) < 0:
        P = -P
    return P


def projection_center(P: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(P)
    c = vt[-1]
    return c[:3] / c[3]


def project(P: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Image coordinates and projective depth of ``points`` under ``P``."""
    h = np.c_[points, np.ones(len(points))] @ P.T
    return h[:, :2] / h[:, 2:3], h[:, 2]


def fit_pointmap_camera(pm, max_points: int = 4000) -> np.ndarray:
    """Projection matrix consistent with a point map's pixel grid."""
    rows, cols = np.nonzero(pm.valid)
    stride = max(1, len(rows) // max_points)
    rows, cols = rows[::stride], cols[::stride]
    uv = pixel_coordinates(pm.height, pm.width)[rows, cols]
    return fit_projection(pm.points[rows, cols], uv)


def camera_center_from_pointmap(pm) -> np.ndarray:
    return projection_center(fit_pointmap_camera(pm))
