"""Cross-state motion seeds: per-pixel pairing, confidence gating, 3D adjustment
and displacement-band filtering.

Seeds are kept as a struct-of-arrays :class:`SeedSet`; iterating it yields
:class:`MotionSeed` values.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import camera_center_from_pointmap, pointmap_scale
from .sim.render import EDGE_JUMP, PointMap, depth_edges


class SeedError(ValueError):
    pass


@dataclass(frozen=True)
class MotionSeed:
    pixel: tuple[int, int]
    p0: np.ndarray
    p1: np.ndarray
    d: float

    def __post_init__(self):
        if not (np.all(np.isfinite(self.p0)) and np.all(np.isfinite(self.p1))):
            raise SeedError("seed endpoints must be finite")
        if self.d < 0.0 or abs(self.d - float(np.linalg.norm(self.p1 - self.p0))) > 1e-12:
            raise SeedError("seed displacement does not match its endpoints")

    def to_dict(self) -> dict:
        return {"row": int(self.pixel[0]), "col": int(self.pixel[1]),
                "p0": [float(v) for v in self.p0], "p1": [float(v) for v in self.p1],
                "d": float(self.d)}


@dataclass
class SeedSet:
    """Seeds in row-major order unless stated otherwise."""

    rows: np.ndarray
    cols: np.ndarray
    p0: np.ndarray
    p1: np.ndarray
    d: np.ndarray = field(default=None)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        self.cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        self.p0 = np.asarray(self.p0, dtype=float).reshape(-1, 3)
        self.p1 = np.asarray(self.p1, dtype=float).reshape(-1, 3)
        if self.d is None:
            self.d = np.linalg.norm(self.p1 - self.p0, axis=1)
        self.d = np.asarray(self.d, dtype=float).reshape(-1)
        n = len(self.rows)
        if not (len(self.cols) == len(self.p0) == len(self.p1) == len(self.d) == n):
            raise SeedError("seed arrays have inconsistent lengths")

    @classmethod
    def empty(cls) -> "SeedSet":
        return cls(np.zeros(0), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))

    @classmethod
    def from_seeds(cls, seeds) -> "SeedSet":
        seeds = list(seeds)
        if not seeds:
            return cls.empty()
        return cls([s.pixel[0] for s in seeds], [s.pixel[1] for s in seeds],
                   [s.p0 for s in seeds], [s.p1 for s in seeds], [s.d for s in seeds])

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> MotionSeed:
        return MotionSeed((int(self.rows[i]), int(self.cols[i])), self.p0[i].copy(),
                          self.p1[i].copy(), float(self.d[i]))

    def subset(self, idx) -> "SeedSet":
        idx = np.asarray(idx)
        return SeedSet(self.rows[idx], self.cols[idx], self.p0[idx], self.p1[idx], self.d[idx])

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s.to_dict()) + "\n" for s in self)

    @classmethod
    def from_jsonl(cls, text: str) -> "SeedSet":
        recs = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not recs:
            return cls.empty()
        return cls([r["row"] for r in recs], [r["col"] for r in recs],
                   [r["p0"] for r in recs], [r["p1"] for r in recs], [r["d"] for r in recs])


@dataclass(frozen=True)
class SeedFilterConfig:
    conf_gate: float = 0.85
    low_pct: float = 0.15
    high_pct: float = 0.20
    abs_floor: float = 1e-3
    adjust_radius: int = 2

    def __post_init__(self):
        if not 0.0 < self.conf_gate < 1.0:
            raise ValueError("conf_gate must lie in (0, 1)")
        if self.low_pct < 0.0 or self.high_pct < 0.0 or not self.low_pct + self.high_pct < 1.0:
            raise ValueError("need low_pct, high_pct >= 0 and low_pct + high_pct < 1")
        if self.abs_floor < 0.0:
            raise ValueError("abs_floor must be non-negative")
        if int(self.adjust_radius) < 0:
            raise ValueError("adjust_radius must be non-negative")

    def to_dict(self) -> dict:
        return {"conf_gate": self.conf_gate, "low_pct": self.low_pct, "high_pct": self.high_pct,
                "abs_floor": self.abs_floor, "adjust_radius": int(self.adjust_radius)}

    @classmethod
    def from_dict(cls, d: dict) -> "SeedFilterConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _check_pair(P0: PointMap, P1: PointMap) -> None:
    if P0.points.shape != P1.points.shape:
        raise SeedError(f"resolution mismatch: {P0.points.shape[:2]} vs {P1.points.shape[:2]}")


def extract_candidates(P0: PointMap, P1: PointMap, cfg: SeedFilterConfig | None = None) -> SeedSet:
    """One candidate per pixel whose confidence passes the gate in both states."""
    cfg = cfg or SeedFilterConfig()
    _check_pair(P0, P1)
    ok = P0.valid & P1.valid & (np.minimum(P0.conf, P1.conf) > cfg.conf_gate)
    rows, cols = np.nonzero(ok)
    return SeedSet(rows, cols, P0.points[rows, cols], P1.points[rows, cols])


def _snap(pm: PointMap, rows, cols, center, gate: float, radius: int, jump: float):
    """Per-pixel replacement point for edge pixels; NaN where no neighbour passes."""
    dist = np.linalg.norm(pm.points - center, axis=2)
    edges = depth_edges(dist, pm.valid, jump)
    out = pm.points[rows, cols].copy()
    on_edge = edges[rows, cols]
    if not on_edge.any() or radius == 0:
        out[on_edge] = np.nan
        return out, on_edge
    # candidate neighbour distances, masked where the gate fails
    passing = pm.valid & (pm.conf > gate)
    score = np.where(passing, dist, np.inf)
    pad = np.pad(score, radius, constant_values=np.inf)
    er, ec = rows[on_edge], cols[on_edge]
    best = np.full(len(er), np.inf)
    best_rc = np.zeros((len(er), 2), dtype=np.int64)
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            if dr == 0 and dc == 0:
                continue
            s = pad[er + dr + radius, ec + dc + radius]
            better = s < best
            best[better] = s[better]
            best_rc[better] = np.stack([er[better] + dr, ec[better] + dc], axis=1)
    found = np.isfinite(best)
    snapped = np.full((len(er), 3), np.nan)
    snapped[found] = pm.points[best_rc[found, 0], best_rc[found, 1]]
    out[on_edge] = snapped
    return out, on_edge


def adjust_seeds(seeds: SeedSet, P0: PointMap, P1: PointMap, cfg: SeedFilterConfig | None = None,
                 camera_center=None, scale: float | None = None) -> SeedSet:
    """Snap seed endpoints on depth discontinuities to the nearest-to-camera neighbour.

    ``camera_center`` and ``scale`` are estimated from ``P0`` when omitted.
    Seeds left without a passing neighbour are dropped.
    """
    cfg = cfg or SeedFilterConfig()
    _check_pair(P0, P1)
    if len(seeds) == 0:
        return seeds
    if camera_center is None:
        camera_center = camera_center_from_pointmap(P0)
    center = np.asarray(camera_center, dtype=float)
    scale = pointmap_scale(P0) if scale is None else float(scale)
    jump = EDGE_JUMP * scale
    q0, _ = _snap(P0, seeds.rows, seeds.cols, center, cfg.conf_gate, int(cfg.adjust_radius), jump)
    q1, _ = _snap(P1, seeds.rows, seeds.cols, center, cfg.conf_gate, int(cfg.adjust_radius), jump)
    keep = np.isfinite(q0).all(axis=1) & np.isfinite(q1).all(axis=1)
    return SeedSet(seeds.rows[keep], seeds.cols[keep], q0[keep], q1[keep])


def filter_displacement(seeds: SeedSet, cfg: SeedFilterConfig | None = None,
                        scale: float = 1.0) -> SeedSet:
    """Drop static seeds, then the shortest ``low_pct`` and longest ``high_pct`` of the rest."""
    cfg = cfg or SeedFilterConfig()
    moving = np.flatnonzero(seeds.d >= cfg.abs_floor * scale)
    n = len(moving)
    if n == 0:
        return seeds.subset(moving)
    n_low = math.floor(cfg.low_pct * n)
    n_high = math.floor(cfg.high_pct * n)
    # stable sort on d keeps row-major order among ties
    order = moving[np.argsort(seeds.d[moving], kind="stable")]
    kept = np.sort(order[n_low:n - n_high])
    return seeds.subset(kept)


@dataclass
class SeedStats:
    candidates: int = 0
    adjusted: int = 0
    filtered: int = 0

    def to_dict(self) -> dict:
        return {"candidates": self.candidates, "adjusted": self.adjusted, "filtered": self.filtered}


def motion_seeds(P0: PointMap, P1: PointMap, cfg: SeedFilterConfig | None = None,
                 camera_center=None, scale: float | None = None) -> tuple[SeedSet, SeedStats]:
    """extract -> adjust -> filter, returning the band and per-stage counts."""
    cfg = cfg or SeedFilterConfig()
    scale = pointmap_scale(P0) if scale is None else float(scale)
    cand = extract_candidates(P0, P1, cfg)
    adj = adjust_seeds(cand, P0, P1, cfg, camera_center, scale)
    band = filter_displacement(adj, cfg, scale)
    return band, SeedStats(len(cand), len(adj), len(band))


class MotionSeedExtractor(TransformerMixin, BaseEstimator):
    """Transformer over ``(P0, P1)`` point-map pairs producing one :class:`SeedSet` each."""

    def __init__(self, conf_gate=0.85, low_pct=0.15, high_pct=0.20, abs_floor=1e-3, adjust_radius=2):
        self.conf_gate = conf_gate
        self.low_pct = low_pct
        self.high_pct = high_pct
        self.abs_floor = abs_floor
        self.adjust_radius = adjust_radius

    def _config(self) -> SeedFilterConfig:
        return SeedFilterConfig(self.conf_gate, self.low_pct, self.high_pct, self.abs_floor,
                                self.adjust_radius)

    def fit(self, X, y=None):
        from .validation import check_pairs

        check_pairs(X)
        self.config_ = self._config()
        return self

    def transform(self, X) -> list[SeedSet]:
        from .validation import check_pairs, check_fitted

        check_fitted(self, "config_")
        return [motion_seeds(P0, P1, self.config_)[0] for P0, P1 in check_pairs(X)]
