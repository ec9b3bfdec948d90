"""Input checks shared by the estimator-style wrappers."""
from __future__ import annotations

from sklearn.exceptions import NotFittedError

from .sim.render import PointMap


def check_pairs(X) -> list[tuple[PointMap, PointMap]]:
    """Validate a sequence of ``(closed, opened)`` point-map pairs."""
    try:
        pairs = [tuple(x) for x in X]
    except TypeError as exc:
        raise TypeError("expected a sequence of (P0, P1) point-map pairs") from exc
    for k, pair in enumerate(pairs):
        if len(pair) != 2 or not all(isinstance(p, PointMap) for p in pair):
            raise TypeError(f"item {k} is not a pair of PointMap objects")
        if pair[0].points.shape != pair[1].points.shape:
            raise ValueError(f"item {k}: the two point maps differ in resolution")
    return pairs


def check_targets(y, n: int) -> list:
    """Validate per-pair ground truth: ``(joints, scale)`` tuples."""
    y = list(y)
    if len(y) != n:
        raise ValueError(f"got {len(y)} targets for {n} pairs")
    out = []
    for k, item in enumerate(y):
        joints, scale = item
        if not float(scale) > 0.0:
            raise ValueError(f"target {k}: scale must be positive")
        out.append((list(joints), float(scale)))
    return out


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")
