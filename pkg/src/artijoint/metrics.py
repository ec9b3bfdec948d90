"""Per-joint error quantities, thresholded success, and dataset-level reports.

Error definitions used throughout:

- type: 0/1 misclassification;
- origin: distance from the predicted origin to the GT axis line (revolute,
  continuous) or to the GT origin (prismatic), divided by the bbox diagonal;
- axis_angle: unsigned angle between the two axis lines, in [0, pi/2];
- direction: 1 - cos between the oriented canonical axes, in [0, 2];
- range: Euclidean gap between the two ranges mapped to [0, 2].
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .kinematics import Joint, canonical_joint, line_angle, point_line_distance
from .matching import match_joints, normalized_range

QUANTITIES = ("type", "origin", "axis_angle", "direction", "range")


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorVector:
    type_err: int
    origin_err: float
    axis_angle_err: float
    direction_err: float
    range_err: float

    def as_dict(self) -> dict:
        return {"type": self.type_err, "origin": self.origin_err, "axis_angle": self.axis_angle_err,
                "direction": self.direction_err, "range": self.range_err}


@dataclass(frozen=True)
class Thresholds:
    axis_angle: float = 0.25
    origin: float = 0.15
    range: float = 0.3
    direction: float = 0.3

    def __post_init__(self):
        for name in ("axis_angle", "origin", "range", "direction"):
            if not getattr(self, name) > 0.0:
                raise MetricsError(f"threshold {name} must be positive")

    @classmethod
    def parse(cls, text: str) -> "Thresholds":
        """``"axis,origin,range,direction"`` as on the command line."""
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 4:
            raise MetricsError("thresholds need four comma-separated values: axis,origin,range,direction")
        return cls(*parts)

    def to_dict(self) -> dict:
        return asdict(self)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def joint_errors(gt: Joint, pred: Joint, scale: float) -> ErrorVector:
    """Errors of ``pred`` against ``gt``; both are expected in canonical form."""
    if not scale > 0.0:
        raise MetricsError("scale must be positive")
    gt, pred = getattr(gt, "joint", gt), getattr(pred, "joint", pred)
    type_err = int(gt.type != pred.type)
    if gt.type.is_angular and np.any(gt.axis):
        origin = point_line_distance(pred.origin, gt.origin, gt.axis) / scale
    else:
        origin = float(np.linalg.norm(pred.origin - gt.origin)) / scale
    axis_angle = line_angle(gt.axis, pred.axis)
    if np.any(gt.axis) and np.any(pred.axis):
        cos = float(np.clip(_unit(gt.axis) @ _unit(pred.axis), -1.0, 1.0))
    else:
        cos = 0.0
    direction = 1.0 - cos
    rng = float(np.linalg.norm(normalized_range(gt.range, gt.type, scale)
                               - normalized_range(pred.range, pred.type, scale)))
    return ErrorVector(type_err, origin, axis_angle, direction, rng)


def is_success(e: ErrorVector, th: Thresholds | None = None) -> bool:
    th = th or Thresholds()
    return (e.type_err == 0 and e.axis_angle_err < th.axis_angle and e.origin_err < th.origin
            and e.range_err < th.range and e.direction_err < th.direction)


@dataclass
class JointRecord:
    scene: str
    gt_index: int
    slot: int | None
    errors: ErrorVector | None
    success: bool

    def to_dict(self) -> dict:
        return {"scene": self.scene, "gt_index": self.gt_index, "slot": self.slot,
                "errors": None if self.errors is None else self.errors.as_dict(),
                "success": self.success}


@dataclass
class EvalReport:
    per_joint: list[JointRecord]
    overall_sr: float
    mean_errors: dict
    n_gt: int
    n_matched: int
    spurious_count: int
    thresholds: Thresholds = field(default_factory=Thresholds)

    def to_dict(self) -> dict:
        return {"overall_sr": self.overall_sr, "mean_errors": self.mean_errors, "n_gt": self.n_gt,
                "n_matched": self.n_matched, "spurious_count": self.spurious_count,
                "thresholds": self.thresholds.to_dict(),
                "definitions": {
                    "type": "misclassification rate over matched joints",
                    "origin": "revolute: distance to GT axis line / bbox diagonal; prismatic: point distance / bbox diagonal",
                    "axis_angle": "unsigned line angle in radians",
                    "direction": "1 - cos between oriented canonical axes",
                    "range": "L2 gap of ranges normalised to [0, 2]",
                },
                "per_joint": [r.to_dict() for r in self.per_joint]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scene", "gt_index", "slot", *QUANTITIES, "success"])
        for r in self.per_joint:
            errs = r.errors.as_dict() if r.errors else {}
            w.writerow([r.scene, r.gt_index, "" if r.slot is None else r.slot,
                        *[("" if q not in errs else repr(float(errs[q]))) for q in QUANTITIES],
                        int(r.success)])
        return buf.getvalue()

    def summary_table(self) -> str:
        lines = [f"{'metric':<12}{'value':>10}", "-" * 22,
                 f"{'overall_sr':<12}{self.overall_sr:>10.4f}"]
        for q in QUANTITIES:
            v = self.mean_errors.get(q)
            lines.append(f"{q:<12}{('-' if v is None else f'{v:.4f}'):>10}")
        lines += [f"{'n_gt':<12}{self.n_gt:>10d}", f"{'n_matched':<12}{self.n_matched:>10d}",
                  f"{'spurious':<12}{self.spurious_count:>10d}"]
        return "\n".join(lines)


def evaluate_dataset(records, thresholds: Thresholds | None = None, K: int = 16) -> EvalReport:
    """Joint-level micro-averaged success over ``(gt set, pred set, scale[, name])`` records.

    Unmatched GT joints count as failures; predictions left unmatched are
    reported as spurious.
    """
    th = thresholds or Thresholds()
    per_joint: list[JointRecord] = []
    spurious = 0
    for i, rec in enumerate(records):
        gts, preds, scale = rec[0], rec[1], float(rec[2])
        name = str(rec[3]) if len(rec) > 3 else str(i)
        gts = [canonical_joint(getattr(g, "joint", g)) for g in gts]
        preds = [canonical_joint(getattr(p, "joint", p)) for p in preds]
        sigma = match_joints(gts, preds, scale, K).sigma if gts else ()
        used = set()
        for n, g in enumerate(gts):
            k = sigma[n]
            if k >= len(preds):
                per_joint.append(JointRecord(name, n, None, None, False))
                continue
            used.add(k)
            e = joint_errors(g, preds[k], scale)
            per_joint.append(JointRecord(name, n, k, e, is_success(e, th)))
        spurious += len(preds) - len(used)
    # scene-name order keeps the report independent of record order
    per_joint.sort(key=lambda r: (r.scene, r.gt_index))
    matched = [r.errors.as_dict() for r in per_joint if r.errors is not None]
    means = {q: float(np.mean([m[q] for m in matched])) for q in QUANTITIES} if matched else {}
    n_gt = len(per_joint)
    sr = sum(r.success for r in per_joint) / n_gt if n_gt else 0.0
    return EvalReport(per_joint, sr, means, n_gt, len(matched), spurious, th)

