import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artijoint.kinematics import Joint, JointType, RigidTransform, canonical_joint
from artijoint.metrics import (
    ErrorVector,
    MetricsError,
    Thresholds,
    evaluate_dataset,
    is_success,
    joint_errors,
)

from conftest import random_joint, random_rotation

REV = Joint(JointType.REVOLUTE, [0.1, 0.2, 0.3], [0, 0, 1], (0, 1.2))
PRI = Joint(JointType.PRISMATIC, [0.0, 0.3, 0.1], [0, 1, 0], (0, 0.3))


def moved(j: Joint, T: RigidTransform) -> Joint:
    return Joint(j.type, T.apply(j.origin), T.apply_vector(j.axis), j.range)


def test_identical_joints():
    e = joint_errors(REV, REV, 1.0)
    assert e == ErrorVector(0, 0.0, 0.0, 0.0, 0.0)


def test_origin_gauge_along_axis():
    slid = Joint(REV.type, REV.origin + 0.1 * REV.axis, REV.axis, REV.range)
    assert joint_errors(REV, slid, 1.0).origin_err < 1e-15


def test_thirty_degree_axes():
    tilted = Joint(REV.type, REV.origin, [math.sin(math.pi / 6), 0, math.cos(math.pi / 6)], REV.range)
    e = joint_errors(REV, tilted, 1.0)
    assert e.axis_angle_err == pytest.approx(math.pi / 6, abs=1e-12)
    assert e.direction_err == pytest.approx(1 - math.cos(math.pi / 6), abs=1e-12)
    assert e.axis_angle_err == pytest.approx(0.524, abs=5e-4)
    assert e.direction_err == pytest.approx(0.134, abs=5e-4)


def test_prismatic_origin_is_point_distance():
    off = Joint(PRI.type, PRI.origin + [0, 0.2, 0], PRI.axis, PRI.range)
    assert joint_errors(PRI, off, 2.0).origin_err == pytest.approx(0.1)


def test_type_and_range_errors():
    e = joint_errors(REV, Joint(JointType.CONTINUOUS, REV.origin, REV.axis, (0, 1.2 + math.pi)), 1.0)
    assert e.type_err == 1
    assert e.range_err == pytest.approx(0.5, abs=1e-12)


def test_zero_scale_rejected():
    with pytest.raises(MetricsError):
        joint_errors(REV, REV, 0.0)


def test_is_success_examples():
    assert is_success(ErrorVector(0, 0.10, 0.20, 0.10, 0.20))
    assert not is_success(ErrorVector(0, 0.0, 0.25, 0.0, 0.0))
    assert not is_success(ErrorVector(1, 0.0, 0.0, 0.0, 0.0))


def test_thresholds():
    assert Thresholds.parse("0.25,0.15,0.3,0.3") == Thresholds()
    with pytest.raises(MetricsError):
        Thresholds.parse("0.25,0.15")
    with pytest.raises(MetricsError):
        Thresholds(axis_angle=0.0)


@given(st.integers(0, 2**31))
def test_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    T = RigidTransform(random_rotation(rng), rng.uniform(-3, 3, 3))
    for jt in (JointType.REVOLUTE, JointType.PRISMATIC):
        g, p = random_joint(rng, jt), random_joint(rng)
        a = joint_errors(g, p, 1.3)
        b = joint_errors(moved(g, T), moved(p, T), 1.3)
        np.testing.assert_allclose(list(b.as_dict().values()), list(a.as_dict().values()), atol=1e-9)


@given(st.integers(0, 2**31))
def test_axis_sign_invariance(seed):
    rng = np.random.default_rng(seed)
    g, p = random_joint(rng), random_joint(rng)
    flipped = Joint(p.type, p.origin, -p.axis, (-p.range[1], -p.range[0]))
    assert joint_errors(g, flipped, 1.0).axis_angle_err == pytest.approx(
        joint_errors(g, p, 1.0).axis_angle_err, abs=1e-12)
    # canonicalising the flipped prediction restores every quantity
    a = joint_errors(canonical_joint(g), canonical_joint(p), 1.0)
    b = joint_errors(canonical_joint(g), canonical_joint(flipped), 1.0)
    np.testing.assert_allclose(list(b.as_dict().values()), list(a.as_dict().values()), atol=1e-12)


@given(st.integers(0, 2**31), st.floats(-2, 2))
def test_revolute_gauge_invariance(seed, s):
    rng = np.random.default_rng(seed)
    g = random_joint(rng, JointType.REVOLUTE)
    p = Joint(g.type, g.origin + rng.normal(size=3) * 0.1, g.axis, g.range)
    slid = Joint(p.type, p.origin + s * p.axis, p.axis, p.range)
    assert joint_errors(g, slid, 1.0).origin_err == pytest.approx(joint_errors(g, p, 1.0).origin_err, abs=1e-12)


# -- datasets -------------------------------------------------------------------------

def perturbed(j: Joint, angle: float) -> Joint:
    """Axis tilted about x by ``angle``."""
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    return Joint(j.type, j.origin, R @ j.axis, j.range)


def test_perfect_and_empty_predictors():
    records = [([REV, PRI], [REV, PRI], 1.0, "a"), ([PRI], [PRI], 2.0, "b")]
    rep = evaluate_dataset(records)
    assert rep.overall_sr == 1.0 and rep.n_gt == 3 and rep.spurious_count == 0
    assert all(v == 0.0 for v in rep.mean_errors.values())
    rep = evaluate_dataset([(g, [], s, n) for g, _, s, n in records])
    assert rep.overall_sr == 0.0 and rep.mean_errors == {} and rep.n_matched == 0


def test_seven_of_ten():
    records = []
    for k in range(10):
        pred = REV if k < 7 else perturbed(REV, 0.4)
        records.append(([REV], [pred], 1.0, f"s{k}"))
    rep = evaluate_dataset(records)
    assert rep.overall_sr == pytest.approx(0.7)
    assert sum(r.success for r in rep.per_joint) == 7


def test_spurious_predictions_counted():
    rep = evaluate_dataset([([REV], [REV, PRI], 1.0)])
    assert rep.overall_sr == 1.0 and rep.spurious_count == 1


@given(st.lists(st.floats(0, 0.6), min_size=1, max_size=12), st.floats(0.05, 0.3), st.floats(0.05, 0.3))
def test_tightening_thresholds_never_raises_sr(tilts, a, b):
    records = [([REV], [perturbed(REV, t)], 1.0, str(k)) for k, t in enumerate(tilts)]
    lo, hi = sorted((a, b))
    sr_hi = evaluate_dataset(records, Thresholds(axis_angle=hi)).overall_sr
    sr_lo = evaluate_dataset(records, Thresholds(axis_angle=lo)).overall_sr
    assert sr_lo <= sr_hi


def test_report_outputs_are_order_independent():
    records = [([REV], [perturbed(REV, 0.1 * k)], 1.0, f"s{k}") for k in range(5)]
    a = evaluate_dataset(records)
    b = evaluate_dataset(records[::-1])
    assert a.to_json() == b.to_json() and a.to_csv() == b.to_csv()
    d = json.loads(a.to_json())
    assert {"overall_sr", "mean_errors", "n_gt", "n_matched", "spurious_count", "per_joint"} <= set(d)
    assert a.to_csv().splitlines()[0] == "scene,gt_index,slot,type,origin,axis_angle,direction,range,success"
    assert "overall_sr" in a.summary_table()
