import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from artijoint.kinematics import Joint, JointType

settings.register_profile("artijoint", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("artijoint")


def random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_joint(rng, jt=None) -> Joint:
    jt = jt or rng.choice([JointType.REVOLUTE, JointType.PRISMATIC, JointType.CONTINUOUS])
    if jt == JointType.PRISMATIC:
        lo = rng.uniform(-0.3, 0.0)
        rng_ = (lo, lo + rng.uniform(0.05, 0.5))
    else:
        lo = rng.uniform(-1.0, 0.5)
        rng_ = (lo, lo + rng.uniform(0.2, 2.5))
    return Joint(jt, rng.uniform(-1, 1, 3), random_unit(rng), rng_)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
