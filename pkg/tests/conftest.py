import math

import numpy as np
import pytest

from regstab.certify import CandidateMRF, RateFunction
from regstab.core import (ControlSetDesc, ControlSystem, SystemBounds,
                          TargetDesc)


def make_sys_1d():
    """Unit-speed scalar system: xdot = u, u in [-1, 1], l = 1, target {0}."""
    return ControlSystem(
        state_dim=1, control_dim=1,
        dynamics=lambda x, u: np.array([u[0]]),
        lagrangian=lambda x, u: 1.0,
        control_set=ControlSetDesc.box([-1.0], [1.0]),
        target=TargetDesc.point(1),
        bounds=SystemBounds(M=lambda R: math.sqrt(2.0), Mtilde=lambda R: 1.0),
        name="unit_speed_1d",
    )


def make_decay_1d():
    """Autonomous decay xdot = -x (single admissible control 0)."""
    return ControlSystem(
        state_dim=1, control_dim=1,
        dynamics=lambda x, u: np.array([-x[0]]),
        lagrangian=lambda x, u: 1.0,
        control_set=ControlSetDesc.finite([[0.0]]),
        target=TargetDesc.point(1),
        bounds=SystemBounds(M=lambda R: math.hypot(R, 1.0), Mtilde=lambda R: R),
        name="decay_1d",
    )


def make_w_2abs(rate=None):
    """Candidate W = 2|x| for the scalar system, with analytic selection."""
    if rate is None:
        rate = RateFunction.from_callable(lambda w: w / (2.0 * (1.0 + w)),
                                          1e-4, 40.0, n=200)
    return CandidateMRF(
        dim=1,
        value=lambda x: 2.0 * abs(float(x[0])),
        gradient_selection=lambda x: np.array([2.0 * math.copysign(1.0, x[0])]),
        regularity="semiconcave",
        proper_hint=lambda level: level / 2.0 + 1e-9,
        rate=rate,
        value_batch=lambda X: 2.0 * np.abs(np.atleast_2d(X)[:, 0]),
        ray_solve=lambda level, d: (level / 2.0) * np.asarray(d, dtype=float),
        name="two_abs",
    )


def make_w_abs():
    """Candidate W = |x| (Lipschitz input for the regularisation pipeline)."""
    return CandidateMRF(
        dim=1,
        value=lambda x: abs(float(x[0])),
        gradient_selection=lambda x: np.array([math.copysign(1.0, x[0])]),
        regularity="lipschitz",
        proper_hint=lambda level: level + 1e-9,
        value_batch=lambda X: np.abs(np.atleast_2d(X)[:, 0]),
        ray_solve=lambda level, d: level * np.asarray(d, dtype=float),
        name="abs",
    )


@pytest.fixture(scope="session")
def sys_1d():
    return make_sys_1d()


@pytest.fixture(scope="session")
def decay_1d():
    return make_decay_1d()


@pytest.fixture()
def w_2abs():
    return make_w_2abs()
