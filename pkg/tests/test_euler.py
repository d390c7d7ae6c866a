import math

import numpy as np
import pytest

from regstab import nhi
from regstab.euler import check_euler_cost, check_euler_stability, euler_limit
from regstab.feedback import synthesize_feedback

from conftest import make_decay_1d, make_w_2abs


@pytest.fixture(scope="module")
def decay_limit():
    sys_ = make_decay_1d()
    deltas = [2.0 ** -i for i in range(1, 7)]
    return sys_, euler_limit(sys_, lambda x: np.zeros(1), np.array([1.0]),
                             deltas, 5.0, 1e-3)


def test_decay_limit_accuracy(decay_limit):
    sys_, el = decay_limit
    assert el.accepted
    x1 = float(np.interp(1.0, el.t_grid, el.traj[:, 0]))
    assert x1 == pytest.approx(math.exp(-1.0), abs=1e-4)


def test_decay_gaps_decreasing(decay_limit):
    _, el = decay_limit
    for w in el.windows:
        gaps = el.cauchy_gaps[w]
        assert all(b <= a + 1e-15 for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-3


def test_decay_cost_is_elapsed_time(decay_limit):
    # bounded control-independent running cost: the limit cost integrates it
    _, el = decay_limit
    for t in (0.5, 2.0, 4.0):
        assert float(np.interp(t, el.t_grid, el.cost)) == pytest.approx(
            t, abs=1e-6)


def test_decay_cost_check(decay_limit):
    sys_, el = decay_limit
    w = make_w_2abs()
    # W(z)/p0 = 2/0.25 = 8 never binds on [0, 5]: cost sup is 5
    ok, slack = check_euler_cost(el, w, 0.25)
    assert ok and slack == pytest.approx(8.0 - 5.0, abs=1e-6)
    # exit-time lower bound d(z)/m holds (exit estimate is +inf here)
    assert el.t_exit == math.inf
    assert el.d_z / el.m_bound > 0


def test_decay_stability_envelope(decay_limit):
    sys_, el = decay_limit
    ok, excess = check_euler_stability(
        el, sys_, lambda R, t: R * np.exp(-np.asarray(t) / 2.0))
    assert ok and excess <= 0
    ok, excess = check_euler_stability(el, sys_,
                                       lambda R, t: np.zeros_like(t))
    assert not ok


def test_euler_preconditions():
    sys_ = make_decay_1d()
    fb = lambda x: np.zeros(1)
    with pytest.raises(ValueError):
        euler_limit(sys_, fb, np.array([0.0]), [0.5, 0.25], 2.0, 1e-3)
    with pytest.raises(ValueError):
        euler_limit(sys_, fb, np.array([1.0]), [0.25, 0.5], 2.0, 1e-3)
    with pytest.raises(ValueError):
        euler_limit(sys_, fb, np.array([1.0]), [0.5, 0.1], 2.0, 1e-3,
                    h_ode=0.05)


def test_equi_lipschitz_runs(decay_limit):
    _, el = decay_limit
    for run in el.runs:
        dx = np.abs(np.diff(run.states[:, 0]))
        dt = np.diff(run.t)
        assert np.all(dx <= el.m_bound * dt + 1e-9)


def test_non_cauchy_reported_not_raised():
    # a single refinement cannot be accepted, only reported
    sys_ = make_decay_1d()
    el = euler_limit(sys_, lambda x: np.zeros(1), np.array([1.0]), [0.5],
                     2.0, 1e-12)
    assert not el.accepted
    with pytest.raises(ValueError):
        check_euler_stability(el, sys_, lambda R, t: np.ones_like(t))


def test_nhi_w2_equator_limit_settles_with_regulated_cost():
    # straight-line radial descent from the equator: the max-form branch
    # selection never touches the cone, so the halved-weight cost bound
    # W2(z)/(p0/2) = 4 is met with room
    sys_ = nhi.make_nhi_system(lagrangian_mode="constant", M_l=1.0, p0=0.5)
    w2 = nhi.make_w2_mrf()
    fb = synthesize_feedback(sys_, w2, 0.25, 1.0)
    z = np.array([1.0, 0.0, 0.0])
    el = euler_limit(sys_, fb, z, [0.2, 0.1, 0.05, 0.025], 6.0, 5e-3,
                     mrf=w2)
    assert el.accepted
    assert math.isfinite(el.t_exit)
    ok, slack = check_euler_cost(el, w2, 0.25)
    assert ok
    cost_at_exit = float(np.interp(el.t_exit, el.t_grid, el.cost))
    assert cost_at_exit <= 4.0 + 5e-3
    # transit sandwich: d(z)/m <= exit estimate
    assert el.t_exit >= el.d_z / el.m_bound - 1e-9
