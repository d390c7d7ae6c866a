import math

import numpy as np
import pytest

from regstab import nhi
from regstab.certify import CandidateMRF, RateFunction
from regstab.core import (ControlSetDesc, ControlSystem, MonotoneTable,
                          SystemBounds, TargetDesc)
from regstab.feedback import feedback_margin, synthesize_feedback

from conftest import make_sys_1d, make_w_2abs


def test_feedback_1d_sign():
    sys_ = make_sys_1d()
    w = make_w_2abs()
    fb = synthesize_feedback(sys_, w, 1.0, 1.0)
    assert fb(np.array([0.5]))[0] == pytest.approx(-1.0)
    assert fb(np.array([-0.3]))[0] == pytest.approx(1.0)


def test_feedback_nhi_disk_direction():
    sys_ = nhi.make_nhi_system(p0=0.0)
    w1 = nhi.make_w1_mrf()
    # selection with known covector (2, 0, -2) at (1, 0, 0)
    probe = CandidateMRF(
        dim=3, value=nhi.nhi_W1,
        gradient_selection=lambda x: np.array([2.0, 0.0, -2.0]),
        regularity="semiconcave", proper_hint=w1.proper_hint)
    fb = synthesize_feedback(sys_, probe, 0.0, 1.0, h=1.0 / 512.0)
    u = fb(np.array([1.0, 0.0, 0.0]))
    assert np.allclose(u, [-1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)],
                       atol=2e-2)


def test_feedback_large_cost_weight_pulls_to_zero():
    # quadratic control penalty dominating: minimiser of p*u + p0*u^2
    sys_ = ControlSystem(
        state_dim=1, control_dim=1,
        dynamics=lambda x, u: np.array([u[0]]),
        lagrangian=lambda x, u: float(u[0]) ** 2,
        control_set=ControlSetDesc.box([-1.0], [1.0]),
        target=TargetDesc.point(1),
        bounds=SystemBounds(M=lambda R: 2.0, Mtilde=lambda R: 1.0),
    )
    w = make_w_2abs()
    for p0 in (10.0, 100.0):
        fb = synthesize_feedback(sys_, w, p0, 1.0, h=1.0 / 256.0)
        u = fb(np.array([0.5]))[0]
        # analytic minimiser -p/(2 p0) with p = 2
        assert u == pytest.approx(-1.0 / p0, abs=3e-3)


def test_feedback_margin_1d():
    sys_ = make_sys_1d()
    w = make_w_2abs()
    fb = synthesize_feedback(sys_, w, 1.0, 1.0)
    x = np.array([0.5])
    # H = -1, gamma(W=1) = 1/4: margin = 0.75
    assert feedback_margin(sys_, fb, x) == pytest.approx(0.75, abs=1e-3)
    # margin matches the certification formula at the same state
    p = w.gradient_selection(x)
    u = fb(x)
    drift = float(p @ sys_.dynamics(x, u)) + 1.0 * sys_.lagrangian(x, u)
    assert feedback_margin(sys_, fb, x) == pytest.approx(
        -drift - w.rate(w.w(x)), abs=1e-12)
    with pytest.raises(ValueError):
        feedback_margin(sys_, fb, np.array([0.0]))


def test_feedback_margin_sign_flips_with_steep_rate():
    sys_ = make_sys_1d()
    w = make_w_2abs()
    fb = synthesize_feedback(sys_, w, 1.0, 1.0)
    steep = RateFunction.from_callable(lambda t: 2.0 * t, 1e-3, 40.0)
    assert feedback_margin(sys_, fb, np.array([0.5]), rate=steep) < 0


def test_feedback_determinism_and_cache():
    sys_ = nhi.make_nhi_system(p0=0.0)
    w1 = nhi.make_w1_mrf()
    fb = synthesize_feedback(sys_, w1, 0.0, 1.0)
    x = np.array([0.7, -0.3, 0.4])
    u1 = fb(x)
    # nearby state inside the same quantisation cell hits the cache
    u2 = fb(x + 1e-9)
    assert np.array_equal(u1, u2)
    fb2 = synthesize_feedback(sys_, w1, 0.0, 1.0)
    assert np.array_equal(fb2(x), u1)


def test_feedback_respects_radius_table():
    sys_ = ControlSystem(
        state_dim=1, control_dim=1,
        dynamics=lambda x, u: np.array([u[0]]),
        lagrangian=lambda x, u: 1.0,
        control_set=ControlSetDesc.unbounded(1),
        target=TargetDesc.point(1),
        bounds=SystemBounds(M=lambda R: 100.0, Mtilde=lambda R: 100.0),
    )
    w = make_w_2abs()
    table = MonotoneTable([0.5, 1.0, 2.0], [0.25, 1.0, 3.0])
    fb = synthesize_feedback(sys_, w, 0.0, table)
    for xv in (0.1, 0.3, 0.6, 2.0, 9.0):
        x = np.array([xv])
        u = fb(x)
        allowed = fb.radius_at(w.w(x))
        assert np.linalg.norm(u) <= allowed + 1e-9
    # below the smallest computed level the table clamps
    assert fb.radius_at(0.01) == 0.25
    assert fb.clamp_hits > 0
