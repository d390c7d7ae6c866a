import math

import numpy as np
import pytest

from regstab.certify import fit_distance_rate
from regstab.core import BoxTooSmall
from regstab.probes import fd_gradient
from regstab.regularize import (EstimatesDegenerate, LevelConstants, Psi,
                                RegularityEstimates, SublevelStats,
                                alpha_schedule, build_psi,
                                build_semiconcave_mrf, check_halved_decrease,
                                inf_convolution, load_mrf_grid,
                                moreau_envelope_grid, save_mrf_grid)

from conftest import make_sys_1d, make_w_abs

BOX = (np.array([-4.0]), np.array([4.0]))


def w_abs_value(x):
    return abs(float(x[0]))


def test_inf_convolution_examples():
    r = inf_convolution(w_abs_value, 1.0, np.array([1.0]), BOX)
    assert r.value == pytest.approx(0.75, abs=1e-8)
    assert r.argmin[0] == pytest.approx(0.5, abs=1e-6)
    assert r.subgradient[0] == pytest.approx(1.0, abs=1e-5)

    r = inf_convolution(w_abs_value, 1.0, np.array([0.0]), BOX)
    assert r.value == pytest.approx(0.0, abs=1e-10)

    r = inf_convolution(w_abs_value, 1.0, np.array([0.25]), BOX)
    assert r.value == pytest.approx(0.0625, abs=1e-8)
    assert r.argmin[0] == pytest.approx(0.0, abs=1e-5)


def test_inf_convolution_box_too_small():
    with pytest.raises(BoxTooSmall):
        inf_convolution(w_abs_value, 0.01, np.array([30.0]),
                        (np.array([29.5]), np.array([30.5])))
    with pytest.raises(ValueError):
        inf_convolution(w_abs_value, -1.0, np.array([0.0]), BOX)


def test_inf_convolution_monotone_in_alpha():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.uniform(-2.0, 2.0, size=1)
        v1 = inf_convolution(w_abs_value, 1.0, x, BOX).value
        v2 = inf_convolution(w_abs_value, 4.0, x, BOX).value
        assert v1 <= v2 + 1e-10
        assert v2 <= w_abs_value(x) + 1e-10


def test_subgradient_consistency():
    # 2 alpha (x - argmin) is a finite-difference gradient of the envelope
    def envelope(x):
        return inf_convolution(w_abs_value, 1.0, x, BOX).value

    for xv in (0.8, 1.5, -2.0):
        x = np.array([xv])
        sub = inf_convolution(w_abs_value, 1.0, x, BOX).subgradient
        fd = fd_gradient(envelope, x, 1e-5)
        assert np.allclose(sub, fd, atol=1e-3)


def test_alpha_schedule_example():
    est = RegularityEstimates()
    est.add(LevelConstants(n=1, M_n=5.0, m_n=0.5, L_W=2.0, L_f=1.0, L_l=1.0))
    assert alpha_schedule(est, 1.0, 1) == pytest.approx(33.0)
    # third branch floor
    est2 = RegularityEstimates()
    est2.add(LevelConstants(n=3, M_n=50.0, m_n=100.0, L_W=1.0, L_f=0.1,
                            L_l=0.0))
    assert alpha_schedule(est2, 0.0, 3) >= 33.0 - 1e-12
    # nondecreasing in the cost weight
    a_lo = alpha_schedule(est, 0.5, 1)
    a_hi = alpha_schedule(est, 2.0, 1)
    assert a_hi >= a_lo
    bad = RegularityEstimates()
    with pytest.raises(EstimatesDegenerate):
        bad.add(LevelConstants(n=1, M_n=1.0, m_n=0.5, L_W=-1.0, L_f=1.0,
                               L_l=1.0))


def test_psi_clauses():
    n = 2
    psi = Psi(n, lift=30.0)
    # (i) exact shift on [0, 1/(2n)]
    t = 1.0 / (4.0 * n)
    assert psi(t) == pytest.approx(t + 1.0 / (8.0 * n), abs=1e-15)
    # (ii) identity inside [1/n - 1/(8n), 10n]
    assert psi(float(n)) == float(n)
    assert psi(10.0 * n) == 10.0 * n
    # (iv) derivative at least 1/2 on a dense sample
    ts = np.linspace(0.0, 12.0 * n, 1000)
    assert np.all(psi.derivative(ts) >= 0.5 - 1e-12)
    # increasing
    vals = psi(np.linspace(0.0, 25.0 * n, 2000))
    assert np.all(np.diff(vals) >= 0)


def test_build_psi_tail_clause():
    n = 1
    t_nodes = np.linspace(10.0, 14.0, 50)
    stats = SublevelStats(t_nodes, t_nodes + 0.1)
    psi = build_psi(n, stats)
    tail = t_nodes[t_nodes >= 11.0 * n - 1.0 / (8.0 * n)]
    assert np.all(psi(tail) >= 11.0 * n + tail + 0.1 - 1e-9)


def test_moreau_envelope_grid_matches_pointwise():
    axes = [np.linspace(-3.0, 3.0, 241)]
    vals = np.abs(axes[0])
    env = moreau_envelope_grid(vals, axes, alpha=2.0, radius=1.0)
    for i in (40, 120, 170, 205):
        x = np.array([axes[0][i]])
        exact = inf_convolution(w_abs_value, 2.0, x, BOX).value
        # grid minimisation is over nodes only: exact from above by <= a
        # one-cell quadratic overshoot
        assert exact <= env[i] + 1e-12
        assert env[i] <= exact + 2.0 * (axes[0][1] - axes[0][0]) ** 2 + 1e-9
    with pytest.raises(ValueError):
        moreau_envelope_grid(vals, [np.array([0.0, 1.0, 3.0])], 1.0, 1.0)


@pytest.fixture(scope="module")
def abs_pipeline():
    sys_ = make_sys_1d()
    w = make_w_abs()
    rate = fit_distance_rate(sys_, w, 0.5, {"w_lo": 0.05, "w_hi": 12.0},
                             budget=100)
    wbar, levels, est = build_semiconcave_mrf(sys_, w, 0.5, n_max=4,
                                              distance_rate=rate)
    return sys_, w, rate, wbar, levels, est


def test_pipeline_per_level_sandwich(abs_pipeline):
    sys_, w, rate, wbar, levels, est = abs_pipeline
    xs = np.linspace(-9.5, 9.5, 200)
    for level in levels:
        n = level.n
        for xv in xs[::7]:
            x = np.array([xv])
            conv = level.convolve(w.value, x)
            assert w.w(x) - 1.0 / (8.0 * n) - 1e-9 <= conv.value <= w.w(x) + 1e-9


def test_pipeline_wbar_below_w_on_covered_band(abs_pipeline):
    sys_, w, rate, wbar, levels, est = abs_pipeline
    n_max = levels[-1].n
    # the truncated minimum covers value levels [1/n_max, 10 n_max]
    xs = np.linspace(1.0 / n_max, 9.9, 150)
    for xv in xs:
        assert wbar.w(np.array([xv])) <= xv + 1e-9
        assert wbar.w(np.array([-xv])) <= xv + 1e-9


def test_pipeline_alphas_hand_checkable(abs_pipeline):
    # L_W = 1 for |x|: the 11n branch dominates the schedule
    *_, levels, est = abs_pipeline
    for level in levels:
        assert level.alpha == pytest.approx(11.0 * level.n, rel=0.35)


def test_pipeline_halved_decrease(abs_pipeline):
    sys_, w, rate, wbar, levels, est = abs_pipeline
    report = check_halved_decrease(sys_, wbar, 0.5,
                                   {"w_lo": 0.3, "w_hi": 5.0}, rate,
                                   budget=48)
    assert report.certified
    assert report.min_margin > 0


def test_pipeline_shift_identity_near_zero(abs_pipeline):
    # below the 1/(2n) band of the deepest level the composition is the
    # convolution plus the exact shift
    sys_, w, rate, wbar, levels, est = abs_pipeline
    deepest = levels[-1]
    n = deepest.n
    x = np.array([1.0 / (16.0 * n)])
    conv = deepest.convolve(w.value, x)
    if conv.value <= 1.0 / (2.0 * n):
        expect = conv.value + 1.0 / (8.0 * n)
        assert deepest.value(w.value, x) == pytest.approx(expect, abs=1e-12)


def test_pipeline_level_switch_continuity(abs_pipeline):
    sys_, w, rate, wbar, levels, est = abs_pipeline
    evaluator = wbar._evaluator
    xs = np.linspace(0.3, 9.5, 400)
    prev_n = None
    for xv in xs:
        val, lev, conv = evaluator.detail(np.array([xv]))
        if prev_n is not None and lev.n != prev_n:
            # candidate values from both levels agree near the switch
            others = [la.psi(la.convolve(w.value, np.array([xv])).value)
                      for la in levels]
            assert min(others) == pytest.approx(val, abs=1e-9)
        prev_n = lev.n


def test_grid_export_roundtrip(abs_pipeline, tmp_path):
    sys_, w, rate, wbar, levels, est = abs_pipeline
    path = tmp_path / "wbar_grid"
    save_mrf_grid(wbar, [-6.0], [6.0], [121], path)
    loaded = load_mrf_grid(path)
    for xv in (0.5, 1.7, -3.2):
        assert loaded.w(np.array([xv])) == pytest.approx(
            wbar.w(np.array([xv])), abs=5e-3)
