import math

import numpy as np
import pytest

from regstab import nhi
from regstab.bridge import (BridgeTables, ComparisonFn, add_delta_table,
                            bridge_over, bridge_under, build_bridge_tables,
                            distance_comparison, r_of_delta, schedule_delta)
from regstab.certify import RateFunction, fit_rate_gamma
from regstab.core import MonotoneTable
from regstab.feedback import synthesize_feedback

from _oracles import ball_max, sphere_min
from conftest import make_sys_1d, make_w_2abs


def self_comparison(mrf):
    return ComparisonFn(dim=mrf.dim, value=mrf.value,
                        proper_hint=mrf.proper_hint, ray_solve=mrf.ray_solve)


def test_bridge_identity_case():
    w = make_w_2abs()
    comp = self_comparison(w)
    assert bridge_under(w, comp, 1.0) == pytest.approx(0.95)
    assert bridge_over(w, comp, 1.0) == pytest.approx(1.05)
    assert bridge_under(w, comp, 1.0) <= bridge_over(w, comp, 1.0)


def test_bridge_w2_values_against_oracles():
    w2 = nhi.make_w2_mrf()
    comp = distance_comparison(nhi.make_nhi_system(p0=0.0).target)
    under = bridge_under(w2, comp, 1.0)
    # min of W2 on the unit sphere is 1/sqrt(5) (both branches equal there)
    oracle, _ = sphere_min(nhi.nhi_W2, 1.0)
    assert under == pytest.approx(0.95 / math.sqrt(5.0), rel=1e-6)
    assert oracle == pytest.approx(1.0 / math.sqrt(5.0), rel=1e-3)

    over = bridge_over(w2, comp, 1.0)
    oracle_max, _ = ball_max(nhi.nhi_W2, 1.0)
    assert over == pytest.approx(1.05, rel=1e-6)
    assert oracle_max == pytest.approx(1.0, rel=1e-3)


def test_bridge_monotone_in_radius():
    w2 = nhi.make_w2_mrf()
    comp = distance_comparison(nhi.make_nhi_system(p0=0.0).target)
    rs = [0.25, 0.5, 1.0, 2.0]
    unders = [bridge_under(w2, comp, r) for r in rs]
    overs = [bridge_over(w2, comp, r) for r in rs]
    assert unders == sorted(unders)
    assert overs == sorted(overs)


def test_w2_homogeneity_of_bridges():
    w2 = nhi.make_w2_mrf()
    comp = distance_comparison(nhi.make_nhi_system(p0=0.0).target)
    g1 = bridge_under(w2, comp, 0.7)
    g2 = bridge_under(w2, comp, 1.4)
    assert g2 / g1 == pytest.approx(2.0, rel=0.02)


def test_sandwich_on_probes():
    sys_ = nhi.make_nhi_system(p0=0.0)
    w2 = nhi.make_w2_mrf()
    tables = build_bridge_tables(w2, sys_.target, np.geomspace(0.05, 3.0, 17))
    tables.validate()
    rng = np.random.default_rng(11)
    pts = rng.standard_normal((1000, 3))
    pts *= rng.uniform(0.1, 2.5, size=(1000, 1)) / np.linalg.norm(
        pts, axis=1, keepdims=True)
    d = np.linalg.norm(pts, axis=1)
    w = nhi.nhi_W2(pts)
    under = tables.under(d)
    over = tables.over(d)
    assert np.all(under <= w + 1e-12)
    assert np.all(w <= over + 1e-12)
    # inner level stays below the covering level for nested radii
    for r, R in [(0.2, 1.0), (0.5, 2.0)]:
        assert tables.level_inside_ball(r) < tables.level_covering_ball(R)


def test_schedule_delta_cap_term():
    # with inner level 0.4, L = 2 and m = 5 the cap is 0.4/(4*2*5) = 0.01
    sys_ = make_sys_1d()
    w = make_w_2abs()
    fb = synthesize_feedback(sys_, w, 1.0, 1.0)
    tables = BridgeTables(
        under=MonotoneTable([0.2], [0.4]),
        over=MonotoneTable([2.0], [4.0]),
    )
    delta = schedule_delta(sys_, w, fb, 1.0, tables, 0.2, 2.0, w.rate,
                           probe_budget=6, L=2.0, m=5.0, h_ode=0.05)
    assert delta == pytest.approx(0.01)
    assert delta <= 0.01 + 1e-12


def test_schedule_delta_1d_chain():
    sys_ = make_sys_1d()
    w = make_w_2abs()
    fb = synthesize_feedback(sys_, w, 1.0, 1.0)
    tables = build_bridge_tables(w, sys_.target, np.geomspace(0.05, 4.0, 15),
                                 budget=64)
    rate = fit_rate_gamma(sys_, w, 1.0, {"w_lo": 0.05, "w_hi": 4.5},
                          N_table=1.0, budget=64)
    delta = schedule_delta(sys_, w, fb, 1.0, tables, 0.25, 1.0, rate,
                           probe_budget=16, h_ode=0.02)
    assert delta > 0
    # monotone in r: smaller target radius cannot need a larger diameter
    delta_small = schedule_delta(sys_, w, fb, 1.0, tables, 0.1, 1.0, rate,
                                 probe_budget=16, h_ode=0.02)
    assert delta_small <= delta + 1e-12


def test_schedule_delta_positive_for_nhi_w1():
    sys_ = nhi.make_nhi_system(lagrangian_mode="sqrtv", C=1.0, p0=0.5)
    w1 = nhi.make_w1_mrf()
    fb = synthesize_feedback(sys_, w1, 0.5, 1.0)
    tables = build_bridge_tables(w1, sys_.target, np.geomspace(0.0125, 3.0, 17),
                                 budget=512)
    mu = tables.level_inside_ball(0.1)
    rate = fit_rate_gamma(sys_, w1, 0.5, {"w_lo": mu / 8.0, "w_hi":
                                          2.2 * tables.level_covering_ball(1.0)},
                          budget=128)
    # trimmed probe budget keeps this exercise desk-scale
    delta = schedule_delta(sys_, w1, fb, 0.5, tables, 0.1, 1.0, rate,
                           probe_budget=2, h_ode=0.01, delta_max=0.004)
    assert delta > 0


def test_delta_table_and_inverse():
    tables = BridgeTables(
        under=MonotoneTable([0.1, 1.0], [0.05, 0.5]),
        over=MonotoneTable([0.1, 1.0], [0.2, 2.0]),
    )
    r_nodes = np.array([0.1, 0.2, 0.4, 0.8])
    deltas = np.array([0.01, 0.02, 0.05, 0.08])
    tables.delta_tables[1.0] = MonotoneTable(r_nodes, deltas,
                                             extend_low="zero")
    # node inversion
    assert tables.radius_of_delta(0.02, 1.0) == pytest.approx(0.2)
    # monotone inverse
    assert (tables.radius_of_delta(0.015, 1.0)
            <= tables.radius_of_delta(0.03, 1.0))
    # endpoint: the largest tabulated diameter maps back to the outer radius
    assert tables.radius_of_delta(0.08, 1.0) == pytest.approx(0.8)
    assert tables.radius_of_delta(0.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        tables.radius_of_delta(0.5, 1.0)
    with pytest.raises(KeyError):
        tables.radius_of_delta(0.01, 7.0)


def test_add_delta_table_monotone(sys_1d):
    sys_ = make_sys_1d()
    w = make_w_2abs()
    fb = synthesize_feedback(sys_, w, 1.0, 1.0)
    tables = build_bridge_tables(w, sys_.target, np.geomspace(0.05, 4.0, 15),
                                 budget=64)
    rate = fit_rate_gamma(sys_, w, 1.0, {"w_lo": 0.05, "w_hi": 4.5},
                          N_table=1.0, budget=64)
    add_delta_table(tables, sys_, w, fb, 1.0, rate, R=1.0,
                    r_nodes=[0.1, 0.25, 0.5], probe_budget=8, h_ode=0.02)
    table = tables.delta_tables[1.0]
    assert np.all(np.diff(table.values) >= 0)
    r0 = 0.25
    assert r_of_delta(tables, tables.delta_at(r0, 1.0), 1.0) == pytest.approx(
        r0, rel=1e-6)


def test_tables_json_roundtrip():
    w = make_w_2abs()
    tables = build_bridge_tables(w, make_sys_1d().target,
                                 np.geomspace(0.05, 4.0, 9), budget=64)
    tables.delta_tables[1.0] = MonotoneTable([0.1, 0.5], [0.01, 0.04])
    data = tables.to_dict()
    back = BridgeTables.from_dict(data)
    assert np.allclose(back.under.nodes, tables.under.nodes)
    assert np.allclose(back.under.values, tables.under.values)
    assert back.delta_at(0.3, 1.0) == tables.delta_at(0.3, 1.0)
