import math

import numpy as np
import pytest

from regstab import nhi
from regstab.core import (ControlSetDesc, InfeasibleCompactification,
                          MonotoneTable, TargetDesc, distance_to_target,
                          make_partition, min_hamiltonian)

from conftest import make_sys_1d


def test_hamiltonian_nhi_disk_minimum():
    sys_ = nhi.make_nhi_system(p0=0.0)
    x = np.array([1.0, 0.0, 0.0])
    p = np.array([2.0, 0.0, -2.0])
    # default resolution keeps exact lattice ties; value within the tie chord
    val, u = min_hamiltonian(sys_, x, 0.0, p, 1.0)
    assert val == pytest.approx(-2.0 * math.sqrt(2.0), abs=2e-2)
    # error shrinks like the grid step (exact lattice ties shorten as sqrt(h))
    val, u = min_hamiltonian(sys_, x, 0.0, p, 1.0, h=1.0 / 512.0)
    assert val == pytest.approx(-2.0 * math.sqrt(2.0), abs=5e-4)
    assert np.allclose(u, [-1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)],
                       atol=2e-2)


def test_hamiltonian_zero_covector_zero_cost():
    sys_ = nhi.make_nhi_system(p0=0.0)
    val, u = min_hamiltonian(sys_, np.array([1.0, 0.0, 0.0]), 0.0,
                             np.zeros(3), 1.0)
    assert val == 0.0


def test_hamiltonian_1d_interval():
    sys_ = make_sys_1d()
    val, u = min_hamiltonian(sys_, np.array([0.5]), 1.0, np.array([2.0]), 1.0)
    assert val == pytest.approx(-1.0, abs=1e-12)
    assert u[0] == pytest.approx(-1.0)


def test_hamiltonian_preconditions():
    sys_ = make_sys_1d()
    with pytest.raises(ValueError):
        min_hamiltonian(sys_, np.array([0.0]), 1.0, np.array([1.0]), 1.0)
    with pytest.raises(ValueError):
        min_hamiltonian(sys_, np.array([0.5]), 1.0, np.array([1.0]), -1.0)


def test_hamiltonian_infeasible_compactification():
    sys_ = make_sys_1d()
    far = ControlSetDesc.finite([[5.0]])
    sys_.control_set = far
    with pytest.raises(InfeasibleCompactification):
        min_hamiltonian(sys_, np.array([0.5]), 0.0, np.array([1.0]), 1.0)


def test_hamiltonian_monotone_in_radius():
    sys_ = nhi.make_nhi_system(p0=0.0)
    sys_.control_set = ControlSetDesc.unbounded(2)
    x = np.array([1.0, 0.0, 0.0])
    p = np.array([1.0, -1.0, 0.5])
    vals = [min_hamiltonian(sys_, x, 0.0, p, N, h=1.0 / 32.0)[0]
            for N in (0.5, 1.0, 2.0, 4.0)]
    for small, big in zip(vals, vals[1:]):
        assert big <= small + 1e-9 * max(1.0, abs(small))


def test_hamiltonian_positive_homogeneity_in_p():
    # grid is symmetric and fixed, so doubling p doubles the value exactly
    sys_ = nhi.make_nhi_system(p0=0.0)
    x = np.array([0.7, -0.2, 0.4])
    p = np.array([0.3, 1.1, -0.8])
    v1, _ = min_hamiltonian(sys_, x, 0.0, p, 1.0)
    v2, _ = min_hamiltonian(sys_, x, 0.0, 2.0 * p, 1.0)
    assert v2 == pytest.approx(2.0 * v1, rel=1e-12)


def test_grid_deterministic_and_lexicographic():
    cs = ControlSetDesc.ball(1.0, dim=2)
    g1 = cs.grid(1.0, 1.0 / 16.0)
    g2 = cs.grid(1.0, 1.0 / 16.0)
    assert g1 is g2  # cached
    # C-order: first coordinate varies slowest
    assert g1[0, 0] <= g1[-1, 0]
    assert all(cs.contains(u) for u in g1[:50])


def test_partition_uniform_and_jittered():
    p = make_partition(0.5)
    times = p.times_until(2.0)
    assert np.allclose(times[:5], [0.0, 0.5, 1.0, 1.5, 2.0])

    j = make_partition(0.5, mode="jittered", seed=7)
    times = j.times_until(10.0)
    gaps = np.diff(times)
    assert np.all(gaps >= 0.25 - 1e-12) and np.all(gaps <= 0.5 + 1e-12)
    assert gaps.max() <= j.diameter + 1e-12

    # identical seeds give identical partitions
    j2 = make_partition(0.5, mode="jittered", seed=7)
    assert np.array_equal(j2.times_until(10.0), times)


def test_partition_lazy_extension_and_validation():
    p = make_partition(0.3)
    for horizon in (1.0, 7.5, 123.0):
        assert p.times_until(horizon)[-1] >= horizon
    with pytest.raises(ValueError):
        make_partition(0.0)
    with pytest.raises(ValueError):
        make_partition(1.0, mode="random")


def test_distance_to_target():
    sys_ = nhi.make_nhi_system(p0=0.0)
    assert distance_to_target(sys_, np.array([1.0, 0.0, 0.0])) == 1.0
    assert distance_to_target(sys_, np.zeros(3)) == 0.0
    ball = TargetDesc.ball(np.zeros(2), 1.0)
    assert ball.distance(np.array([1.0, 0.0])) == 0.0
    assert ball.distance(np.array([3.0, 0.0])) == pytest.approx(2.0)


def test_target_distance_is_one_lipschitz():
    t = TargetDesc.point(3)
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = rng.standard_normal(3), rng.standard_normal(3)
        assert abs(t.distance(a) - t.distance(b)) <= np.linalg.norm(a - b) + 1e-12


def test_monotone_table_eval_and_inverse():
    t = MonotoneTable([1.0, 2.0, 4.0], [0.5, 1.0, 3.0], extend_low="zero",
                      extend_high="slope")
    assert t(2.0) == pytest.approx(1.0)
    assert t(3.0) == pytest.approx(2.0)
    assert t(0.5) == pytest.approx(0.25)   # linear through the origin
    assert t.inverse(1.0) == pytest.approx(2.0)
    assert t.inverse(t(3.3)) == pytest.approx(3.3)
    with pytest.raises(ValueError):
        MonotoneTable([1.0, 1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        MonotoneTable([1.0, 2.0], [1.0, 0.0])


def test_control_set_projection():
    cs = ControlSetDesc.unbounded(2)
    u = cs.project_ball(np.array([3.0, 4.0]), 1.0)
    assert np.linalg.norm(u) <= 1.0 + 1e-12
    assert np.allclose(u, [0.6, 0.8])


def test_system_spot_check_passes():
    sys_ = nhi.make_nhi_system(p0=0.5)
    sys_.spot_check(2.0)
