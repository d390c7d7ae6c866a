"""Limits of sampling runs under partition refinement.

A limit candidate is extracted by running the same closed loop over a
strictly decreasing sequence of partition diameters, interpolating every
run onto one common time grid, and measuring sup-norm gaps between
consecutive refinements on dyadic windows [0, T_w].  The finest run is
accepted as the limit when the last gap is below tolerance on every
window; non-Cauchy sequences are returned with ``accepted=False`` and
their diagnostics (refinement limits need not be unique, so refusal is a
legal outcome worth reporting, not an error).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .certify import CandidateMRF
from .core import Array, ControlSystem, make_partition
from .simulate import KLEnvelope, SamplingRun, sampling_trajectory, stable_entry_time


@dataclass
class EulerLimit:
    """Refinement-limit record.

    ``cauchy_gaps[w]`` lists the sup-norm distances between consecutive
    refinements on the window [0, w] (state and cost jointly).  ``t_exit``
    estimates the limit's target-contact time (+inf when the grid never
    reaches the contact threshold); ``t_bar`` is the limit of the
    per-run stable-entry times when a radius map was supplied.
    """

    diameters: list
    runs: list
    t_grid: Array
    traj: Array
    cost: Array
    cauchy_gaps: dict
    accepted: bool
    windows: list
    t_exit: float
    t_bar: float | None
    entry_times: list
    m_bound: float
    z: Array
    d_z: float = 0.0
    notes: list = field(default_factory=list)

    def dist(self, sys: ControlSystem) -> Array:
        return np.array([sys.target.distance(x) for x in self.traj])


def _interp_run(run: SamplingRun, grid: Array) -> tuple[Array, Array]:
    cols = [np.interp(grid, run.t, run.states[:, i])
            for i in range(run.states.shape[1])]
    return np.stack(cols, axis=1), np.interp(grid, run.t, run.cost)


def euler_limit(sys: ControlSystem, feedback, z: Array, deltas, horizon: float,
                tol: float, h_ode: float | None = None,
                r_of_delta=None, d_tol: float | None = None,
                partition_mode: str = "uniform", seed: int = 0,
                mrf: CandidateMRF | None = None) -> EulerLimit:
    """Run the loop over refining partitions and extract the limit."""
    z = np.asarray(z, dtype=float)
    if sys.target.distance(z) <= 0:
        raise ValueError("initial state must lie off the target")
    deltas = [float(d) for d in deltas]
    if any(d2 >= d1 for d1, d2 in zip(deltas, deltas[1:])):
        raise ValueError("diameter sequence must be strictly decreasing")
    if h_ode is not None and deltas[-1] < 4.0 * h_ode:
        raise ValueError("diameters must stay above 4x the ODE step")

    runs = []
    entry_times = []
    for i, d in enumerate(deltas):
        part = make_partition(d, mode=partition_mode, seed=seed + i)
        rq = float(r_of_delta(d)) if r_of_delta is not None else None
        run = sampling_trajectory(sys, feedback, part, z, horizon,
                                  r_query=rq, h_ode=h_ode, d_tol=d_tol,
                                  mrf=mrf)
        runs.append(run)
        if rq is not None:
            entry_times.append(stable_entry_time(run, rq))

    dt = max(deltas[-1] / 16.0, horizon / 200_000.0)
    grid = np.arange(0.0, horizon + 0.5 * dt, dt)
    interp = [_interp_run(r, grid) for r in runs]

    windows = []
    w = 1.0
    while w < horizon:
        windows.append(w)
        w *= 2.0
    windows.append(horizon)

    gaps: dict = {w: [] for w in windows}
    for (xa, ca), (xb, cb) in zip(interp, interp[1:]):
        dx = np.max(np.abs(xa - xb), axis=1)
        dc = np.abs(ca - cb)
        for w in windows:
            mask = grid <= w + 1e-12
            gaps[w].append(float(max(np.max(dx[mask]), np.max(dc[mask]))))

    accepted = all(gaps[w][-1] < tol for w in windows) if len(runs) > 1 else False

    traj, cost = interp[-1]
    d0 = sys.target.distance(z)
    contact = d_tol if d_tol is not None else 1e-6 * d0
    if r_of_delta is not None:
        contact = max(contact, 1.5 * float(r_of_delta(deltas[-1])))
    dists = np.array([sys.target.distance(x) for x in traj])
    hit = np.flatnonzero(dists <= contact)
    t_exit = float(grid[hit[0]]) if hit.size else math.inf

    t_bar = None
    notes = []
    if entry_times:
        finite = [t for t in entry_times if math.isfinite(t)]
        t_bar = finite[-1] if finite else math.inf
        if any(b > a + 1e-9 for a, b in zip(entry_times, entry_times[1:])):
            notes.append("stable-entry times are not monotone along the "
                         "refinement; limit taken as the last finite value")

    return EulerLimit(
        diameters=deltas,
        runs=runs,
        t_grid=grid,
        traj=traj,
        cost=cost,
        cauchy_gaps=gaps,
        accepted=accepted,
        windows=windows,
        t_exit=t_exit,
        t_bar=t_bar,
        entry_times=entry_times,
        m_bound=max(r.m_observed for r in runs),
        z=z,
        d_z=d0,
        notes=notes,
    )


def check_euler_stability(el: EulerLimit, sys: ControlSystem,
                          envelope: KLEnvelope) -> tuple[bool, float]:
    """The limit trajectory stays under beta(d(z), t) on the whole grid
    (no inner-radius branch: the per-run radii vanish with the diameters)."""
    if not el.accepted:
        raise ValueError("stability check needs an accepted limit")
    d0 = sys.target.distance(el.z)
    beta_vals = np.asarray(envelope(d0, el.t_grid), dtype=float)
    dists = el.dist(sys)
    excess = float(np.max(dists - beta_vals))
    return excess <= 1e-12, excess


def check_euler_cost(el: EulerLimit, mrf: CandidateMRF, p0: float,
                     tol: float = 1e-9) -> tuple[bool, float]:
    """Cost of the limit before its exit estimate stays below W(z)/p0, and
    the exit estimate respects the d(z)/m lower bound (and the entry-time
    limit from above when available)."""
    if not el.accepted:
        raise ValueError("cost check needs an accepted limit")
    if p0 <= 0:
        raise ValueError("cost check needs p0 > 0")
    bound = mrf.w(el.z) / p0
    if math.isfinite(el.t_exit):
        mask = el.t_grid <= el.t_exit + 1e-12
        sup_cost = float(np.max(el.cost[mask]))
    else:
        sup_cost = float(np.max(el.cost))
    slack = bound + tol - sup_cost
    ok = slack >= 0.0
    lower = el.d_z / el.m_bound if el.m_bound > 0 else 0.0
    if el.t_exit < lower - tol:
        ok = False
    if el.t_bar is not None and math.isfinite(el.t_exit) \
            and math.isfinite(el.t_bar):
        if el.t_exit > el.t_bar + el.diameters[0] + tol:
            ok = False
    return ok, slack
