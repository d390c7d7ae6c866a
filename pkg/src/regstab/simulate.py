"""Piecewise-constant-control sampling runs and their quantitative checks.

A run freezes the feedback at the left endpoint of every partition
interval and integrates state and accumulated cost together with
fixed-step RK4 (sub-step at most a sixteenth of the partition diameter,
and no larger than the configured ODE step).  Runs stop at the horizon,
on target contact (after which the record continues constantly), or when
the blow-up guard trips.  The checkers assert, sample by sample, every
quantitative guarantee the rest of the toolkit promises: the KL
stability envelope, the regulated-cost bound, the settling-time bound,
the transit-time lower bound, and the per-interval decrease inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .certify import CandidateMRF, RateFunction
from .core import Array, ControlSystem, Partition, SamplingRun

SUBSTEP_FRACTION = 16      # sub-step <= diam / SUBSTEP_FRACTION
D_TOL_FRACTION = 1e-6      # target-contact threshold, relative to d(z)
BLOW_UP_FACTOR = 1e3       # guard at |x| > BLOW_UP_FACTOR * |z|


def _rk4_step(sys: ControlSystem, x: Array, c: float, u: Array,
              dt: float) -> tuple[Array, float]:
    """One RK4 step of the state/cost pair with the control held fixed."""
    def rhs(xx):
        return np.asarray(sys.dynamics(xx, u), dtype=float), float(sys.lagrangian(xx, u))

    k1x, k1c = rhs(x)
    k2x, k2c = rhs(x + 0.5 * dt * k1x)
    k3x, k3c = rhs(x + 0.5 * dt * k2x)
    k4x, k4c = rhs(x + dt * k3x)
    x_new = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    c_new = c + (dt / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
    return x_new, c_new


def sampling_trajectory(sys: ControlSystem, feedback, partition: Partition,
                        z: Array, horizon: float, r_query: float | None = None,
                        h_ode: float | None = None, d_tol: float | None = None,
                        x_max: float | None = None,
                        mrf: CandidateMRF | None = None,
                        stop_when_w_below: float | None = None) -> SamplingRun:
    """Run the closed loop from z over the partition up to the horizon.

    ``feedback`` is any callable state -> control (typically a Feedback);
    the recorded candidate-value column uses ``mrf`` when given, else the
    feedback's own candidate, else NaN.  ``stop_when_w_below`` cuts the
    run once the candidate value drops below a threshold (used by the
    diameter schedule, whose probes only need the descent phase).
    """
    z = np.asarray(z, dtype=float)
    d0 = sys.target.distance(z)
    if d0 <= 0:
        raise ValueError("initial state must lie off the target")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if mrf is None:
        mrf = getattr(feedback, "mrf", None)
    w_of = (lambda x: mrf.w(x)) if mrf is not None else (lambda x: math.nan)
    d_tol = D_TOL_FRACTION * d0 if d_tol is None else float(d_tol)
    x_max = BLOW_UP_FACTOR * float(np.linalg.norm(z)) if x_max is None else float(x_max)

    times = partition.times_until(horizon)
    ts = [0.0]
    xs = [z.copy()]
    us = [np.zeros(sys.control_dim)]
    cs = [0.0]
    ds = [d0]
    ws = [w_of(z)]
    ivs = [0]

    x = z.copy()
    c = 0.0
    exit_time = math.inf
    reason = "horizon"
    frozen = False
    m_obs = 0.0

    j = 0
    while j + 1 < len(times) and times[j] < horizon:
        t0, t1 = float(times[j]), float(min(times[j + 1], horizon))
        j += 1
        if t1 <= t0:
            continue
        dt_int = t1 - t0
        cap = dt_int / SUBSTEP_FRACTION
        if h_ode is not None:
            cap = min(cap, h_ode)
        n_sub = max(1, int(math.ceil(dt_int / cap - 1e-12)))
        dt = dt_int / n_sub

        if frozen:
            for k in range(1, n_sub + 1):
                ts.append(t0 + k * dt)
                xs.append(x.copy())
                us.append(us[-1])
                cs.append(c)
                ds.append(ds[-1])
                ws.append(ws[-1])
                ivs.append(j - 1)
            continue

        u = np.asarray(feedback(x), dtype=float)
        f0 = np.asarray(sys.dynamics(x, u), dtype=float)
        l0 = float(sys.lagrangian(x, u))
        m_obs = max(m_obs, math.hypot(float(np.linalg.norm(f0)), l0))
        for k in range(1, n_sub + 1):
            x, c = _rk4_step(sys, x, c, u, dt)
            t = t0 + k * dt
            d = sys.target.distance(x)
            w_val = w_of(x)
            ts.append(t)
            xs.append(x.copy())
            us.append(u)
            cs.append(c)
            ds.append(d)
            ws.append(w_val)
            ivs.append(j - 1)
            if d <= d_tol:
                exit_time = t
                reason = "target_reached"
                frozen = True
                break
            if stop_when_w_below is not None and w_val <= stop_when_w_below:
                reason = "w_stop"
                break
            if float(np.linalg.norm(x)) > x_max:
                reason = "blow_up_guard"
                break
        if reason in ("blow_up_guard", "w_stop"):
            break

    run = SamplingRun(
        partition=partition,
        t=np.asarray(ts),
        states=np.asarray(xs),
        controls=np.asarray(us),
        cost=np.asarray(cs),
        dist=np.asarray(ds),
        w=np.asarray(ws),
        interval_id=np.asarray(ivs, dtype=int),
        exit_time=exit_time,
        terminated_reason=reason,
        m_observed=m_obs,
        z=z,
        r_query=r_query,
    )
    if r_query is not None:
        run.stable_entry = stable_entry_time(run, r_query)
    return run


# ---------------------------------------------------------------------------
# Entry / exit times
# ---------------------------------------------------------------------------

def stable_entry_time(run: SamplingRun, r: float) -> float:
    """First recorded time after which every recorded distance stays <= r.

    Zero when the whole record is inside the r-neighbourhood; +inf when
    the tail condition never holds before the horizon (or the run was cut
    by the blow-up guard, whose tail is unknown).
    """
    truncated = run.terminated_reason in ("blow_up_guard", "w_stop")
    above = np.flatnonzero(run.dist > r)
    if above.size == 0:
        return 0.0 if not truncated else math.inf
    last = int(above[-1])
    if last == run.dist.size - 1 or truncated:
        return math.inf
    return float(run.t[last + 1])


def min_transit_time(sys: ControlSystem, z: Array, eps: float, R: float) -> float:
    """Uniform lower bound (d(z) - eps)/Mtilde(R) on the time needed to
    reach the eps-neighbourhood of the target."""
    d0 = sys.target.distance(np.asarray(z, dtype=float))
    if not (0 < eps < d0 <= R):
        raise ValueError("need 0 < eps < d(z) <= R")
    return (d0 - eps) / float(sys.bounds.Mtilde(R))


def check_min_transit(run: SamplingRun, sys: ControlSystem, eps: float,
                      R: float, tol: float = 1e-9) -> bool:
    """No recorded sample enters the eps-ball before the transit bound,
    and a finite exit time respects d(z)/Mtilde(R)."""
    t_eps = min_transit_time(sys, run.z, eps, R)
    early = run.t <= t_eps + 1e-15
    if np.any(run.dist[early] < eps - tol):
        return False
    if math.isfinite(run.exit_time):
        d0 = sys.target.distance(run.z)
        if run.exit_time < d0 / float(sys.bounds.Mtilde(R)) - tol:
            return False
    return True


# ---------------------------------------------------------------------------
# KL envelope
# ---------------------------------------------------------------------------

@dataclass
class KLEnvelope:
    """Class-KL stability envelope beta(R, t).

    ``comparison_ode`` mode integrates w' = -rate(w)/2 from the covering
    level of the R-ball and maps the solution back to a radius through
    the inverse of the inner-level table.  ``empirical_envelope`` mode
    upper-bounds the observed distance envelope by a * exp(-lam * t).
    """

    mode: str
    tables: object | None = None
    rate: RateFunction | None = None
    dt: float = 2.0 ** -8
    amp: float | None = None
    lam: float | None = None
    R_fitted: float | None = None
    _paths: dict = field(default_factory=dict, repr=False)

    def _w_path(self, R: float, t_max: float) -> tuple[Array, Array]:
        key = round(float(R), 12)
        grid, vals = self._paths.get(key, (None, None))
        if grid is not None and grid[-1] >= t_max:
            return grid, vals
        w0 = float(self.tables.level_covering_ball(R))
        n = int(math.ceil(max(t_max, self.dt) / self.dt)) + 1
        grid = self.dt * np.arange(n + 1)
        vals = np.empty(n + 1)
        vals[0] = w0
        w = w0
        for i in range(n):
            w = self._ode_step(w, self.dt)
            vals[i + 1] = w
        self._paths[key] = (grid, vals)
        return grid, vals

    def _ode_step(self, w: float, dt: float) -> float:
        def g(v):
            return -0.5 * float(self.rate(max(v, 0.0)))

        k1 = g(w)
        k2 = g(w + 0.5 * dt * k1)
        k3 = g(w + 0.5 * dt * k2)
        k4 = g(w + dt * k3)
        return max(w + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), 0.0)

    def w_at(self, R: float, t: float) -> float:
        grid, vals = self._w_path(R, t + self.dt)
        i = min(int(t / self.dt), len(grid) - 1)
        w = float(vals[i])
        rem = t - grid[i]
        if rem > 0:
            w = self._ode_step(w, rem)
        return w

    def __call__(self, R: float, t) -> float | Array:
        if self.mode == "empirical_envelope":
            amp = self.amp
            val = amp * np.exp(-self.lam * np.asarray(t, dtype=float))
            return float(val) if np.ndim(t) == 0 else val
        if np.ndim(t) == 0:
            return float(self.tables.radius_for_level(self.w_at(R, float(t))))
        ts = np.asarray(t, dtype=float)
        grid, vals = self._w_path(R, float(ts.max()) + self.dt)
        ws = np.interp(ts, grid, vals)
        return np.asarray(self.tables.radius_for_level(ws), dtype=float)


def fit_KL_beta(runs: Sequence[SamplingRun], mode: str, tables=None,
                rate: RateFunction | None = None, margin: float = 0.05,
                dt: float = 2.0 ** -8) -> KLEnvelope:
    """Construct a KL envelope from shared tables (comparison mode) or
    from the monotone envelope of a family of runs (empirical mode)."""
    if mode == "comparison_ode":
        if tables is None or rate is None:
            raise ValueError("comparison mode needs bridge tables and a rate")
        return KLEnvelope(mode=mode, tables=tables, rate=rate, dt=dt)
    if mode != "empirical_envelope":
        raise ValueError(f"unknown KL fitting mode: {mode}")
    if len(runs) < 2:
        raise ValueError("empirical envelope needs at least two runs")
    t_end = min(float(r.t[-1]) for r in runs)
    grid = np.linspace(0.0, t_end, 512)
    env = np.zeros_like(grid)
    for r in runs:
        env = np.maximum(env, np.interp(grid, r.t, r.dist))
    R = max(float(r.dist[0]) for r in runs)
    amp = (1.0 + margin) * max(float(env[0]), 1e-12)
    mask = grid > grid[-1] / 16.0
    lam = float(np.min(np.log(amp / np.maximum(env[mask], 1e-12)) / grid[mask]))
    lam = max(lam, 1e-12)
    return KLEnvelope(mode=mode, amp=amp, lam=lam, R_fitted=R)


def check_rR_stability(run: SamplingRun, envelope: KLEnvelope, r: float,
                       R: float) -> tuple[bool, float]:
    """Assert d(x(t)) <= max(beta(R, t), r) at every sample.

    Returns (ok, worst excess); a nonpositive excess means the bound held
    everywhere.
    """
    if run.dist[0] > R + 1e-12:
        raise ValueError("initial distance exceeds R")
    beta_vals = envelope(R, run.t)
    bound = np.maximum(np.asarray(beta_vals, dtype=float), r)
    excess = float(np.max(run.dist - bound))
    return excess <= 1e-12, excess


def check_cost_bound(run: SamplingRun, mrf: CandidateMRF, p0: float, r: float,
                     quad_tol: float = 1e-9) -> tuple[bool, float]:
    """Accumulated cost at the stable-entry time stays below W(z)/p0."""
    if p0 <= 0:
        raise ValueError("cost bound needs p0 > 0")
    t_bar = stable_entry_time(run, r)
    if not math.isfinite(t_bar):
        raise ValueError("run has no finite stable-entry time for this r")
    bound = mrf.w(run.z) / p0
    if t_bar == 0.0:
        return True, bound
    cost = run.cost_at(t_bar)
    slack = bound + quad_tol - cost
    return slack >= 0.0, slack


def check_time_bound(run: SamplingRun, mrf: CandidateMRF, rate: RateFunction,
                     r: float, inner_level: float,
                     tol: float = 1e-9) -> tuple[bool, float]:
    """Settling-time bound: the stable-entry time for radius r is at most
    2 (W(z) - inner_level/4) / rate(inner_level/4), where ``inner_level``
    is the value level guaranteed to sit inside the r-ball."""
    if run.dist[0] <= r:
        raise ValueError("time bound applies to runs starting outside the r-ball")
    t_bar = stable_entry_time(run, r)
    quarter = inner_level / 4.0
    bound = 2.0 * (mrf.w(run.z) - quarter) / float(rate(quarter))
    return (t_bar <= bound + tol), bound


def check_lipschitz_bound(run: SamplingRun, m: float,
                          tol: float = 1e-6) -> bool:
    """Recorded increments obey |dx| <= m dt up to integrator tolerance."""
    dx = np.linalg.norm(np.diff(run.states, axis=0), axis=1)
    dt = np.diff(run.t)
    return bool(np.all(dx <= m * dt + tol))


# ---------------------------------------------------------------------------
# Per-interval decrease
# ---------------------------------------------------------------------------

def check_interval_decrease(run: SamplingRun, mrf: CandidateMRF, p0: float,
                            rate: RateFunction, w_stop: float = 0.0,
                            tol: float = 1e-12) -> tuple[bool, Array]:
    """Per-interval decrease of the value-plus-cost pair at every sub-step.

    On each partition interval [t_j, .) with anchor value W_j > w_stop the
    recorded samples must satisfy

        W(x(t)) - W_j + p0 * (cost(t) - cost_j) <= -rate(W_j)/2 * (t - t_j)

    checking stops at the first sample at or below ``w_stop`` (and at the
    exit time).  Returns (all margins >= -tol, margins).
    """
    margins = []
    w = run.w
    if np.any(np.isnan(w)):
        w = np.array([mrf.w(x) for x in run.states])
    stop_idx = w.size
    below = np.flatnonzero(w <= w_stop)
    if below.size:
        stop_idx = int(below[0])
    anchor = 0
    anchor_iv = run.interval_id[0]
    for k in range(1, w.size):
        if k >= stop_idx:
            break
        if run.t[k] > run.exit_time:
            break
        if run.interval_id[k] != anchor_iv:
            # the last sample of the previous interval sits exactly on the
            # new interval's start node
            anchor = k - 1
            anchor_iv = run.interval_id[k]
            if w[anchor] <= w_stop:
                break
        dt = float(run.t[k] - run.t[anchor])
        if dt <= 0:
            continue
        lhs = float(w[k] - w[anchor] + p0 * (run.cost[k] - run.cost[anchor]))
        rhs = -0.5 * float(rate(w[anchor])) * dt
        margins.append(rhs - lhs)
    margins = np.asarray(margins)
    ok = bool(margins.size == 0 or np.min(margins) >= -tol)
    return ok, margins


def telescoped_decrease(run: SamplingRun, mrf: CandidateMRF, p0: float,
                        t_bar: float) -> tuple[float, float, float]:
    """Sum the per-interval decrements up to t_bar.

    Returns (telescoped sum, direct value W(x(t_bar)) - W(z) +
    p0 * cost(t_bar), value at the last interval anchor).  The first two
    agree up to the cost quadrature tolerance; together with the anchor
    value they reproduce the aggregated decrease estimate
    sum <= -rate(anchor)/2 * t_bar.
    """
    w = run.w
    if np.any(np.isnan(w)):
        w = np.array([mrf.w(x) for x in run.states])
    mask = run.t <= t_bar + 1e-15
    idx = np.flatnonzero(mask)
    total = 0.0
    anchor = 0
    for k in idx[1:]:
        if run.interval_id[k] != run.interval_id[anchor]:
            total += float(w[k - 1] - w[anchor] + p0 * (run.cost[k - 1] - run.cost[anchor]))
            anchor = k - 1
    last = int(idx[-1])
    total += float(w[last] - w[anchor] + p0 * (run.cost[last] - run.cost[anchor]))
    direct = float(w[last] - w[0] + p0 * (run.cost[last] - run.cost[0]))
    return total, direct, float(w[anchor])
