"""Level-set bridges between a candidate function and a comparison scale,
and the sampling-diameter schedule built on top of them.

``bridge_under(r)`` estimates the largest value level whose sublevel set
fits inside {comparison < r}; ``bridge_over(r)`` the smallest level whose
sublevel set covers {comparison <= r}.  Both are extrema over
deterministic shell samples, shrunk respectively inflated by a safety
factor that absorbs the sampling error.  With the target distance as the
comparison these tables calibrate everything quantitative downstream:
the per-radius value levels, the admissible sampling diameter, and its
inverse radius map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import probes
from .certify import CandidateMRF, RateFunction
from .core import (Array, ControlSystem, MonotoneTable,
                   NotCertifiableAtResolution, ResolutionTooCoarse,
                   TargetDesc, make_partition)
from .simulate import check_interval_decrease, sampling_trajectory

DEFAULT_BUDGET = 4096
DEFAULT_EPS_SAFE = 0.05
DEFAULT_SHELL = 0.08


@dataclass
class ComparisonFn:
    """Positive definite, proper comparison scale (e.g. target distance)."""

    dim: int
    value: Callable[[Array], float]
    proper_hint: Callable[[float], float]
    special_directions: Array | None = None
    ray_solve: Callable[[float, Array], Array] | None = None


def distance_comparison(target: TargetDesc) -> ComparisonFn:
    boundary = target.boundary_sampler(1)
    offset = float(np.linalg.norm(np.asarray(boundary[0])))
    return ComparisonFn(dim=target.dim, value=target.distance,
                        proper_hint=lambda level: level + offset + 1e-9,
                        ray_solve=target.ray_solve)


def _merged_directions(mrf, comparison) -> Array | None:
    parts = [d for d in (getattr(mrf, "special_directions", None),
                         getattr(comparison, "special_directions", None))
             if d is not None and len(d)]
    if not parts:
        return None
    return np.vstack(parts)


def _shell_points(comparison, levels: Array, budget: int,
                  extra_directions: Array | None) -> Array:
    n_dirs = max(8, budget // max(len(levels), 1))
    dirs = probes.directions(comparison.dim, n_dirs)
    if extra_directions is not None and len(extra_directions):
        dirs = np.vstack([extra_directions, dirs])
    cap = float(comparison.proper_hint(float(levels[-1]))) * 1.25
    solve = getattr(comparison, "ray_solve", None)
    pts = []
    for d in dirs:
        for lev in levels:
            if solve is not None:
                pt = solve(lev, d)
            else:
                pt = probes.ray_level_point(comparison.value, lev, d, cap)
            if pt is not None:
                pts.append(pt)
    return np.asarray(pts) if pts else np.empty((0, comparison.dim))


def bridge_under(mrf: CandidateMRF, comparison, r: float,
                 budget: int = DEFAULT_BUDGET, eps_safe: float = DEFAULT_EPS_SAFE,
                 shell_thickness: float = DEFAULT_SHELL) -> float:
    """Certified lower bridge at radius r.

    Minimum of the candidate over a sample of the shell
    {r <= comparison <= r (1 + thickness)}, shrunk by (1 - eps_safe).
    """
    if r <= 0:
        raise ValueError("bridge radius must be positive")
    levels = np.linspace(r, r * (1.0 + shell_thickness), 3)
    pts = _shell_points(comparison, levels, budget,
                        _merged_directions(mrf, comparison))
    if pts.shape[0] == 0:
        raise ResolutionTooCoarse(f"empty shell sample at r={r}")
    vals = mrf.value_many(pts)
    return (1.0 - eps_safe) * float(np.min(vals))


def bridge_over(mrf: CandidateMRF, comparison, r: float,
                budget: int = DEFAULT_BUDGET, eps_safe: float = DEFAULT_EPS_SAFE,
                n_levels: int = 8) -> float:
    """Certified upper bridge at radius r: maximum of the candidate over a
    sample of {comparison <= r}, inflated by (1 + eps_safe)."""
    if r <= 0:
        raise ValueError("bridge radius must be positive")
    levels = np.linspace(r / n_levels, r, n_levels)
    pts = _shell_points(comparison, levels, budget,
                        _merged_directions(mrf, comparison))
    if pts.shape[0] == 0:
        raise ResolutionTooCoarse(f"empty sublevel sample at r={r}")
    vals = mrf.value_many(pts)
    return (1.0 + eps_safe) * float(np.max(vals))


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

@dataclass
class BridgeTables:
    """Monotone tables calibrating radii against value levels.

    ``under``/``over`` are the lower and upper bridges against the target
    distance; ``delta_tables`` hold, per outer radius R, the certified
    sampling diameter as a function of the inner radius r.
    """

    under: MonotoneTable
    over: MonotoneTable
    sample_budget: int = DEFAULT_BUDGET
    eps_safe: float = DEFAULT_EPS_SAFE
    shell_thickness: float = DEFAULT_SHELL
    delta_tables: dict = field(default_factory=dict)

    def level_inside_ball(self, r: float) -> float:
        """Largest tabulated value level whose sublevel set sits inside the
        open r-neighbourhood of the target."""
        return float(self.under(r))

    def level_covering_ball(self, R: float) -> float:
        """Smallest tabulated value level whose sublevel set covers the
        closed R-neighbourhood of the target."""
        return float(self.over(R))

    def radius_for_level(self, alpha):
        """Inverse of the lower bridge: smallest radius whose inner level
        reaches ``alpha``."""
        return self.under.inverse(alpha)

    def delta_at(self, r: float, R: float) -> float:
        table = self._delta_table(R)
        return float(table(r))

    def radius_of_delta(self, delta: float, R: float) -> float:
        """Invert r -> delta(r, R); errors above the tabulated endpoint."""
        table = self._delta_table(R)
        top = float(table.values[-1])
        if delta > top * (1.0 + 1e-9):
            raise ValueError(
                f"delta={delta} exceeds the tabulated endpoint {top} for R={R}")
        if delta <= 0:
            return 0.0
        return float(table.inverse(delta))

    def _delta_table(self, R: float) -> MonotoneTable:
        key = round(float(R), 12)
        if key not in self.delta_tables:
            raise KeyError(f"no delta table for R={R}")
        return self.delta_tables[key]

    def validate(self) -> None:
        shared = np.intersect1d(self.under.nodes, self.over.nodes)
        for r in shared:
            if self.under(r) > self.over(r) + 1e-12:
                raise ValueError(f"under/over tables cross at r={r}")

    def to_dict(self):
        return {
            "under": self.under.to_dict(),
            "over": self.over.to_dict(),
            "sample_budget": self.sample_budget,
            "eps_safe": self.eps_safe,
            "shell_thickness": self.shell_thickness,
            "delta_tables": {str(k): v.to_dict()
                             for k, v in self.delta_tables.items()},
        }

    @staticmethod
    def from_dict(d) -> "BridgeTables":
        tables = BridgeTables(
            under=MonotoneTable.from_dict(d["under"]),
            over=MonotoneTable.from_dict(d["over"]),
            sample_budget=d.get("sample_budget", DEFAULT_BUDGET),
            eps_safe=d.get("eps_safe", DEFAULT_EPS_SAFE),
            shell_thickness=d.get("shell_thickness", DEFAULT_SHELL),
        )
        for k, v in d.get("delta_tables", {}).items():
            tables.delta_tables[round(float(k), 12)] = MonotoneTable.from_dict(v)
        return tables


def build_bridge_tables(mrf: CandidateMRF, target: TargetDesc, r_nodes,
                        budget: int = DEFAULT_BUDGET,
                        eps_safe: float = DEFAULT_EPS_SAFE,
                        shell_thickness: float = DEFAULT_SHELL) -> BridgeTables:
    """Tabulate both bridges against the target distance on given nodes."""
    comparison = distance_comparison(target)
    r_nodes = np.asarray(sorted(r_nodes), dtype=float)
    under_vals = np.array([bridge_under(mrf, comparison, r, budget, eps_safe,
                                        shell_thickness) for r in r_nodes])
    over_vals = np.array([bridge_over(mrf, comparison, r, budget, eps_safe)
                          for r in r_nodes])
    under_vals = np.maximum.accumulate(under_vals)
    over_vals = np.maximum.accumulate(over_vals)
    tables = BridgeTables(
        under=MonotoneTable(r_nodes, under_vals, extend_low="zero",
                            extend_high="slope", strictify=True),
        over=MonotoneTable(r_nodes, over_vals, extend_low="zero",
                           extend_high="slope", strictify=True),
        sample_budget=budget,
        eps_safe=eps_safe,
        shell_thickness=shell_thickness,
    )
    tables.validate()
    return tables


# ---------------------------------------------------------------------------
# Local constants and the diameter schedule
# ---------------------------------------------------------------------------

def estimate_lipschitz(mrf: CandidateMRF, w_lo: float, w_hi: float,
                       budget: int = 128, step: float = 1e-5,
                       inflation: float = 1.1) -> float:
    """Finite-difference Lipschitz estimate of the candidate on a
    value-annulus, inflated by 10% (only an upper bound is needed)."""
    pts = probes.annulus_probes(mrf.value, mrf.dim, w_lo, w_hi, budget,
                                float(mrf.proper_hint(w_hi)) * 1.25,
                                extra_directions=mrf.special_directions,
                                ray_solve=mrf.ray_solve)
    if pts.shape[0] == 0:
        raise ResolutionTooCoarse("no probes for the Lipschitz estimate")
    slopes = [float(np.linalg.norm(probes.fd_gradient(mrf.value, x, step)))
              for x in pts]
    return inflation * max(max(slopes), 1e-12)


def schedule_delta(sys: ControlSystem, mrf: CandidateMRF, feedback, p0: float,
                   tables: BridgeTables, r: float, R: float,
                   rate: RateFunction, probe_budget: int = 64,
                   delta_max: float = 0.5, max_halvings: int = 14,
                   L: float | None = None, m: float | None = None,
                   h_ode: float | None = None,
                   horizon_cap: float = 400.0) -> float:
    """Certified sampling diameter for the radius pair (r, R).

    The returned value is min(delta_hat, mu/(4 L m)) where mu is the
    inner level at r, L a Lipschitz bound of the candidate on the working
    annulus, m the speed/cost bound over the enclosing region, and
    delta_hat the largest dyadic diameter (halving from ``delta_max``)
    for which trial runs from a deterministic probe set of initial states
    all satisfy the per-interval decrease down to the mu/4 level and
    actually reach it.  Raises when even the smallest diameter fails.
    """
    if not (0 < r < R):
        raise ValueError("need 0 < r < R")
    mu = tables.level_inside_ball(r)
    sig = tables.level_covering_ball(R)
    if not (0 < mu < sig):
        raise ValueError(f"degenerate levels: mu={mu}, sigma={sig}")
    if L is None:
        L = estimate_lipschitz(mrf, mu / 4.0, 2.0 * sig)
    if m is None:
        m = float(sys.bounds.M(float(mrf.proper_hint(2.0 * sig))))
    cap = mu / (4.0 * L * m)

    w_stop = mu / 4.0
    starts = probes.annulus_probes(mrf.value, mrf.dim, w_stop * 1.02,
                                   2.0 * sig, probe_budget,
                                   float(mrf.proper_hint(2.0 * sig)) * 1.25,
                                   extra_directions=mrf.special_directions,
                                   ray_solve=mrf.ray_solve)
    if starts.shape[0] == 0:
        raise ResolutionTooCoarse("no probe initial states in the annulus")
    starts = starts[:probe_budget]
    # the probe runs only need the descent phase down to the stopping level
    horizon = min(4.0 * (2.0 * sig - w_stop) / float(rate(w_stop)),
                  horizon_cap)

    last_witness = None
    delta = delta_max
    for _ in range(max_halvings + 1):
        ok = True
        for z in starts:
            run = sampling_trajectory(sys, feedback,
                                      make_partition(delta), z,
                                      horizon + 4.0 * delta, h_ode=h_ode,
                                      mrf=mrf,
                                      stop_when_w_below=0.5 * w_stop)
            passed, _ = check_interval_decrease(run, mrf, p0, rate,
                                                w_stop=w_stop)
            reached = bool(np.min(run.w) <= w_stop) or math.isfinite(run.exit_time)
            if not (passed and reached):
                ok = False
                last_witness = z
                break
        if ok:
            return min(delta, cap)
        delta *= 0.5
    raise NotCertifiableAtResolution(
        f"decrease not certifiable down to delta={delta * 2}",
        witness=last_witness)


def add_delta_table(tables: BridgeTables, sys: ControlSystem,
                    mrf: CandidateMRF, feedback, p0: float,
                    rate: RateFunction, R: float, r_nodes, **kwargs) -> None:
    """Tabulate r -> delta(r, R) on the given nodes and attach the table.

    Monotonicity in r is enforced from the top down (shrinking a
    certified diameter is always safe, enlarging it is not).
    """
    r_nodes = np.asarray(sorted(r_nodes), dtype=float)
    deltas = np.array([schedule_delta(sys, mrf, feedback, p0, tables, r, R,
                                      rate, **kwargs) for r in r_nodes])
    for i in range(deltas.size - 2, -1, -1):
        deltas[i] = min(deltas[i], deltas[i + 1])
    tables.delta_tables[round(float(R), 12)] = MonotoneTable(
        r_nodes, deltas, extend_low="zero", strictify=True)


def r_of_delta(tables: BridgeTables, delta: float, R: float) -> float:
    """Radius reachable with a given sampling diameter (table inverse)."""
    return tables.radius_of_delta(delta, R)
