"""System descriptions, partitions, trajectory records, and the compactified
Hamiltonian evaluator that the rest of the toolkit is built on.

Conventions used throughout the package:

* states and controls are 1-D ``numpy`` arrays (``float64``);
* the target is described through its Euclidean distance function ``d``;
* every sampling operation is deterministic: grids are anchored at the
  origin, ties are broken by the first (lexicographic) grid index, and
  jittered partitions are driven by an explicitly seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

#: Default control-grid resolution as a fraction of the compactification
#: radius N.
GRID_RESOLUTION_FRACTION = 1.0 / 64.0


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class InfeasibleCompactification(ValueError):
    """The control set does not meet the requested compactification ball."""


class ResolutionTooCoarse(ValueError):
    """A deterministic shell or level-set sample came back empty."""


class NotCertifiableAtResolution(ValueError):
    """Empirical certification failed down to the smallest resolution tried."""

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


class NotAnMRFOnRegion(ValueError):
    """Rate fitting found a probe where the Hamiltonian is not negative."""

    def __init__(self, message: str, witnesses=None):
        super().__init__(message)
        self.witnesses = witnesses or []


class CoercivityFailure(ValueError):
    """No compactification radius up to the cap achieves the decrease."""


class BoxTooSmall(ValueError):
    """A search box clipped the minimizer of an inner problem."""


# ---------------------------------------------------------------------------
# Monotone piecewise-linear tables
# ---------------------------------------------------------------------------

class MonotoneTable:
    """Nondecreasing piecewise-linear table with a controlled inverse.

    ``extend_low`` selects the behaviour left of the first node:
    ``"clamp"`` keeps the first value, ``"zero"`` interpolates linearly
    through the origin (useful for rate functions that must vanish at 0).
    ``extend_high`` is ``"clamp"`` or ``"slope"`` (continue with the last
    secant slope).
    """

    def __init__(self, nodes, values, extend_low="clamp", extend_high="clamp",
                 strictify=False):
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if nodes.ndim != 1 or nodes.size == 0 or nodes.shape != values.shape:
            raise ValueError("table needs matching 1-D nodes and values")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("table nodes must be strictly increasing")
        if np.any(np.diff(values) < -1e-12 * max(1.0, float(np.max(np.abs(values))))):
            raise ValueError("table values must be nondecreasing")
        values = np.maximum.accumulate(values)
        if strictify and nodes.size > 1:
            # break flats so the table stays invertible
            tilt = 1e-12 * max(1.0, float(values[-1]))
            values = values + tilt * (nodes - nodes[0]) / (nodes[-1] - nodes[0])
        self.nodes = nodes
        self.values = values
        self.extend_low = extend_low
        self.extend_high = extend_high

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.nodes, self.values)
        lo_mask = x < self.nodes[0]
        if np.any(lo_mask):
            if self.extend_low == "zero" and self.nodes[0] > 0:
                out = np.where(lo_mask, self.values[0] * np.maximum(x, 0.0) / self.nodes[0], out)
            else:
                out = np.where(lo_mask, self.values[0], out)
        hi_mask = x > self.nodes[-1]
        if np.any(hi_mask):
            if self.extend_high == "slope" and self.nodes.size > 1:
                slope = (self.values[-1] - self.values[0]) / (self.nodes[-1] - self.nodes[0])
                out = np.where(hi_mask, self.values[-1] + slope * (x - self.nodes[-1]), out)
            else:
                out = np.where(hi_mask, self.values[-1], out)
        return float(out) if out.ndim == 0 else out

    def inverse(self, y):
        """Invert the table (values -> nodes), honouring the extension rules."""
        y = np.asarray(y, dtype=float)
        vals = self.values
        if np.any(np.diff(vals) <= 0):
            # make strictly increasing for interpolation purposes
            tilt = 1e-15 * max(1.0, float(vals[-1]))
            vals = vals + tilt * np.arange(vals.size)
        out = np.interp(y, vals, self.nodes)
        lo_mask = y < vals[0]
        if np.any(lo_mask):
            if self.extend_low == "zero" and vals[0] > 0:
                out = np.where(lo_mask, self.nodes[0] * np.maximum(y, 0.0) / vals[0], out)
            else:
                out = np.where(lo_mask, self.nodes[0], out)
        hi_mask = y > vals[-1]
        if np.any(hi_mask):
            if self.extend_high == "slope" and vals.size > 1 and vals[-1] > vals[0]:
                slope = (self.nodes[-1] - self.nodes[0]) / (vals[-1] - vals[0])
                out = np.where(hi_mask, self.nodes[-1] + slope * (y - vals[-1]), out)
            else:
                out = np.where(hi_mask, self.nodes[-1], out)
        return float(out) if out.ndim == 0 else out

    @staticmethod
    def constant(value, node=1.0):
        return MonotoneTable([node], [value])

    def to_dict(self):
        return {"nodes": self.nodes.tolist(), "values": self.values.tolist(),
                "extend_low": self.extend_low, "extend_high": self.extend_high}

    @staticmethod
    def from_dict(d):
        return MonotoneTable(d["nodes"], d["values"], d.get("extend_low", "clamp"),
                             d.get("extend_high", "clamp"))


# ---------------------------------------------------------------------------
# Control sets
# ---------------------------------------------------------------------------

@dataclass
class ControlSetDesc:
    """Description of the admissible control set.

    ``kind`` is one of ``ball``, ``box``, ``finite``, ``unbounded``.  The
    deterministic sampler builds grids only inside the compactification
    ball B(0, N); unbounded sets therefore always work through their
    projection.
    """

    kind: str
    dim: int
    radius: float | None = None
    lo: Array | None = None
    hi: Array | None = None
    points: Array | None = None
    membership: Callable[[Array], bool] | None = None
    projection: Callable[[Array, float], Array] | None = None
    _grid_cache: dict = field(default_factory=dict, repr=False)

    # -- constructors -------------------------------------------------
    @staticmethod
    def ball(radius: float, dim: int) -> "ControlSetDesc":
        return ControlSetDesc(kind="ball", dim=dim, radius=float(radius))

    @staticmethod
    def box(lo, hi) -> "ControlSetDesc":
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("invalid box bounds")
        return ControlSetDesc(kind="box", dim=lo.size, lo=lo, hi=hi)

    @staticmethod
    def finite(points) -> "ControlSetDesc":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return ControlSetDesc(kind="finite", dim=pts.shape[1], points=pts)

    @staticmethod
    def unbounded(dim: int, membership=None, projection=None) -> "ControlSetDesc":
        return ControlSetDesc(kind="unbounded", dim=dim, membership=membership,
                              projection=projection)

    # -- queries -------------------------------------------------------
    def bounded_radius(self) -> float | None:
        """Radius of a ball containing the whole set, if one exists."""
        if self.kind == "ball":
            return self.radius
        if self.kind == "box":
            return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))
        if self.kind == "finite":
            return float(np.max(np.linalg.norm(self.points, axis=1)))
        return None

    def contains(self, u: Array, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        if self.kind == "ball":
            return float(np.linalg.norm(u)) <= self.radius + tol
        if self.kind == "box":
            return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))
        if self.kind == "finite":
            return bool(np.min(np.linalg.norm(self.points - u, axis=1)) <= tol)
        if self.membership is not None:
            return bool(self.membership(u))
        return True

    def contains_batch(self, U: Array, tol: float = 1e-9) -> Array:
        """Vectorised membership mask for a (k, dim) block of controls."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if self.kind == "ball":
            return np.linalg.norm(U, axis=1) <= self.radius + tol
        if self.kind == "box":
            return np.all((U >= self.lo - tol) & (U <= self.hi + tol), axis=1)
        if self.kind == "finite":
            d = np.linalg.norm(U[:, None, :] - self.points[None, :, :], axis=2)
            return np.min(d, axis=1) <= tol
        if self.membership is not None:
            return np.array([bool(self.membership(u)) for u in U], dtype=bool)
        return np.ones(U.shape[0], dtype=bool)

    def project_ball(self, u: Array, N: float) -> Array:
        """Project a control onto the closed ball of radius N."""
        u = np.asarray(u, dtype=float)
        if self.kind == "unbounded" and self.projection is not None:
            v = np.asarray(self.projection(u, N), dtype=float)
        else:
            norm = float(np.linalg.norm(u))
            v = u if norm <= N else u * (N / norm)
        norm = float(np.linalg.norm(v))
        if norm > N:
            v = v * (N / norm)
        return v

    # -- deterministic grid --------------------------------------------
    def _axis(self, lo: float, hi: float, h: float) -> Array:
        """Multiples of h inside [lo, hi], plus the exact endpoints."""
        if hi < lo:
            return np.empty(0)
        k_lo = math.ceil(lo / h - 1e-12)
        k_hi = math.floor(hi / h + 1e-12)
        vals = [lo] + [k * h for k in range(k_lo, k_hi + 1)] + [hi]
        out = np.unique(np.asarray(vals, dtype=float))
        return out[(out >= lo - 1e-12) & (out <= hi + 1e-12)]

    def grid(self, N: float, h: float) -> Array:
        """Deterministic sample of the set intersected with B(0, N).

        Points are returned in C (lexicographic) order so that ``argmin``
        tie-breaking is reproducible.
        """
        if N <= 0 or h <= 0:
            raise ValueError("N and h must be positive")
        key = (round(float(N), 12), round(float(h), 12))
        cached = self._grid_cache.get(key)
        if cached is not None:
            return cached
        if self.kind == "finite":
            norms = np.linalg.norm(self.points, axis=1)
            pts = self.points[norms <= N + 1e-12]
        else:
            if self.kind == "ball":
                b = min(N, self.radius)
                lo, hi = -b * np.ones(self.dim), b * np.ones(self.dim)
            elif self.kind == "box":
                lo = np.maximum(self.lo, -N)
                hi = np.minimum(self.hi, N)
            else:
                lo, hi = -N * np.ones(self.dim), N * np.ones(self.dim)
            axes = [self._axis(lo[i], hi[i], h) for i in range(self.dim)]
            if any(a.size == 0 for a in axes):
                pts = np.empty((0, self.dim))
            else:
                mesh = np.meshgrid(*axes, indexing="ij")
                pts = np.stack([m.ravel(order="C") for m in mesh], axis=1)
            mask = np.linalg.norm(pts, axis=1) <= N + 1e-12
            if self.kind == "ball":
                mask &= np.linalg.norm(pts, axis=1) <= self.radius + 1e-12
            if self.membership is not None:
                mask &= np.array([self.membership(p) for p in pts], dtype=bool)
            pts = pts[mask]
        pts = np.ascontiguousarray(pts)
        if len(self._grid_cache) > 64:
            self._grid_cache.clear()
        self._grid_cache[key] = pts
        return pts

    def coordinate_interval(self, u: Array, i: int, N: float) -> tuple[float, float] | None:
        """Feasible interval of coordinate i with the others held fixed."""
        if self.kind == "finite":
            return None
        others = np.delete(np.asarray(u, dtype=float), i)
        s = float(np.dot(others, others))
        ball_lim = math.sqrt(max(N * N - s, 0.0))
        lo, hi = -ball_lim, ball_lim
        if self.kind == "ball":
            lim = math.sqrt(max(self.radius ** 2 - s, 0.0))
            lo, hi = max(lo, -lim), min(hi, lim)
        elif self.kind == "box":
            lo, hi = max(lo, float(self.lo[i])), min(hi, float(self.hi[i]))
        if hi < lo:
            return None
        return lo, hi


# ---------------------------------------------------------------------------
# Targets and bounds
# ---------------------------------------------------------------------------

@dataclass
class TargetDesc:
    """Closed target set, described through its distance function.

    ``boundary_sampler(k)`` must yield k points at (numerically) zero
    distance.  ``interior_contains`` is only consulted by the
    regularisation pipeline, which extends candidate functions by zero
    inside the target.
    """

    dim: int
    distance: Callable[[Array], float]
    boundary_sampler: Callable[[int], Array]
    interior_contains: Callable[[Array], bool] | None = None
    ray_solve: Callable[[float, Array], Array] | None = None

    @staticmethod
    def point(dim: int) -> "TargetDesc":
        """The origin as target; distance is the Euclidean norm."""
        def sampler(k: int) -> Array:
            from .probes import directions
            return 1e-12 * directions(dim, k)

        return TargetDesc(dim=dim,
                          distance=lambda x: float(np.linalg.norm(x)),
                          boundary_sampler=sampler,
                          interior_contains=lambda x: False,
                          ray_solve=lambda level, d: level * np.asarray(d, dtype=float))

    @staticmethod
    def ball(center, radius: float) -> "TargetDesc":
        center = np.asarray(center, dtype=float)

        def dist(x):
            return max(0.0, float(np.linalg.norm(np.asarray(x) - center)) - radius)

        def sampler(k: int) -> Array:
            from .probes import directions
            return center + radius * directions(center.size, k)

        return TargetDesc(dim=center.size, distance=dist, boundary_sampler=sampler,
                          interior_contains=lambda x: float(
                              np.linalg.norm(np.asarray(x) - center)) < radius,
                          ray_solve=lambda level, d: center
                          + (radius + level) * np.asarray(d, dtype=float))


@dataclass
class SystemBounds:
    """Growth bounds used by the schedule and transit-time estimates.

    ``M(R)`` bounds the joint speed/cost magnitude |(f, l)| on the
    punctured R-neighbourhood of the target, ``Mtilde(R)`` bounds |f|
    alone.  Per-run bounds over sublevel regions are derived from these
    via the enclosing radius.
    """

    M: Callable[[float], float]
    Mtilde: Callable[[float], float]

    def validate(self, radii: Sequence[float]) -> None:
        for R in radii:
            if self.Mtilde(R) > self.M(R) + 1e-12:
                raise ValueError(f"Mtilde({R}) exceeds M({R})")


@dataclass
class ControlSystem:
    """Control system with a running cost and a target set.

    ``dynamics(x, u)`` returns the state velocity, ``lagrangian(x, u)`` the
    nonnegative running cost.  Optional ``*_batch`` variants take a single
    state and a (k, m) block of controls; the Hamiltonian evaluator uses
    them when present.
    """

    state_dim: int
    control_dim: int
    dynamics: Callable[[Array, Array], Array]
    lagrangian: Callable[[Array, Array], float]
    control_set: ControlSetDesc
    target: TargetDesc
    bounds: SystemBounds
    dynamics_batch: Callable[[Array, Array], Array] | None = None
    lagrangian_batch: Callable[[Array, Array], Array] | None = None
    name: str = ""

    def spot_check(self, R: float, n_states: int = 32, n_controls: int = 16,
                   grid_h: float = 0.25) -> None:
        """Grid-sample the declared invariants; raises on violation."""
        from .probes import directions
        dirs = directions(self.state_dim, n_states)
        radii = np.linspace(R / n_states, R, n_states)
        controls = self.control_set.grid(self.control_set.bounded_radius() or R,
                                         grid_h)[:n_controls]
        M = self.bounds.M(R)
        Mt = self.bounds.Mtilde(R)
        for x, r in zip(dirs, radii):
            xr = x * r
            if self.target.distance(xr) <= 0 or self.target.distance(xr) > R:
                continue
            for u in controls:
                f = np.asarray(self.dynamics(xr, u), dtype=float)
                l = float(self.lagrangian(xr, u))
                if l < -1e-12:
                    raise ValueError(f"negative running cost at x={xr}, u={u}")
                if np.linalg.norm(f) > Mt + 1e-9:
                    raise ValueError(f"speed bound Mtilde({R}) violated at x={xr}")
                if math.hypot(float(np.linalg.norm(f)), l) > M + 1e-9:
                    raise ValueError(f"bound M({R}) violated at x={xr}")


def distance_to_target(sys: ControlSystem, x: Array) -> float:
    """Distance of a state from the target set."""
    return float(sys.target.distance(np.asarray(x, dtype=float)))


# ---------------------------------------------------------------------------
# Partitions
# ---------------------------------------------------------------------------

class Partition:
    """Strictly increasing grid of sampling times, extended lazily.

    Uniform partitions have gaps exactly equal to the diameter; jittered
    ones draw gaps from [diameter/2, diameter] with a seeded generator, so
    two partitions with the same (diameter, seed) are identical.
    """

    def __init__(self, diameter: float, mode: str = "uniform", seed: int = 0):
        if diameter <= 0:
            raise ValueError("partition diameter must be positive")
        if mode not in ("uniform", "jittered"):
            raise ValueError(f"unknown partition mode: {mode}")
        self.diameter = float(diameter)
        self.mode = mode
        self.seed = int(seed)
        self._times = [0.0]
        self._rng = np.random.default_rng(self.seed) if mode == "jittered" else None

    def times_until(self, horizon: float) -> Array:
        """All generated times, extended so the last one is >= horizon."""
        while self._times[-1] < horizon:
            if self.mode == "uniform":
                gap = self.diameter
            else:
                gap = self.diameter * (0.5 + 0.5 * float(self._rng.random()))
            self._times.append(self._times[-1] + gap)
        return np.asarray(self._times)

    def gaps(self) -> Array:
        return np.diff(np.asarray(self._times))


def make_partition(diameter: float, mode: str = "uniform", seed: int = 0) -> Partition:
    """Build a partition of [0, inf) with the given diameter."""
    return Partition(diameter, mode=mode, seed=seed)


# ---------------------------------------------------------------------------
# Sampling-run record
# ---------------------------------------------------------------------------

@dataclass
class SamplingRun:
    """Recorded piecewise-constant-control run.

    One row per integrator sub-step: time, state, active control,
    accumulated cost, target distance and the value of the candidate
    function guiding the feedback (NaN when no candidate was attached).
    After a finite exit time the record continues constantly.
    """

    partition: Partition
    t: Array
    states: Array
    controls: Array
    cost: Array
    dist: Array
    w: Array
    interval_id: Array
    exit_time: float
    terminated_reason: str
    m_observed: float
    z: Array
    r_query: float | None = None
    stable_entry: float | None = None

    def state_at(self, time: float) -> Array:
        cols = [np.interp(time, self.t, self.states[:, i])
                for i in range(self.states.shape[1])]
        return np.asarray(cols)

    def cost_at(self, time: float) -> float:
        return float(np.interp(time, self.t, self.cost))


# ---------------------------------------------------------------------------
# Compactified Hamiltonian
# ---------------------------------------------------------------------------

def _objective_batch(sys: ControlSystem, x: Array, U: Array, p0: float,
                     p: Array) -> Array:
    if sys.dynamics_batch is not None:
        F = np.asarray(sys.dynamics_batch(x, U), dtype=float)
        vals = F @ p
    else:
        vals = np.array([float(np.dot(p, sys.dynamics(x, u))) for u in U])
    if p0 != 0.0:
        if sys.lagrangian_batch is not None:
            vals = vals + p0 * np.asarray(sys.lagrangian_batch(x, U), dtype=float)
        else:
            vals = vals + p0 * np.array([float(sys.lagrangian(x, u)) for u in U])
    return vals


def min_hamiltonian(sys: ControlSystem, x: Array, p0: float, p: Array,
                    N: float, h: float | None = None) -> tuple[float, Array]:
    """Minimise <p, f(x,u)> + p0*l(x,u) over the control set cut to B(0, N).

    The minimisation is a deterministic grid search at resolution ``h``
    (default N/64) followed by one coordinate-descent refinement pass at
    resolution h/16; grid ties are broken by the first index.  Returns the
    value and the achieving control.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if N <= 0:
        raise ValueError("compactification radius must be positive")
    if sys.target.distance(x) <= 0:
        raise ValueError("Hamiltonian is only evaluated off the target")
    if h is None:
        h = N * GRID_RESOLUTION_FRACTION
    if h <= 0:
        raise ValueError("grid resolution must be positive")

    U = sys.control_set.grid(N, h)
    if U.shape[0] == 0:
        raise InfeasibleCompactification(
            f"control set does not meet B(0, {N})")
    vals = _objective_batch(sys, x, U, p0, p)
    idx = int(np.argmin(vals))
    best_u = U[idx].copy()
    best_val = float(vals[idx])

    # one coordinate-descent pass, endpoints included so linear pieces
    # are minimised exactly
    fine = h / 16.0
    for i in range(sys.control_dim):
        interval = sys.control_set.coordinate_interval(best_u, i, N)
        if interval is None:
            continue
        lo, hi = interval
        if hi - lo <= 1e-15:
            cand_vals = np.array([lo])
        else:
            npts = min(4097, int(math.ceil((hi - lo) / fine)) + 1)
            cand_vals = np.linspace(lo, hi, max(npts, 2))
        C = np.tile(best_u, (cand_vals.size, 1))
        C[:, i] = cand_vals
        ok = sys.control_set.contains_batch(C)
        if not np.any(ok):
            continue
        C = C[ok]
        cv = _objective_batch(sys, x, C, p0, p)
        j = int(np.argmin(cv))
        if float(cv[j]) < best_val:
            best_val = float(cv[j])
            best_u = C[j].copy()
    return best_val, best_u
