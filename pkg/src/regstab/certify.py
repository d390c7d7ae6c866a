"""Numerical certification of Hamiltonian decrease conditions.

A candidate function is certified on a value-annulus by probing
deterministic points, collecting every available limiting-gradient
candidate at each probe (analytic branches where the plugin declares
them, dispersed finite-difference estimates otherwise), and checking

    min_u { <p, f(x,u)> + p0 * l(x,u) }  <=  -bound(x)

with the minimisation cut to the compactification ball.  Probes whose
subgradient set is declared or detected empty are counted separately:
the condition is vacuous there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import probes
from .core import (Array, CoercivityFailure, ControlSystem, MonotoneTable,
                   NotAnMRFOnRegion, min_hamiltonian)

FD_STEP = 1e-6
FD_MATCH_TOL = 1e-4          # relative gradient agreement at smooth probes
DISPERSION_FACTOR = 10.0     # dispersion > factor*tol flags a corner


@dataclass
class RateFunction:
    """Strictly increasing rate w -> gamma(w) on (0, w_max].

    Backed by a monotone table that interpolates linearly through the
    origin below its first node, so rates vanish continuously at 0.
    ``sigma_local`` marks rates that were only fitted on a bounded
    sublevel region.
    """

    table: MonotoneTable
    sigma_local: float | None = None

    def __post_init__(self):
        if np.any(self.table.values <= 0):
            raise ValueError("rate values must be positive")
        if np.any(np.diff(self.table.values) <= 0) and self.table.values.size > 1:
            raise ValueError("rate must be strictly increasing")

    def __call__(self, w):
        return self.table(w)

    @property
    def w_max(self) -> float:
        return float(self.table.nodes[-1])

    @staticmethod
    def identity(w_max: float = 1e6) -> "RateFunction":
        t = MonotoneTable([w_max * 1e-9, w_max], [w_max * 1e-9, w_max],
                          extend_low="zero", extend_high="slope")
        return RateFunction(t)

    @staticmethod
    def from_callable(fn: Callable[[float], float], w_lo: float, w_hi: float,
                      n: int = 64) -> "RateFunction":
        nodes = np.geomspace(w_lo, w_hi, n)
        vals = np.array([fn(w) for w in nodes])
        return RateFunction(MonotoneTable(nodes, vals, extend_low="zero",
                                          extend_high="slope"))

    def to_dict(self):
        return {"table": self.table.to_dict(), "sigma_local": self.sigma_local}


@dataclass
class CandidateMRF:
    """Candidate minimum-restraint function (cost-aware CLF).

    ``value`` maps states to nonnegative reals, ``gradient_selection``
    fixes one limiting gradient per state, and ``proper_hint(level)``
    returns a radius enclosing the sublevel set at that level.  Plugins
    with known nonsmooth structure expose ``gradient_branches`` (the full
    list of limiting-gradient candidates, empty where the proximal
    subdifferential is empty) and, optionally, ``special_directions``
    worth including in every deterministic sample.
    """

    dim: int
    value: Callable[[Array], float]
    gradient_selection: Callable[[Array], Array]
    regularity: str
    proper_hint: Callable[[float], float]
    rate: RateFunction | None = None
    gradient_branches: Callable[[Array], list[Array]] | None = None
    subdifferential_empty: Callable[[Array], bool] | None = None
    value_batch: Callable[[Array], Array] | None = None
    special_directions: Array | None = None
    ray_solve: Callable[[float, Array], Array] | None = None
    fast_regularizer: Callable | None = None
    name: str = ""

    def __post_init__(self):
        if self.regularity not in ("semiconcave", "lipschitz"):
            raise ValueError(f"unknown regularity: {self.regularity}")

    def w(self, x) -> float:
        return float(self.value(np.asarray(x, dtype=float)))

    def value_many(self, X: Array) -> Array:
        if self.value_batch is not None:
            return np.asarray(self.value_batch(X), dtype=float)
        return np.array([self.w(x) for x in X])


@dataclass
class CertReport:
    """Outcome of one certification pass."""

    mode: str
    region: dict
    n_probes: int
    n_candidates: int
    min_margin: float
    mean_margin: float
    violations: list = field(default_factory=list)
    skipped_nonsmooth: int = 0
    notes: list = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.min_margin > 0 and not self.violations

    def to_dict(self):
        return {
            "mode": self.mode,
            "region": self.region,
            "n_probes": self.n_probes,
            "n_candidates": self.n_candidates,
            "margins": {"min": self.min_margin, "mean": self.mean_margin},
            "violations": self.violations,
            "skipped_nonsmooth": self.skipped_nonsmooth,
            "certified": self.certified,
            "notes": self.notes,
        }


# ---------------------------------------------------------------------------
# Gradient candidates
# ---------------------------------------------------------------------------

def gradient_candidates(mrf: CandidateMRF, x: Array,
                        fd_step: float = FD_STEP) -> tuple[list[Array], bool]:
    """All limiting-gradient candidates at x; (candidates, skipped).

    ``skipped`` is True where the subgradient set is empty (declared by
    the plugin or detected as an empty branch list), in which case the
    decrease condition holds vacuously.
    """
    if mrf.subdifferential_empty is not None and mrf.subdifferential_empty(x):
        return [], True
    if mrf.gradient_branches is not None:
        branches = mrf.gradient_branches(x)
        if branches is not None:
            if len(branches) == 0:
                return [], True
            return [np.asarray(b, dtype=float) for b in branches], False
    grads = probes.offset_gradients(mrf.value, x, step=fd_step)
    spread = max(float(np.max(np.abs(g - grads[0]))) for g in grads)
    scale = max(1.0, float(np.max(np.abs(grads[0]))))
    if spread > DISPERSION_FACTOR * FD_MATCH_TOL * scale:
        return grads, False
    if mrf.gradient_selection is not None:
        return [np.asarray(mrf.gradient_selection(x), dtype=float)], False
    return [np.mean(grads, axis=0)], False


def _region_probes(mrf: CandidateMRF, w_lo: float, w_hi: float,
                   budget: int, n_levels: int | None = None) -> Array:
    if w_lo <= 0:
        raise ValueError("region must stay off the target (w_lo > 0)")
    radius_cap = float(mrf.proper_hint(w_hi)) * 1.25
    if not math.isfinite(radius_cap) or radius_cap <= 0:
        raise ValueError("region outside the reach of proper_hint")
    return probes.annulus_probes(mrf.value, mrf.dim, w_lo, w_hi, budget,
                                 radius_cap,
                                 extra_directions=mrf.special_directions,
                                 ray_solve=mrf.ray_solve, n_levels=n_levels)


def _resolve_n(N_table, w: float, default: float) -> float:
    if N_table is None:
        return default
    if isinstance(N_table, MonotoneTable):
        return float(N_table(w))
    if callable(N_table):
        return float(N_table(w))
    return float(N_table)


def _certify(sys: ControlSystem, mrf: CandidateMRF, p0: float, region: dict,
             bound: Callable[[Array, float], float], mode: str,
             N_table=None, budget: int = 360, h: float | None = None) -> CertReport:
    w_lo, w_hi = float(region["w_lo"]), float(region["w_hi"])
    pts = _region_probes(mrf, w_lo, w_hi, budget)
    default_n = sys.control_set.bounded_radius() or max(1.0, w_hi)
    margins = []
    violations = []
    skipped = 0
    n_candidates = 0
    for x in pts:
        w = mrf.w(x)
        cands, was_skipped = gradient_candidates(mrf, x)
        if was_skipped:
            skipped += 1
            continue
        N = _resolve_n(N_table, w, default_n)
        b = bound(x, w)
        for p in cands:
            n_candidates += 1
            val, _ = min_hamiltonian(sys, x, p0, p, N, h)
            margin = -val - b
            margins.append(margin)
            if margin <= 0:
                violations.append({"x": [float(v) for v in x],
                                   "H": val, "bound": -b, "margin": margin})
    if not margins:
        raise ValueError("no usable probes in the requested region")
    report = CertReport(
        mode=mode,
        region={"w_lo": w_lo, "w_hi": w_hi},
        n_probes=len(pts),
        n_candidates=n_candidates,
        min_margin=float(np.min(margins)),
        mean_margin=float(np.mean(margins)),
        violations=violations,
        skipped_nonsmooth=skipped,
    )
    report.notes.append("moduli of continuity spot-checked on samples only")
    return report


def certify_decrease(sys: ControlSystem, mrf: CandidateMRF, p0: float,
                     region: dict, rate: RateFunction, N_table=None,
                     budget: int = 360, h: float | None = None,
                     mode: str = "MRF") -> CertReport:
    """Check H(x, p0, p) <= -rate(W(x)) over a W-annulus."""
    return _certify(sys, mrf, p0, region,
                    bound=lambda x, w: float(rate(w)), mode=mode,
                    N_table=N_table, budget=budget, h=h)


def certify_distance_rate(sys: ControlSystem, mrf: CandidateMRF, p0: float,
                          region: dict, rate: RateFunction, N_table=None,
                          budget: int = 360, h: float | None = None) -> CertReport:
    """Check H(x, p0, p) <= -rate(d(x)) with the target distance as the
    comparison scale."""
    return _certify(sys, mrf, p0, region,
                    bound=lambda x, w: float(rate(sys.target.distance(x))),
                    mode="distance_rate", N_table=N_table, budget=budget, h=h)


def certify_omrf_local(sys: ControlSystem, mrf: CandidateMRF, p0: float,
                       sigma: float, rate: RateFunction, w_lo: float,
                       N_table=None, budget: int = 360,
                       h: float | None = None) -> CertReport:
    """Sigma-restricted certification for candidates with only local rates."""
    report = _certify(sys, mrf, p0, {"w_lo": w_lo, "w_hi": sigma},
                      bound=lambda x, w: float(rate(w)),
                      mode=f"OMRF_local({sigma})", N_table=N_table,
                      budget=budget, h=h)
    report.notes.append("rate is sigma-local; no claim above the sublevel set")
    return report


# ---------------------------------------------------------------------------
# Rate fitting
# ---------------------------------------------------------------------------

def fit_rate_gamma(sys: ControlSystem, mrf: CandidateMRF, p0: float,
                   region: dict, mode: str = "global",
                   sigma: float | None = None, N_table=None,
                   budget: int = 360, h: float | None = None,
                   n_buckets: int = 12, eta: float = 0.1) -> RateFunction:
    """Fit a strictly increasing rate from probed Hamiltonian values.

    Each value-bucket gets (1 - eta) times the worst achieved -H in the
    bucket; monotonicity is enforced by a running minimum from the top
    and a vanishing tilt.  Bucket values sit at the bucket's upper edge
    so the interpolated rate never exceeds its certified bound inside
    the bucket.
    """
    w_lo, w_hi = float(region["w_lo"]), float(region["w_hi"])
    if mode == "omrf_local":
        if sigma is None:
            raise ValueError("omrf_local mode needs sigma")
        w_hi = min(w_hi, sigma)
    pts = _region_probes(mrf, w_lo, w_hi, budget, n_levels=n_buckets + 4)
    default_n = sys.control_set.bounded_radius() or max(1.0, w_hi)
    edges = np.geomspace(w_lo, w_hi, n_buckets + 1)
    raw = np.full(n_buckets, np.inf)
    witnesses = []
    got_any = False
    for x in pts:
        w = mrf.w(x)
        cands, was_skipped = gradient_candidates(mrf, x)
        if was_skipped:
            continue
        N = _resolve_n(N_table, w, default_n)
        neg_h = min(-min_hamiltonian(sys, x, p0, p, N, h)[0] for p in cands)
        k = int(np.clip(np.searchsorted(edges, w, side="left") - 1, 0,
                        n_buckets - 1))
        raw[k] = min(raw[k], neg_h)
        got_any = True
        if neg_h <= 0:
            witnesses.append({"x": [float(v) for v in x], "neg_H": neg_h})
    if not got_any:
        raise ValueError("empty region: nothing to fit")
    if witnesses:
        raise NotAnMRFOnRegion(
            "Hamiltonian fails to be negative on the region", witnesses)
    # keep only populated buckets: an empty bucket must not inherit a rate
    # from higher levels (the zero-anchored extension below the lowest node
    # is the conservative reading there)
    keep = np.isfinite(raw)
    nodes = edges[1:][keep]
    vals = (1.0 - eta) * raw[keep]
    if nodes.size == 0:
        raise ValueError("no populated buckets in the region")
    for i in range(vals.size - 2, -1, -1):
        vals[i] = min(vals[i], vals[i + 1])
    tilt = 1e-12 * float(vals[-1])
    vals = vals + tilt * nodes / nodes[-1]
    table = MonotoneTable(nodes, vals, extend_low="zero", extend_high="clamp",
                          strictify=True)
    return RateFunction(table, sigma_local=sigma if mode == "omrf_local" else None)


def fit_distance_rate(sys: ControlSystem, mrf: CandidateMRF, p0: float,
                      region: dict, N_table=None, budget: int = 360,
                      h: float | None = None, n_buckets: int = 12,
                      eta: float = 0.1) -> RateFunction:
    """Like fit_rate_gamma, but bucketed by target distance instead of the
    candidate's own value (the comparison form of the decrease condition)."""
    w_lo, w_hi = float(region["w_lo"]), float(region["w_hi"])
    pts = _region_probes(mrf, w_lo, w_hi, budget, n_levels=n_buckets + 4)
    default_n = sys.control_set.bounded_radius() or max(1.0, w_hi)
    dists = np.array([sys.target.distance(x) for x in pts])
    d_lo, d_hi = float(np.min(dists)), float(np.max(dists))
    edges = np.geomspace(max(d_lo, 1e-12), d_hi, n_buckets + 1)
    raw = np.full(n_buckets, np.inf)
    witnesses = []
    for x, d in zip(pts, dists):
        cands, was_skipped = gradient_candidates(mrf, x)
        if was_skipped:
            continue
        N = _resolve_n(N_table, mrf.w(x), default_n)
        neg_h = min(-min_hamiltonian(sys, x, p0, p, N, h)[0] for p in cands)
        k = int(np.clip(np.searchsorted(edges, d, side="left") - 1, 0,
                        n_buckets - 1))
        raw[k] = min(raw[k], neg_h)
        if neg_h <= 0:
            witnesses.append({"x": [float(v) for v in x], "neg_H": neg_h})
    if witnesses:
        raise NotAnMRFOnRegion(
            "Hamiltonian fails to be negative on the region", witnesses)
    keep = np.isfinite(raw)
    nodes = edges[1:][keep]
    vals = (1.0 - eta) * raw[keep]
    if nodes.size == 0:
        raise ValueError("no populated buckets in the region")
    for i in range(vals.size - 2, -1, -1):
        vals[i] = min(vals[i], vals[i + 1])
    vals = vals + 1e-12 * float(vals[-1]) * nodes / nodes[-1]
    table = MonotoneTable(nodes, vals, extend_low="zero", extend_high="clamp",
                          strictify=True)
    return RateFunction(table)


# ---------------------------------------------------------------------------
# Compactification-radius table
# ---------------------------------------------------------------------------

def compact_radius_table(sys: ControlSystem, mrf: CandidateMRF, p0: float,
                         rate: RateFunction, levels, budget: int = 48,
                         h: float | None = None, N_min: float = 1.0 / 16.0,
                         N_max: float = 1024.0) -> MonotoneTable:
    """Smallest dyadic compactification radius achieving the decrease on
    each level set.

    Bounded control sets need no compactification: the table is constant
    at the enclosing radius.  Otherwise the dyadic ladder N_min * 2^k is
    climbed until the cut minimisation reaches -rate(level) at every
    probe; a running maximum makes the table nondecreasing.
    """
    levels = np.asarray(sorted(levels), dtype=float)
    bounded = sys.control_set.bounded_radius()
    if bounded is not None:
        return MonotoneTable(levels, np.full(levels.size, bounded))
    ladder = []
    N = N_min
    while N <= N_max:
        ladder.append(N)
        N *= 2.0
    values = []
    for r in levels:
        pts = probes.level_probes(mrf.value, mrf.dim, r, budget,
                                  float(mrf.proper_hint(r)) * 1.25,
                                  extra_directions=mrf.special_directions,
                                  ray_solve=mrf.ray_solve)
        if pts.shape[0] == 0:
            raise ValueError(f"no probes found on level {r}")
        target = float(rate(r))
        chosen = None
        for N in ladder:
            ok = True
            for x in pts:
                cands, was_skipped = gradient_candidates(mrf, x)
                if was_skipped:
                    continue
                for p in cands:
                    val, _ = min_hamiltonian(sys, x, p0, p, N, h)
                    if val > -target:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                chosen = N
                break
        if chosen is None:
            raise CoercivityFailure(
                f"no radius up to {N_max} achieves the decrease at level {r}")
        values.append(chosen)
    values = np.maximum.accumulate(np.asarray(values))
    return MonotoneTable(levels, values)
