"""Semiconcave regularisation of Lipschitz candidates.

Pipeline: estimate per-level regularity constants, pick the quadratic
inf-convolution weight from them, reshape each convolution with a
monotone C^1 map that is an exact shift near zero, the identity on the
working band, and a steep lift past it, then take the minimum over the
levels.  The result is a semiconcave candidate that sits below the
input on the covered value band and certifies the decrease condition at
half the original cost weight.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from . import probes
from .certify import CandidateMRF, CertReport, RateFunction, _certify
from .core import Array, BoxTooSmall, ControlSystem, MonotoneTable

CACHE_CELL = 2.0 ** -20


class EstimatesDegenerate(ValueError):
    """A per-level constant came out nonpositive."""


# ---------------------------------------------------------------------------
# Per-level constants
# ---------------------------------------------------------------------------

@dataclass
class LevelConstants:
    """Constants estimated on the level-n working region.

    ``M_n`` bounds the candidate on the inflated sublevel set, ``m_n`` is
    the minimum of the reshaped comparison rate on the working annulus,
    and the ``L_*`` are 10%-inflated finite-difference Lipschitz bounds.
    """

    n: int
    M_n: float
    m_n: float
    L_W: float
    L_f: float
    L_l: float
    alpha: float = 0.0
    method: str = "finite-difference sampling"


@dataclass
class RegularityEstimates:
    levels: dict = field(default_factory=dict)

    def add(self, c: LevelConstants) -> None:
        if c.M_n <= 0 or c.L_W <= 0 or c.L_f < 0 or c.L_l < 0:
            raise EstimatesDegenerate(f"nonpositive constants at level {c.n}")
        self.levels[c.n] = c


def estimate_level_constants(sys: ControlSystem, mrf: CandidateMRF,
                             script_w, n: int, budget: int = 160,
                             fd_step: float = 1e-5,
                             inflation: float = 1.1) -> LevelConstants:
    """Sample the level-n constants; only upper bounds are needed for the
    Lipschitz quantities and a lower bound for the rate minimum."""
    dim = mrf.dim
    R11 = float(mrf.proper_hint(11.0 * n))
    outer = probes.ball_points(dim, R11 + 1.0, 24, 12,
                               extra_directions=mrf.special_directions)
    M_n = float(np.max(mrf.value_many(outer)))

    annulus = probes.annulus_probes(mrf.value, dim, 1.0 / (2.0 * n),
                                    min(11.0 * n, M_n), budget,
                                    R11 * 1.25,
                                    extra_directions=mrf.special_directions)
    if annulus.shape[0] == 0:
        raise EstimatesDegenerate(f"no annulus probes at level {n}")
    m_n = 0.95 * float(min(script_w(x) for x in annulus))
    if m_n <= 0:
        raise EstimatesDegenerate(f"rate minimum nonpositive at level {n}")

    region = probes.ball_points(dim, float(mrf.proper_hint(M_n)), 16, 8,
                                extra_directions=mrf.special_directions)
    region = region[mrf.value_many(region) <= M_n]
    if region.shape[0] == 0:
        region = annulus
    L_W = max(1.0, inflation * max(
        float(np.linalg.norm(probes.fd_gradient(mrf.value, x, fd_step)))
        for x in region))

    dirs = probes.directions(dim, 2 * dim + 2)
    radius = sys.control_set.bounded_radius() or 2.0
    controls = sys.control_set.grid(radius, radius / 3.0)
    L_f = 0.0
    L_l = 0.0
    for x in region[:: max(1, region.shape[0] // 24)]:
        if sys.target.distance(x) <= fd_step:
            continue
        for u in controls:
            for e in dirs:
                fp = np.asarray(sys.dynamics(x + fd_step * e, u), dtype=float)
                fm = np.asarray(sys.dynamics(x - fd_step * e, u), dtype=float)
                L_f = max(L_f, float(np.linalg.norm(fp - fm)) / (2 * fd_step))
                lp = float(sys.lagrangian(x + fd_step * e, u))
                lm = float(sys.lagrangian(x - fd_step * e, u))
                L_l = max(L_l, abs(lp - lm) / (2 * fd_step))
    L_f *= inflation * math.sqrt(dim)
    L_l *= inflation * math.sqrt(dim)
    return LevelConstants(n=n, M_n=M_n, m_n=m_n, L_W=L_W, L_f=L_f, L_l=L_l)


def alpha_schedule(est: RegularityEstimates, p0: float, n: int) -> float:
    """Convolution weight max{8n L_W^2 + 1, 2 L_W (1 + L_W L_f + p0 L_l)/m_n + 1, 11n}."""
    c = est.levels[n]
    if c.m_n <= 0:
        raise EstimatesDegenerate(f"m_n <= 0 at level {n}")
    a = max(8.0 * n * c.L_W ** 2 + 1.0,
            2.0 * c.L_W * (1.0 + c.L_W * c.L_f + p0 * c.L_l) / c.m_n + 1.0,
            11.0 * n)
    c.alpha = a
    return a


# ---------------------------------------------------------------------------
# Inf-convolution
# ---------------------------------------------------------------------------

@dataclass
class InfConvResult:
    value: float
    argmin: Array
    subgradient: Array


def inf_convolution(value_fn, alpha: float, x: Array, search_box,
                    coarse: int = 7, n_starts: int = 3) -> InfConvResult:
    """min_y { value(y) + alpha |y - x|^2 } by coarse grid + local descent.

    ``search_box`` is a (lo, hi) pair that must contain the minimiser;
    landing on its boundary raises BoxTooSmall.  The reported subgradient
    of the convolution at x is 2 alpha (x - argmin).
    """
    if alpha <= 0:
        raise ValueError("convolution weight must be positive")
    x = np.asarray(x, dtype=float)
    lo, hi = (np.asarray(b, dtype=float) for b in search_box)

    def objective(y):
        dy = y - x
        return float(value_fn(y)) + alpha * float(np.dot(dy, dy))

    grid = probes.box_grid(lo, hi, coarse)
    grid = np.vstack([x[None, :], grid])
    vals = np.array([objective(y) for y in grid])
    order = np.argsort(vals, kind="stable")[:n_starts]

    best_y, best_v = grid[order[0]], float(vals[order[0]])
    for idx in order:
        res = optimize.minimize(objective, grid[idx], method="Nelder-Mead",
                                options={"xatol": 1e-11, "fatol": 1e-14,
                                         "maxiter": 800, "maxfev": 1600})
        if res.fun < best_v:
            best_v, best_y = float(res.fun), np.asarray(res.x, dtype=float)

    half = 0.5 * (hi - lo)
    center = 0.5 * (hi + lo)
    if np.any(np.abs(best_y - center) >= half * (1.0 - 1e-9) + 1e-15):
        raise BoxTooSmall(f"convolution minimiser hit the search box at x={x}")
    return InfConvResult(value=best_v, argmin=best_y,
                         subgradient=2.0 * alpha * (x - best_y))


def moreau_envelope_grid(values: Array, axes, alpha: float,
                         radius: float) -> Array:
    """Quadratic min-convolution of a sampled function on a uniform grid.

    Computes min_y { values(y) + alpha |x - y|^2 } at every grid node by
    separable windowed minimisation along each axis.  ``radius`` must
    bound the distance from any node to its minimiser (L/alpha for an
    L-Lipschitz function); the window is exact within that bound.
    """
    out = np.asarray(values, dtype=float).copy()
    for axis, coords in enumerate(axes):
        coords = np.asarray(coords, dtype=float)
        if coords.size < 2:
            continue
        step = float(coords[1] - coords[0])
        if not np.allclose(np.diff(coords), step, rtol=1e-9, atol=1e-12):
            raise ValueError("grid axes must be uniform")
        k_max = int(math.ceil(radius / step)) + 1
        moved = np.moveaxis(out, axis, 0)
        best = moved.copy()
        for k in range(1, k_max + 1):
            pen = alpha * (k * step) ** 2
            best[k:] = np.minimum(best[k:], moved[:-k] + pen)
            best[:-k] = np.minimum(best[:-k], moved[k:] + pen)
        out = np.moveaxis(best, 0, axis)
    return out


# ---------------------------------------------------------------------------
# Reshaping maps
# ---------------------------------------------------------------------------

def _smoothstep(tau):
    return tau * tau * (3.0 - 2.0 * tau)


def _smoothstep_d(tau):
    return 6.0 * tau * (1.0 - tau)


@dataclass
class SublevelStats:
    """Sampled map t -> max{ W(x) : W_alpha(x) <= t }."""

    t_nodes: Array
    max_w: Array

    @staticmethod
    def from_pairs(conv_values, w_values) -> "SublevelStats":
        conv_values = np.asarray(conv_values, dtype=float)
        w_values = np.asarray(w_values, dtype=float)
        order = np.argsort(conv_values, kind="stable")
        return SublevelStats(conv_values[order],
                             np.maximum.accumulate(w_values[order]))

    def excess(self) -> float:
        """max over samples of (max_w(t) - t)."""
        return float(np.max(self.max_w - self.t_nodes))


class Psi:
    """Monotone C^1 reshaping map for one regularisation level.

    Exact shift t + 1/(8n) on [0, 1/(2n)], identity on
    [1/n - 1/(8n), 10n], constant lift past 11n - 1/(8n); the two
    transitions are cubic smoothstep blends, so the derivative never
    drops below 1/2.
    """

    def __init__(self, n: int, lift: float):
        self.n = int(n)
        self.shift = 1.0 / (8.0 * n)
        self.t1 = 1.0 / (2.0 * n)
        self.t2 = 1.0 / n - self.shift
        self.t3 = 10.0 * n
        self.t4 = 11.0 * n - self.shift
        self.lift = float(lift)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = t.astype(float).copy()
        m = t <= self.t1
        out = np.where(m, t + self.shift, out)
        m = (t > self.t1) & (t < self.t2)
        tau = (t - self.t1) / (self.t2 - self.t1)
        out = np.where(m, t + self.shift * (1.0 - _smoothstep(np.clip(tau, 0, 1))), out)
        m = (t > self.t3) & (t < self.t4)
        tau = (t - self.t3) / (self.t4 - self.t3)
        out = np.where(m, t + self.lift * _smoothstep(np.clip(tau, 0, 1)), out)
        m = t >= self.t4
        out = np.where(m, t + self.lift, out)
        return float(out) if out.ndim == 0 else out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        out = np.ones_like(t, dtype=float)
        m = (t > self.t1) & (t < self.t2)
        tau = (t - self.t1) / (self.t2 - self.t1)
        out = np.where(m, 1.0 - self.shift * _smoothstep_d(np.clip(tau, 0, 1))
                       / (self.t2 - self.t1), out)
        m = (t > self.t3) & (t < self.t4)
        tau = (t - self.t3) / (self.t4 - self.t3)
        out = np.where(m, 1.0 + self.lift * _smoothstep_d(np.clip(tau, 0, 1))
                       / (self.t4 - self.t3), out)
        return float(out) if out.ndim == 0 else out


def build_psi(n: int, stats: SublevelStats, headroom: float = 0.1) -> Psi:
    """Reshaping map whose tail lift dominates 11n plus the sampled
    sublevel maxima (with 10% headroom for the truncation)."""
    t4 = 11.0 * n - 1.0 / (8.0 * n)
    tail = stats.t_nodes >= t4
    if np.any(tail):
        need = float(np.max(11.0 * n + stats.max_w[tail] - stats.t_nodes[tail]))
    else:
        need = 11.0 * n + stats.excess()
    lift = (1.0 + headroom) * max(need, 1e-9)
    psi = Psi(n, lift)
    if np.any(tail):
        lhs = psi(stats.t_nodes[tail])
        rhs = 11.0 * n + stats.max_w[tail]
        if np.any(lhs < rhs - 1e-9):
            raise ValueError(f"reshaping clauses inconsistent at level {n}")
    return psi


# ---------------------------------------------------------------------------
# Level assembly and the min construction
# ---------------------------------------------------------------------------

@dataclass
class ReshapedLevel:
    """One regularisation level: convolution weight, search-box half-width,
    reshaping map and the constants these were derived from."""

    n: int
    alpha: float
    constants: LevelConstants
    psi: Psi
    box_half: float
    _cache: dict = field(default_factory=dict, repr=False)

    def convolve(self, value_fn, x: Array) -> InfConvResult:
        key = tuple(np.round(np.asarray(x) / CACHE_CELL).astype(np.int64))
        hit = self._cache.get(key)
        if hit is None:
            lo = np.asarray(x, dtype=float) - self.box_half
            hi = np.asarray(x, dtype=float) + self.box_half
            hit = inf_convolution(value_fn, self.alpha, x, (lo, hi))
            if len(self._cache) > 100_000:
                self._cache.clear()
            self._cache[key] = hit
        return hit

    def value(self, value_fn, x: Array) -> float:
        return float(self.psi(self.convolve(value_fn, x).value))


class _WbarEvaluator:
    """Minimum over reshaped levels, with the active level's scaled
    convolution subgradient as the gradient selection."""

    def __init__(self, value_fn, levels: list[ReshapedLevel]):
        self.value_fn = value_fn
        self.levels = levels

    def detail(self, x: Array) -> tuple[float, ReshapedLevel, InfConvResult]:
        best = None
        for lev in self.levels:
            conv = lev.convolve(self.value_fn, x)
            val = float(lev.psi(conv.value))
            if best is None or val < best[0]:
                best = (val, lev, conv)
        return best

    def value(self, x: Array) -> float:
        return self.detail(np.asarray(x, dtype=float))[0]

    def gradient(self, x: Array) -> Array:
        _, lev, conv = self.detail(np.asarray(x, dtype=float))
        return float(lev.psi.derivative(conv.value)) * conv.subgradient


def build_semiconcave_mrf(sys: ControlSystem, mrf: CandidateMRF, p0: float,
                          n_max: int = 4, distance_rate: RateFunction = None,
                          budget: int = 160):
    """Regularise a Lipschitz candidate into a semiconcave one.

    ``distance_rate`` must come from a passed distance-comparison
    certification of the input at weight p0.  Returns (candidate, levels,
    estimates); a level that fails to build truncates the construction at
    the achieved depth rather than failing outright.
    """
    if distance_rate is None:
        raise ValueError("regularisation needs the certified distance rate")
    target = sys.target

    def script_w(x):
        return float(distance_rate(target.distance(x)))

    base_value = mrf.value
    if target.interior_contains is not None:
        def value_fn(y):
            return 0.0 if target.interior_contains(y) else float(base_value(y))
    else:
        value_fn = base_value

    estimates = RegularityEstimates()
    levels: list[ReshapedLevel] = []
    errors: list[str] = []
    for n in range(1, n_max + 1):
        try:
            const = estimate_level_constants(sys, mrf, script_w, n,
                                             budget=budget)
            estimates.add(const)
            alpha = alpha_schedule(estimates, p0, n)
            bound = min(1.0 / (8.0 * n * const.L_W),
                        const.m_n / (2.0 * (1.0 + const.L_W * const.L_f
                                            + p0 * const.L_l)))
            box_half = max(4.0 * bound, 2.0 / alpha)
            level = ReshapedLevel(n=n, alpha=alpha, constants=const,
                                  psi=Psi(n, 1.0), box_half=box_half)
            # sample (W_alpha, W) pairs for the tail clause of the reshaping
            pts = probes.ball_points(mrf.dim,
                                     float(mrf.proper_hint(11.0 * n)) * 1.3,
                                     16, 8,
                                     extra_directions=mrf.special_directions)
            conv_vals = np.array([level.convolve(value_fn, x).value for x in pts])
            w_vals = mrf.value_many(pts)
            stats = SublevelStats.from_pairs(conv_vals, w_vals)
            # cached convolutions stay valid: the reshaping map acts on top
            level.psi = build_psi(n, stats)
            levels.append(level)
        except (EstimatesDegenerate, BoxTooSmall, ValueError) as exc:
            errors.append(f"level {n}: {exc}")
            break
    if not levels:
        raise EstimatesDegenerate("no regularisation level could be built: "
                                  + "; ".join(errors))

    evaluator = _WbarEvaluator(value_fn, levels)
    shift = 1.0 / 8.0
    wbar = CandidateMRF(
        dim=mrf.dim,
        value=evaluator.value,
        gradient_selection=evaluator.gradient,
        regularity="semiconcave",
        proper_hint=lambda level: float(mrf.proper_hint(level + shift)),
        special_directions=mrf.special_directions,
        name=(mrf.name or "candidate") + "_regularized",
    )
    wbar._evaluator = evaluator
    wbar._build_errors = errors
    return wbar, levels, estimates


def check_halved_decrease(sys: ControlSystem, wbar: CandidateMRF, p0: float,
                          region: dict, distance_rate: RateFunction,
                          N_table=None, budget: int = 96,
                          h: float | None = None) -> CertReport:
    """Certify H(x, p0/2, p) <= -rate(d(x))/4 for the regularised candidate."""
    report = _certify(
        sys, wbar, p0 / 2.0, region,
        bound=lambda x, w: 0.25 * float(distance_rate(sys.target.distance(x))),
        mode="halved_rate", N_table=N_table, budget=budget, h=h)
    report.notes.append("decrease checked at half weight, quarter rate")
    return report


# ---------------------------------------------------------------------------
# Grid export
# ---------------------------------------------------------------------------

def save_mrf_grid(mrf: CandidateMRF, lo, hi, shape, path) -> None:
    """Export a candidate as a multilinear grid (binary values + JSON rule)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    axes = [np.linspace(lo[i], hi[i], shape[i]) for i in range(lo.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = np.array([mrf.w(x) for x in pts]).reshape(shape)
    path = Path(path)
    np.save(path.with_suffix(".npy"), vals)
    meta = {"lo": lo.tolist(), "hi": hi.tolist(), "shape": list(shape),
            "rule": "multilinear", "name": mrf.name,
            "regularity": mrf.regularity,
            "grid": path.with_suffix(".npy").name}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_mrf_grid(path) -> CandidateMRF:
    """Load a grid-backed candidate saved by :func:`save_mrf_grid`."""
    from scipy.interpolate import RegularGridInterpolator

    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    vals = np.load(path.with_suffix(".json").parent / meta["grid"])
    lo = np.asarray(meta["lo"], dtype=float)
    hi = np.asarray(meta["hi"], dtype=float)
    axes = [np.linspace(lo[i], hi[i], meta["shape"][i]) for i in range(lo.size)]
    interp = RegularGridInterpolator(axes, vals, method="linear",
                                     bounds_error=False, fill_value=None)

    def value(x):
        return float(interp(np.asarray(x, dtype=float)[None, :])[0])

    outer = float(np.max(np.abs(np.stack([lo, hi]))))
    return CandidateMRF(
        dim=lo.size,
        value=value,
        gradient_selection=lambda x: probes.fd_gradient(value, x, 1e-5),
        regularity=meta.get("regularity", "lipschitz"),
        proper_hint=lambda level: outer * math.sqrt(lo.size),
        name=meta.get("name", "grid"),
    )
