"""Deterministic probe-point generators.

Everything here is reproducible by construction: direction sets come from
fixed lattices (signs in 1-D, equal angles in 2-D, a Fibonacci spiral in
3-D, a seeded Gaussian fallback above), and level-set points are located
by bisection along rays.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

Array = np.ndarray


def directions(dim: int, k: int) -> Array:
    """k deterministic, roughly equidistributed unit vectors in R^dim."""
    if k <= 0:
        return np.empty((0, dim))
    if dim == 1:
        out = np.ones((k, 1))
        out[1::2, 0] = -1.0
        return out
    if dim == 2:
        ang = 2.0 * np.pi * np.arange(k) / k
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if dim == 3:
        i = np.arange(k, dtype=float) + 0.5
        phi = math.pi * (3.0 - math.sqrt(5.0)) * i
        z = 1.0 - 2.0 * i / k
        rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    rng = np.random.default_rng(123456789)
    v = rng.standard_normal((k, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def ray_level_point(value: Callable[[Array], float], level: float,
                    direction: Array, t_max: float, scan: int = 64,
                    iters: int = 60) -> Array | None:
    """First point along ``t * direction`` where ``value`` crosses ``level``.

    Scans a coarse radial grid for a bracket, then bisects.  Returns None
    when the level is never reached within ``t_max``.
    """
    direction = np.asarray(direction, dtype=float)
    ts = np.linspace(t_max / scan, t_max, scan)
    prev_t, prev_v = 0.0, 0.0
    for t in ts:
        v = value(t * direction)
        if v >= level:
            lo, hi = prev_t, t
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                if value(mid * direction) >= level:
                    hi = mid
                else:
                    lo = mid
            return hi * direction
        prev_t, prev_v = t, v
    return None


def annulus_probes(value: Callable[[Array], float], dim: int, lo: float,
                   hi: float, budget: int, radius_cap: float,
                   extra_directions: Array | None = None,
                   ray_solve: Callable[[float, Array], Array] | None = None,
                   n_levels: int | None = None) -> Array:
    """Deterministic points with ``value`` inside [lo, hi].

    Rays are shot from the origin along a fixed direction set; on each ray
    the requested levels are located by ``ray_solve`` when the caller has
    a closed form (homogeneous functions, point targets) and by bisection
    otherwise.  Points come back in direction-major order.
    """
    if not (0 < lo <= hi):
        raise ValueError("need 0 < lo <= hi")
    if n_levels is None:
        n_levels = int(min(16, max(4, budget // 24)))
    levels = np.geomspace(lo, hi, n_levels)
    n_dirs = max(4, int(math.ceil(budget / n_levels)))
    dirs = directions(dim, n_dirs)
    if extra_directions is not None and len(extra_directions):
        dirs = np.vstack([np.asarray(extra_directions, dtype=float), dirs])
    pts = []
    for d in dirs:
        for lev in levels:
            if ray_solve is not None:
                pt = ray_solve(lev, d)
            else:
                pt = ray_level_point(value, lev, d, radius_cap)
            if pt is None:
                continue
            v = value(pt)
            if lo * (1 - 1e-6) <= v <= hi * (1 + 1e-6):
                pts.append(pt)
    return np.asarray(pts) if pts else np.empty((0, dim))


def level_probes(value: Callable[[Array], float], dim: int, level: float,
                 budget: int, radius_cap: float,
                 extra_directions: Array | None = None,
                 ray_solve: Callable[[float, Array], Array] | None = None) -> Array:
    """Deterministic points on (numerically) the level set {value = level}."""
    dirs = directions(dim, max(4, budget))
    if extra_directions is not None and len(extra_directions):
        dirs = np.vstack([np.asarray(extra_directions, dtype=float), dirs])
    pts = []
    for d in dirs:
        if ray_solve is not None:
            pt = ray_solve(level, d)
        else:
            pt = ray_level_point(value, level, d, radius_cap)
        if pt is not None:
            pts.append(pt)
    return np.asarray(pts) if pts else np.empty((0, dim))


def sphere_points(dim: int, radius: float, k: int,
                  extra_directions: Array | None = None) -> Array:
    """k points on the sphere of the given radius (plus extra directions)."""
    dirs = directions(dim, k)
    if extra_directions is not None and len(extra_directions):
        dirs = np.vstack([np.asarray(extra_directions, dtype=float), dirs])
    return radius * dirs


def ball_points(dim: int, radius: float, k_dirs: int, k_radii: int,
                extra_directions: Array | None = None) -> Array:
    """Deterministic sample of the closed ball (direction x radius grid)."""
    dirs = directions(dim, k_dirs)
    if extra_directions is not None and len(extra_directions):
        dirs = np.vstack([np.asarray(extra_directions, dtype=float), dirs])
    radii = np.linspace(radius / k_radii, radius, k_radii)
    return (dirs[:, None, :] * radii[None, :, None]).reshape(-1, dim)


def box_grid(lo: Array, hi: Array, pts_per_axis: int) -> Array:
    """Regular grid over an axis-aligned box, C order."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    axes = [np.linspace(lo[i], hi[i], pts_per_axis) for i in range(lo.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel(order="C") for m in mesh], axis=1)


def fd_gradient(value: Callable[[Array], float], x: Array,
                step: float = 1e-6) -> Array:
    """Central finite-difference gradient."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (value(x + e) - value(x - e)) / (2.0 * step)
    return g


def offset_gradients(value: Callable[[Array], float], x: Array,
                     step: float = 1e-6, n_offsets: int = 8) -> list[Array]:
    """Finite-difference gradients at several offsets around x.

    The spread of these estimates is the nonsmoothness detector used by
    the certifier: smooth points give nearly identical gradients, corners
    give a dispersed family that is then treated as a set of candidate
    limiting gradients.
    """
    x = np.asarray(x, dtype=float)
    offs = directions(x.size, n_offsets) * (8.0 * step)
    return [fd_gradient(value, x + o, step) for o in offs]
