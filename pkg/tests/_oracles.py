"""Independent brute-force oracles used to freeze expected values.

These deliberately avoid the library's own minimisers: the disk oracle is
a dense polar grid (radial step and angular arc step both equal to the
stated step), the interval oracle a dense 1-D grid.
"""

import math

import numpy as np

_DISK_CACHE = {}


def disk_grid(step: float = 1e-3):
    """Polar grid of the closed unit disk at the given step."""
    key = round(step, 12)
    if key not in _DISK_CACHE:
        radii = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
        n_theta = int(math.ceil(2.0 * math.pi / step))
        theta = 2.0 * math.pi * np.arange(n_theta) / n_theta
        u1 = np.outer(radii, np.cos(theta)).ravel()
        u2 = np.outer(radii, np.sin(theta)).ravel()
        _DISK_CACHE[key] = (u1, u2)
    return _DISK_CACHE[key]


def disk_min_linear(a: float, b: float, step: float = 1e-3):
    """min of a*u1 + b*u2 over the unit disk by brute force."""
    u1, u2 = disk_grid(step)
    vals = a * u1 + b * u2
    i = int(np.argmin(vals))
    return float(vals[i]), np.array([u1[i], u2[i]])


def disk_min_inner(x, p, step: float = 1e-3):
    """min over the unit disk of <p, f(x, u)> for the benchmark dynamics."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    a = p[0] - p[2] * x[1]
    b = p[1] + p[2] * x[0]
    return disk_min_linear(a, b, step)


def interval_min(fn, lo: float, hi: float, step: float = 1e-4):
    """Brute-force minimum of a scalar function on [lo, hi]."""
    us = np.arange(lo, hi + step, step)
    vals = np.array([fn(u) for u in us])
    i = int(np.argmin(vals))
    return float(vals[i]), float(us[i])


def sphere_min(fn, radius: float, n: int = 400_000, seed: int = 0):
    """Brute-force minimum of fn over a sphere (dense random directions)."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 3))
    d *= radius / np.linalg.norm(d, axis=1, keepdims=True)
    vals = fn(d)
    i = int(np.argmin(vals))
    return float(vals[i]), d[i]


def ball_max(fn, radius: float, n: int = 400_000, seed: int = 1):
    """Brute-force maximum of fn over a closed ball."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / 3.0)
    pts = d * r[:, None]
    vals = fn(pts)
    i = int(np.argmax(vals))
    return float(vals[i]), pts[i]
