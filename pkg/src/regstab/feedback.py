"""Feedback synthesis from a certified candidate function.

The feedback at x picks the control achieving the cut Hamiltonian
minimum for the fixed gradient selection p(x), with the cut radius read
from the compactification table at the current value level.  Evaluations
are memoised on a quantised state lattice so that repeated queries from
sampling runs are bit-stable.
"""

from __future__ import annotations

import numpy as np

from .certify import CandidateMRF, RateFunction
from .core import Array, ControlSystem, MonotoneTable, min_hamiltonian

#: Edge length of the memoisation cells.
CACHE_CELL = 2.0 ** -20


class Feedback:
    """State feedback K(x) in argmin of <p(x), f(x,u)> + p0*l(x,u).

    The compactification table is clamped at its smallest computed level,
    so the cut radius stays bounded as the value tends to zero; runs
    report when the clamp was active.
    """

    def __init__(self, sys: ControlSystem, mrf: CandidateMRF, p0: float,
                 N_table, h: float | None = None):
        self.sys = sys
        self.mrf = mrf
        self.p0 = float(p0)
        self.h = h
        if isinstance(N_table, (int, float)):
            N_table = MonotoneTable.constant(float(N_table))
        self.N_table = N_table
        self._cache: dict = {}
        self.clamp_hits = 0

    def _key(self, x: Array) -> tuple:
        return tuple(np.round(np.asarray(x, dtype=float) / CACHE_CELL).astype(np.int64))

    def radius_at(self, w: float) -> float:
        if isinstance(self.N_table, MonotoneTable):
            lo = float(self.N_table.nodes[0])
            hi = float(self.N_table.nodes[-1])
            if w < lo or w > hi:
                self.clamp_hits += 1
            return float(self.N_table(min(max(w, lo), hi)))
        return float(self.N_table(w))

    def control(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        key = self._key(x)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        p = np.asarray(self.mrf.gradient_selection(x), dtype=float)
        N = self.radius_at(self.mrf.w(x))
        _, u = min_hamiltonian(self.sys, x, self.p0, p, N, self.h)
        if len(self._cache) > 200_000:
            self._cache.clear()
        self._cache[key] = u
        return u

    __call__ = control


def synthesize_feedback(sys: ControlSystem, mrf: CandidateMRF, p0: float,
                        N_table, h: float | None = None) -> Feedback:
    """Build the deterministic argmin feedback for a candidate function."""
    return Feedback(sys, mrf, p0, N_table, h=h)


def feedback_margin(sys: ControlSystem, fb: Feedback, x: Array,
                    rate: RateFunction | None = None) -> float:
    """Pointwise decrease margin of the closed loop at x.

    Returns -(<p(x), f(x,K(x))> + p0*l(x,K(x))) - rate(W(x)); positive
    means the synthesised control satisfies the strict decrease there.
    """
    x = np.asarray(x, dtype=float)
    if sys.target.distance(x) <= 0:
        raise ValueError("margin is only defined off the target")
    u = fb.control(x)
    p = np.asarray(fb.mrf.gradient_selection(x), dtype=float)
    drift = float(np.dot(p, sys.dynamics(x, u))) + fb.p0 * float(sys.lagrangian(x, u))
    rate = rate if rate is not None else fb.mrf.rate
    if rate is None:
        raise ValueError("no rate attached to the candidate or passed in")
    return -drift - float(rate(fb.mrf.w(x)))
