"""Nonholonomic-integrator benchmark plugin.

Three-state system driven by a two-dimensional control in the closed unit
disk; the third state is fed by the angular momentum of the first two.
The module ships two candidate functions for stabilisation to the origin
(a smooth-except-on-two-manifolds quadratic one and a positively
homogeneous max-form one), the closed-form inner minimisation of the
control-linear Hamiltonian part, and the analytic gradient branches on
every declared nonsmooth manifold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .certify import CandidateMRF, RateFunction
from .core import ControlSetDesc, ControlSystem, SystemBounds, TargetDesc

Array = np.ndarray

_AXIS_TOL = 1e-10
_MANIFOLD_TOL = 1e-9


def nhi_dynamics(x: Array, u: Array) -> Array:
    """(u1, u2, x1*u2 - x2*u1)."""
    return np.array([u[0], u[1], x[0] * u[1] - x[1] * u[0]])


def nhi_dynamics_batch(x: Array, U: Array) -> Array:
    U = np.atleast_2d(U)
    out = np.empty((U.shape[0], 3))
    out[:, 0] = U[:, 0]
    out[:, 1] = U[:, 1]
    out[:, 2] = x[0] * U[:, 1] - x[1] * U[:, 0]
    return out


def nhi_V(x: Array) -> float | Array:
    """Auxiliary positive-definite form tied to the inner minimisation."""
    x = np.asarray(x, dtype=float)
    rho2 = x[..., 0] ** 2 + x[..., 1] ** 2
    rho = np.sqrt(rho2)
    a3 = np.abs(x[..., 2])
    val = (rho - a3) ** 2 + (rho - 2.0 * a3) ** 2 * rho2
    return float(val) if val.ndim == 0 else val


def nhi_W1(x: Array) -> float | Array:
    """(sqrt(x1^2+x2^2) - |x3|)^2 + x3^2."""
    x = np.asarray(x, dtype=float)
    rho = np.hypot(x[..., 0], x[..., 1])
    a3 = np.abs(x[..., 2])
    val = (rho - a3) ** 2 + x[..., 2] ** 2
    return float(val) if val.ndim == 0 else val


def nhi_W2(x: Array) -> float | Array:
    """max(sqrt(x1^2+x2^2), |x3| - sqrt(x1^2+x2^2))."""
    x = np.asarray(x, dtype=float)
    rho = np.hypot(x[..., 0], x[..., 1])
    val = np.maximum(rho, np.abs(x[..., 2]) - rho)
    return float(val) if val.ndim == 0 else val


def nhi_min_inner(x: Array, p: Array) -> tuple[float, Array]:
    """Closed-form min over the unit disk of <p, f(x, u)>.

    With a = p1 - p3*x2 and b = p2 + p3*x1 the minimum is -sqrt(a^2+b^2),
    achieved at u = -(a, b)/|(a, b)| (u = 0 when a = b = 0).
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    a = p[0] - p[2] * x[1]
    b = p[1] + p[2] * x[0]
    norm = math.hypot(a, b)
    if norm == 0.0:
        return 0.0, np.zeros(2)
    return -norm, np.array([-a / norm, -b / norm])


# ---------------------------------------------------------------------------
# Gradients and nonsmooth branches
# ---------------------------------------------------------------------------

def w1_gradient(x: Array) -> Array:
    """Classical gradient of nhi_W1 away from {x3 = 0} and the x3-axis."""
    x1, x2, x3 = float(x[0]), float(x[1]), float(x[2])
    rho = math.hypot(x1, x2)
    a3 = abs(x3)
    s = 1.0 if x3 >= 0 else -1.0
    if rho < _AXIS_TOL:
        return np.array([0.0, 0.0, 4.0 * x3])
    g12 = 2.0 * (rho - a3) / rho
    g3 = -2.0 * (rho - a3) * s + 2.0 * x3
    return np.array([g12 * x1, g12 * x2, g3])


def w1_branches(x: Array) -> list[Array]:
    """Limiting gradients of nhi_W1, including both sides of {x3 = 0} and
    a representative fan on the x3-axis."""
    x1, x2, x3 = float(x[0]), float(x[1]), float(x[2])
    rho = math.hypot(x1, x2)
    scale = max(1.0, rho, abs(x3))
    if rho <= _AXIS_TOL * scale:
        # approach along 8 azimuths: 2(rho-|x3|) -> -2|x3| radially
        out = []
        for k in range(8):
            th = math.pi * k / 4.0
            out.append(np.array([-2.0 * abs(x3) * math.cos(th),
                                 -2.0 * abs(x3) * math.sin(th),
                                 4.0 * x3]))
        return out
    if abs(x3) <= _AXIS_TOL * scale:
        g12 = 2.0  # (rho - 0)/rho
        return [np.array([g12 * x1, g12 * x2, -2.0 * rho * s])
                for s in (1.0, -1.0)]
    return [w1_gradient(x)]


def w2_gradient(x: Array) -> Array:
    """Gradient of the active branch of nhi_W2 (first branch on ties)."""
    x1, x2, x3 = float(x[0]), float(x[1]), float(x[2])
    rho = math.hypot(x1, x2)
    if rho >= abs(x3) - rho:
        if rho < _AXIS_TOL:
            return np.array([1.0, 0.0, 0.0])
        return np.array([x1 / rho, x2 / rho, 0.0])
    if rho < _AXIS_TOL:
        # radial branch limit along the x1 direction
        return np.array([-1.0, 0.0, math.copysign(1.0, x3)])
    return np.array([-x1 / rho, -x2 / rho, math.copysign(1.0, x3)])


def w2_branches(x: Array) -> list[Array]:
    """Limiting gradients of nhi_W2; empty on the x3-axis where the
    proximal subdifferential vanishes."""
    x1, x2, x3 = float(x[0]), float(x[1]), float(x[2])
    rho = math.hypot(x1, x2)
    scale = max(1.0, rho ** 2, x3 ** 2)
    if rho <= _AXIS_TOL * max(1.0, abs(x3)) and abs(x3) > 2.0 * rho:
        return []
    g1 = np.array([x1 / rho, x2 / rho, 0.0]) if rho > 0 else None
    g2 = (np.array([-x1 / rho, -x2 / rho, math.copysign(1.0, x3)])
          if rho > 0 else None)
    if abs(x3 * x3 - 4.0 * rho * rho) <= _MANIFOLD_TOL * scale:
        return [g for g in (g1, g2) if g is not None]
    if rho >= abs(x3) - rho:
        return [g1]
    return [g2]


def w2_subdifferential_empty(x: Array) -> bool:
    rho = math.hypot(float(x[0]), float(x[1]))
    return rho <= _AXIS_TOL * max(1.0, abs(float(x[2]))) and abs(float(x[2])) > 2.0 * rho


def _cone_directions(half_angle_ratio: float) -> Array:
    """Unit vectors with |x3| = ratio * rho, 8 azimuths, both signs."""
    out = []
    for k in range(8):
        th = math.pi * k / 4.0
        for s in (1.0, -1.0):
            v = np.array([math.cos(th), math.sin(th), s * half_angle_ratio])
            out.append(v / np.linalg.norm(v))
    return np.asarray(out)


_W2_SPECIAL = np.vstack([
    np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
              [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
              [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
    _cone_directions(2.0),
])

_W1_SPECIAL = np.vstack([
    np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
              [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
              [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
    _cone_directions(1.0),
])


def _w1_ray_solve(level: float, d: Array) -> Array | None:
    base = nhi_W1(d)
    if base <= 0:
        return None
    return math.sqrt(level / base) * np.asarray(d, dtype=float)


def _w2_ray_solve(level: float, d: Array) -> Array | None:
    base = nhi_W2(d)
    if base <= 0:
        return None
    return (level / base) * np.asarray(d, dtype=float)


def make_w1_mrf(rate=None) -> CandidateMRF:
    """Quadratic-form candidate; declared semiconcave off the target."""
    return CandidateMRF(
        dim=3,
        value=nhi_W1,
        gradient_selection=w1_gradient,
        regularity="semiconcave",
        rate=rate,
        proper_hint=lambda level: 1.01 * math.sqrt(max(5.0 * level, 0.0)) + 1e-9,
        gradient_branches=w1_branches,
        value_batch=nhi_W1,
        special_directions=_W1_SPECIAL,
        ray_solve=_w1_ray_solve,
        name="nhi_w1",
    )


def make_w2_mrf(rate=None) -> CandidateMRF:
    """Max-form candidate; Lipschitz but not semiconcave on the cone
    {x3^2 = 4(x1^2 + x2^2)}."""
    return CandidateMRF(
        dim=3,
        value=nhi_W2,
        gradient_selection=w2_gradient,
        regularity="lipschitz",
        rate=rate,
        proper_hint=lambda level: 1.01 * math.sqrt(5.0) * max(level, 0.0) + 1e-9,
        gradient_branches=w2_branches,
        subdifferential_empty=w2_subdifferential_empty,
        value_batch=nhi_W2,
        special_directions=_W2_SPECIAL,
        ray_solve=_w2_ray_solve,
        fast_regularizer=make_w2_regularized,
        name="nhi_w2",
    )


# ---------------------------------------------------------------------------
# Fast axisymmetric regularisation
# ---------------------------------------------------------------------------

class _Bilinear2D:
    """Bilinear table on a uniform (u, v) grid, with scalar and batch eval."""

    def __init__(self, u_axis: Array, v_axis: Array, G: Array):
        self.u0 = float(u_axis[0])
        self.du = float(u_axis[1] - u_axis[0])
        self.v0 = float(v_axis[0])
        self.dv = float(v_axis[1] - v_axis[0])
        self.nu = u_axis.size
        self.nv = v_axis.size
        self.G = np.asarray(G, dtype=float)

    def __call__(self, u, v):
        fu = np.clip((np.asarray(u, dtype=float) - self.u0) / self.du,
                     0.0, self.nu - 1 - 1e-12)
        fv = np.clip((np.asarray(v, dtype=float) - self.v0) / self.dv,
                     0.0, self.nv - 1 - 1e-12)
        iu = fu.astype(int)
        iv = fv.astype(int)
        au = fu - iu
        av = fv - iv
        G = self.G
        out = (G[iu, iv] * (1 - au) * (1 - av)
               + G[iu + 1, iv] * au * (1 - av)
               + G[iu, iv + 1] * (1 - au) * av
               + G[iu + 1, iv + 1] * au * av)
        return float(out) if out.ndim == 0 else out


class AxisymmetricMRF:
    """Candidate of the form x -> G(rho(x), x3) with tabulated G.

    Value and gradient are bilinear in the (cylinder radius, height)
    half-plane; the 3-D gradient follows by the chain rule, with a fixed
    radial direction on the axis for determinism.
    """

    def __init__(self, rho_axis: Array, x3_axis: Array, G: Array):
        self.value_2d = _Bilinear2D(rho_axis, x3_axis, G)
        g_rho, g_x3 = np.gradient(G, rho_axis, x3_axis)
        self.grad_rho = _Bilinear2D(rho_axis, x3_axis, g_rho)
        self.grad_x3 = _Bilinear2D(rho_axis, x3_axis, g_x3)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.value_2d(math.hypot(x[0], x[1]), x[2]))

    def value_batch(self, X) -> Array:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.value_2d(np.hypot(X[:, 0], X[:, 1]), X[:, 2])

    def gradient(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        rho = math.hypot(x[0], x[1])
        gr = float(self.grad_rho(rho, x[2]))
        g3 = float(self.grad_x3(rho, x[2]))
        if rho > 1e-12:
            return np.array([gr * x[0] / rho, gr * x[1] / rho, g3])
        return np.array([gr, 0.0, g3])


def make_w2_regularized(sys: ControlSystem, p0: float,
                        distance_rate: RateFunction, n_max: int = 5,
                        span: float = 8.0, n_rho: int = 1025,
                        n_x3: int = 2049) -> CandidateMRF:
    """Grid-accelerated regularisation of the max-form candidate.

    The candidate and the quadratic penalty are both rotation invariant
    about the x3 axis, so the 3-D inf-convolution collapses to the
    (radius, height) half-plane, where the exact grid Moreau envelope
    runs in seconds.  Per-level constants, convolution weights and
    reshaping maps are the same as the pointwise pipeline; only the
    minimisation is discretised (onto grid nodes, which keeps both sides
    of the value sandwich).
    """
    from .regularize import (RegularityEstimates, SublevelStats,
                             alpha_schedule, build_psi,
                             estimate_level_constants, moreau_envelope_grid)

    w2 = make_w2_mrf()

    def script_w(x):
        return float(distance_rate(sys.target.distance(x)))

    rho_axis = np.linspace(0.0, span, n_rho)
    x3_axis = np.linspace(-span, span, n_x3)
    base = np.maximum(rho_axis[:, None],
                      np.abs(x3_axis)[None, :] - rho_axis[:, None])

    estimates = RegularityEstimates()
    G = None
    for n in range(1, n_max + 1):
        const = estimate_level_constants(sys, w2, script_w, n, budget=96)
        estimates.add(const)
        alpha = alpha_schedule(estimates, p0, n)
        radius = 2.0 * const.L_W / alpha
        env = moreau_envelope_grid(base, [rho_axis, x3_axis], alpha, radius)
        stride = max(1, env.size // 60_000)
        stats = SublevelStats.from_pairs(env.ravel()[::stride],
                                         base.ravel()[::stride])
        psi = build_psi(n, stats)
        level = psi(env)
        G = level if G is None else np.minimum(G, level)

    table = AxisymmetricMRF(rho_axis, x3_axis, G)
    return CandidateMRF(
        dim=3,
        value=table.value,
        gradient_selection=table.gradient,
        regularity="semiconcave",
        proper_hint=lambda level: 1.01 * math.sqrt(5.0) * (max(level, 0.0)
                                                           + 0.13) + 1e-9,
        value_batch=table.value_batch,
        special_directions=_W2_SPECIAL,
        name="nhi_w2_regularized",
    )


# ---------------------------------------------------------------------------
# System assembly
# ---------------------------------------------------------------------------

@dataclass
class NHIConfig:
    """Lagrangian mode and cost weight for the benchmark.

    ``constant`` mode runs l = M_l and admits weights p0 < 1/M_l;
    ``sqrtv`` scales the square root of the auxiliary form by C and
    admits p0 < 1/C.  ``custom`` takes any callable bounded by M_l.
    """

    lagrangian_mode: str = "constant"
    p0: float = 0.5
    M_l: float = 1.0
    C: float = 1.0
    custom_lagrangian: object = None

    def validate(self) -> None:
        if self.lagrangian_mode not in ("constant", "sqrtv", "custom"):
            raise ValueError(f"unknown lagrangian mode: {self.lagrangian_mode}")
        if self.p0 < 0:
            raise ValueError("p0 must be nonnegative")
        if self.lagrangian_mode == "constant" and self.p0 >= 1.0 / self.M_l:
            raise ValueError(
                f"constant mode needs p0 < 1/M_l = {1.0 / self.M_l}")
        if self.lagrangian_mode == "sqrtv" and self.p0 >= 1.0 / self.C:
            raise ValueError(f"sqrtv mode needs p0 < 1/C = {1.0 / self.C}")
        if self.lagrangian_mode == "custom" and self.custom_lagrangian is None:
            raise ValueError("custom mode needs a lagrangian callable")


def make_nhi_system(lagrangian_mode: str = "constant", M_l: float = 1.0,
                    C: float = 1.0, p0: float | None = None,
                    custom_lagrangian=None) -> ControlSystem:
    """Assemble the benchmark system with the requested running cost."""
    cfg = NHIConfig(lagrangian_mode=lagrangian_mode, p0=0.0 if p0 is None else p0,
                    M_l=M_l, C=C)
    cfg.custom_lagrangian = custom_lagrangian
    cfg.validate()

    if lagrangian_mode == "constant":
        def lagrangian(x, u):
            return M_l

        def lagrangian_batch(x, U):
            return np.full(np.atleast_2d(U).shape[0], M_l)

        def M(R):
            return math.sqrt(1.0 + R * R + M_l * M_l)
    elif lagrangian_mode == "sqrtv":
        def lagrangian(x, u):
            return C * math.sqrt(max(nhi_V(x), 0.0))

        def lagrangian_batch(x, U):
            val = C * math.sqrt(max(nhi_V(x), 0.0))
            return np.full(np.atleast_2d(U).shape[0], val)

        def M(R):
            v_max = R * R + 4.0 * R ** 4
            return math.sqrt(1.0 + R * R + C * C * v_max)
    else:
        lagrangian = custom_lagrangian
        lagrangian_batch = None

        def M(R):
            return math.sqrt(1.0 + R * R + M_l * M_l)

    return ControlSystem(
        state_dim=3,
        control_dim=2,
        dynamics=nhi_dynamics,
        lagrangian=lagrangian,
        control_set=ControlSetDesc.ball(1.0, dim=2),
        target=TargetDesc.point(3),
        bounds=SystemBounds(M=M, Mtilde=lambda R: math.sqrt(1.0 + R * R)),
        dynamics_batch=nhi_dynamics_batch,
        lagrangian_batch=lagrangian_batch,
        name="nhi",
    )
