"""Lorenz '96 model: vector field, bilinear form, Jacobian and RK4 flow.

States are plain float64 arrays of length J. Component j in formulas is
1-based; storage is 0-based and indices wrap periodically, so ``u[j-2]``
with numpy negative indexing is exactly the periodic neighbour.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import BlowUpError, DimensionError

DEFAULT_DT = 1e-3


@dataclass(frozen=True)
class ModelParams:
    """Dimension ``J`` and constant forcing ``F`` of the model."""

    J: int = 60
    F: float = 8.0

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 4:
            raise ValueError(f"J must be an integer >= 4, got {self.J}")
        if not np.isfinite(self.F):
            raise ValueError("F must be finite")
        object.__setattr__(self, "J", int(self.J))
        object.__setattr__(self, "F", float(self.F))

    @property
    def K(self):
        """Squared radius 2JF^2 of the absorbing ball."""
        return 2.0 * self.J * self.F ** 2

    def fixed_point(self):
        return np.full(self.J, self.F)


@dataclass(frozen=True)
class TangentPropagator:
    """Solution ``L`` of the variational equation over ``window=(t0, t1)``."""

    L: np.ndarray
    window: tuple = (0.0, 0.0)

    def __post_init__(self):
        L = np.array(self.L, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise DimensionError(f"tangent propagator must be square, got {L.shape}")
        if not np.all(np.isfinite(L)):
            raise BlowUpError("non-finite tangent propagator")
        L.setflags(write=False)
        object.__setattr__(self, "L", L)


def check_state(u, p):
    u = np.asarray(u, dtype=float)
    if u.shape != (p.J,):
        raise DimensionError(f"expected state of length {p.J}, got shape {u.shape}")
    return u


def vector_field(u, p):
    """Right-hand side u_{j-1}(u_{j+1} - u_{j-2}) - u_j + F."""
    u = check_state(u, p)
    return np.roll(u, 1) * (np.roll(u, -1) - np.roll(u, 2)) - u + p.F


def bilinear_B(u, v, p=None):
    """Symmetric bilinear form B(u, v) of the dissipative form du/dt + u + B(u,u) = f.

    Component j is -(v_{j-1}u_{j+1} + u_{j-1}v_{j+1} - v_{j-2}u_{j-1} - u_{j-2}v_{j-1})/2,
    so that B(u, u) = -u_{j-1}(u_{j+1} - u_{j-2}).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1 or (p is not None and u.shape[0] != p.J):
        raise DimensionError(f"incompatible shapes {u.shape} and {v.shape}")
    um1, up1, um2 = np.roll(u, 1), np.roll(u, -1), np.roll(u, 2)
    vm1, vp1, vm2 = np.roll(v, 1), np.roll(v, -1), np.roll(v, 2)
    return -0.5 * (vm1 * up1 + um1 * vp1 - vm2 * um1 - um2 * vm1)


def jacobian(u, p):
    """Analytic Jacobian of :func:`vector_field` at ``u``."""
    u = check_state(u, p)
    J = p.J
    D = -np.eye(J)
    rows = np.arange(J)
    # np.add.at keeps small-J cases right where neighbour columns coincide
    np.add.at(D, (rows, (rows - 2) % J), -np.roll(u, 1))
    np.add.at(D, (rows, (rows - 1) % J), np.roll(u, -1) - np.roll(u, 2))
    np.add.at(D, (rows, (rows + 1) % J), np.roll(u, 1))
    return D


def _split_duration(t, dt):
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t < 0:
        raise ValueError(f"duration must be non-negative, got {t}")
    n = int(round(t / dt))
    if abs(n * dt - t) <= 1e-9 * max(dt, t):
        return n, 0.0
    n = int(np.floor(t / dt))
    return n, t - n * dt


# |u|_2 * dt above this triggers smaller steps. The Euclidean norm cannot
# grow outside the absorbing ball, so the initial value bounds the window.
STIFF_LIMIT = 0.5


def _steps_for(u, t, dt):
    """(n, dt, last) for a window of length ``t``, refining ``dt`` far off the attractor."""
    scale = float(np.linalg.norm(u))
    if np.isfinite(scale) and scale * dt > STIFF_LIMIT and t > 0:
        n = int(np.ceil(t * scale / STIFF_LIMIT))
        return n, t / n, 0.0
    n, last = _split_duration(t, dt)
    return n, dt, last


def rk4_step(u, dt, p):
    """One classical fourth-order Runge-Kutta step."""
    u = check_state(u, p)
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    out, bad = _kernels.rk4_state(u, p.F, float(dt), 1, 0.0)
    if bad >= 0:
        raise BlowUpError("non-finite state in RK4 step", step=0, state=out)
    return out


def flow(u0, t, dt=DEFAULT_DT, p=None):
    """Approximate the solution operator Psi(u0; t) by repeated RK4 steps.

    A final partial step is taken when ``dt`` does not divide ``t``. States
    far outside the attractor (where RK4 at ``dt`` would be unstable) are
    integrated with a proportionally smaller step.
    """
    p = p or ModelParams(len(u0))
    u0 = check_state(u0, p)
    n, dt, last = _steps_for(u0, t, dt)
    out, bad = _kernels.rk4_state(u0, p.F, float(dt), n, last)
    if bad >= 0:
        raise BlowUpError("non-finite state during integration", step=int(bad), state=out)
    return out


def trajectory(u0, t, dt=DEFAULT_DT, p=None, sample_every=1):
    """States at every ``sample_every``-th RK4 step, starting with ``u0``."""
    p = p or ModelParams(len(u0))
    u = check_state(u0, p)
    n, last = _split_duration(t, dt)
    if last:
        raise ValueError("trajectory requires dt to divide t")
    out = [u.copy()]
    for s in range(0, n, sample_every):
        k = min(sample_every, n - s)
        u, bad = _kernels.rk4_state(u, p.F, float(dt), k, 0.0)
        if bad >= 0:
            raise BlowUpError("non-finite state during integration", step=s + int(bad), state=u)
        out.append(u)
    return np.array(out)


def propagate_vectors(m, V, h, dt=DEFAULT_DT, p=None):
    """Advance state ``m`` by ``h`` together with tangent vectors ``V`` (J x n)."""
    p = p or ModelParams(len(m))
    m = check_state(m, p)
    V = np.ascontiguousarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != p.J:
        raise DimensionError(f"tangent block must have {p.J} rows, got {V.shape}")
    n, dt, last = _steps_for(m, h, dt)
    u, W, bad = _kernels.rk4_state_tangent(m, V, p.F, float(dt), n, last)
    if bad >= 0 or not np.all(np.isfinite(W)):
        raise BlowUpError("non-finite tangent integration", step=int(bad), state=u)
    return u, W


def propagate_tangent(m, h, dt=DEFAULT_DT, p=None, t0=0.0):
    """Return (Psi(m; h), L) with L the tangent propagator over (t0, t0+h)."""
    p = p or ModelParams(len(m))
    if h <= 0:
        raise ValueError(f"window length must be positive, got {h}")
    u, L = propagate_vectors(m, np.eye(p.J), h, dt, p)
    return u, TangentPropagator(L, (t0, t0 + h))


def spin_up(p, T=100.0, dt=DEFAULT_DT, seed=0, amplitude=0.01):
    """Truth initial condition: perturbed fixed point integrated for ``T``."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(p.J)
    u0 = p.fixed_point() + amplitude * z / np.linalg.norm(z)
    return flow(u0, T, dt, p)
