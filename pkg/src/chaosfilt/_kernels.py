"""Compiled inner loops for Lorenz '96 integration.

All kernels work on 0-based arrays with periodic wrap. They mutate only
the buffers they allocate and return fresh arrays.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def _rhs(u, F, out):
    J = u.shape[0]
    for j in range(J):
        out[j] = u[j - 1] * (u[(j + 1) % J] - u[j - 2]) - u[j] + F


@numba.njit(cache=True)
def _tangent_rhs(u, V, out):
    J = u.shape[0]
    n = V.shape[1]
    for j in range(J):
        a = -u[j - 1]
        b = u[(j + 1) % J] - u[j - 2]
        c = u[j - 1]
        jm2 = (j - 2) % J
        jm1 = (j - 1) % J
        jp1 = (j + 1) % J
        for i in range(n):
            out[j, i] = a * V[jm2, i] + b * V[jm1, i] - V[j, i] + c * V[jp1, i]


@numba.njit(cache=True)
def rk4_state(u0, F, dt, nsteps, last_dt):
    """Advance a state by ``nsteps`` RK4 steps of size dt, then one of last_dt.

    Returns (u, failed_step); failed_step is -1 unless a non-finite value
    appeared.
    """
    J = u0.shape[0]
    u = u0.copy()
    k1 = np.empty(J)
    k2 = np.empty(J)
    k3 = np.empty(J)
    k4 = np.empty(J)
    tmp = np.empty(J)
    total = nsteps + (1 if last_dt > 0.0 else 0)
    for s in range(total):
        h = dt if s < nsteps else last_dt
        _rhs(u, F, k1)
        for j in range(J):
            tmp[j] = u[j] + 0.5 * h * k1[j]
        _rhs(tmp, F, k2)
        for j in range(J):
            tmp[j] = u[j] + 0.5 * h * k2[j]
        _rhs(tmp, F, k3)
        for j in range(J):
            tmp[j] = u[j] + h * k3[j]
        _rhs(tmp, F, k4)
        bad = False
        for j in range(J):
            u[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            if not np.isfinite(u[j]):
                bad = True
        if bad:
            return u, s
    return u, -1


@numba.njit(cache=True)
def rk4_state_tangent(u0, V0, F, dt, nsteps, last_dt):
    """Jointly advance a state and a block of tangent vectors (J x n).

    The tangent block obeys dV/dt = DF(u(t)) V, integrated as one RK4
    system with the state so both see identical stage points.
    """
    J = u0.shape[0]
    n = V0.shape[1]
    u = u0.copy()
    V = V0.copy()
    k1 = np.empty(J)
    k2 = np.empty(J)
    k3 = np.empty(J)
    k4 = np.empty(J)
    tmp = np.empty(J)
    K1 = np.empty((J, n))
    K2 = np.empty((J, n))
    K3 = np.empty((J, n))
    K4 = np.empty((J, n))
    T = np.empty((J, n))
    total = nsteps + (1 if last_dt > 0.0 else 0)
    for s in range(total):
        h = dt if s < nsteps else last_dt
        _rhs(u, F, k1)
        _tangent_rhs(u, V, K1)
        for j in range(J):
            tmp[j] = u[j] + 0.5 * h * k1[j]
            for i in range(n):
                T[j, i] = V[j, i] + 0.5 * h * K1[j, i]
        _rhs(tmp, F, k2)
        _tangent_rhs(tmp, T, K2)
        for j in range(J):
            tmp[j] = u[j] + 0.5 * h * k2[j]
            for i in range(n):
                T[j, i] = V[j, i] + 0.5 * h * K2[j, i]
        _rhs(tmp, F, k3)
        _tangent_rhs(tmp, T, K3)
        for j in range(J):
            tmp[j] = u[j] + h * k3[j]
            for i in range(n):
                T[j, i] = V[j, i] + h * K3[j, i]
        _rhs(tmp, F, k4)
        _tangent_rhs(tmp, T, K4)
        bad = False
        for j in range(J):
            u[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            if not np.isfinite(u[j]):
                bad = True
            for i in range(n):
                V[j, i] += h / 6.0 * (K1[j, i] + 2.0 * K2[j, i] + 2.0 * K3[j, i] + K4[j, i])
        if bad:
            return u, V, s
    return u, V, -1
