"""Filters for the Lorenz '96 model.

Discrete filters (3DVAR, ExKF, ExKF-AUS) are split into a forecast and an
analysis so callers can build a state-dependent observation operator from
the forecast before the data are generated. The ``*_step`` functions
compose the two for a fixed operator.

Also here: discrete and continuous synchronization filters and the
Euler-Maruyama integration of continuous-time 3DVAR.
"""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import BlowUpError, DivergenceError, DimensionError
from .model import DEFAULT_DT, ModelParams, bilinear_B, flow, propagate_vectors
from .observations import build_P

FILTER_KINDS = ("3dvar", "exkf", "aus")
PSD_TOL = 1e-10
RANK_RTOL = 1e-6
AUS_MAX_COND = 1e12


@dataclass(frozen=True)
class FilterConfig:
    """Assimilation settings.

    Either ``sigma`` or ``eta`` may be given; the other follows from
    eta = epsilon^2 / sigma^2.
    """

    h: float = 0.1
    epsilon: float = 0.1
    sigma: Optional[float] = None
    eta: Optional[float] = None
    kind: str = "3dvar"
    aus_rank: Optional[int] = None
    dt: float = DEFAULT_DT
    model: ModelParams = field(default_factory=ModelParams)

    def __post_init__(self):
        if self.h <= 0 or self.dt <= 0:
            raise ValueError("h and dt must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        sigma, eta = self.sigma, self.eta
        if sigma is None and eta is None:
            sigma = 1.0
        if sigma is None:
            if eta <= 0:
                raise ValueError("eta must be positive")
            sigma = self.epsilon / np.sqrt(eta)
        elif eta is None:
            if sigma <= 0:
                raise ValueError("sigma must be positive")
            eta = self.epsilon ** 2 / sigma ** 2
        elif not np.isclose(eta, self.epsilon ** 2 / sigma ** 2, rtol=1e-12, atol=0):
            raise ValueError(f"eta={eta} inconsistent with epsilon={self.epsilon}, sigma={sigma}")
        object.__setattr__(self, "sigma", float(sigma))
        object.__setattr__(self, "eta", float(eta))
        if self.kind == "aus":
            r = self.aus_rank
            if r is None or not 1 <= r <= self.model.J:
                raise ValueError(f"aus_rank must lie in [1, {self.model.J}], got {r}")


@dataclass(frozen=True)
class FilterState:
    """Analysis mean ``m`` at step ``k`` plus the covariance information.

    ``C`` is the full covariance (ExKF); ``S`` is a J x r square-root
    factor with C = S S^T (AUS). 3DVAR carries neither.
    """

    m: np.ndarray
    C: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None
    k: int = 0
    t: float = 0.0
    rank: Optional[int] = None

    def covariance(self):
        if self.C is not None:
            return self.C
        if self.S is not None:
            return self.S @ self.S.T
        return None


@dataclass(frozen=True)
class Forecast:
    mean: np.ndarray
    C: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None
    k: int = 0
    t: float = 0.0
    L: Optional[np.ndarray] = None  # tangent propagator over the window, when computed


def initial_state(m0, cfg):
    """Filter state at k=0 with the default prior spread sigma."""
    m0 = np.array(m0, dtype=float)
    J = cfg.model.J
    if cfg.kind == "exkf":
        return FilterState(m0, C=cfg.sigma ** 2 * np.eye(J), rank=J)
    if cfg.kind == "aus":
        r = cfg.aus_rank
        S, _ = np.linalg.qr(np.eye(J)[:, :r])
        return FilterState(m0, S=cfg.sigma * S, rank=r)
    return FilterState(m0)


def gain_3dvar(H, cfg):
    """G = C0 H^T (H C0 H^T + Gamma)^{-1} with C0 = sigma^2 I, Gamma = epsilon^2 I."""
    Hm = H.H
    A = cfg.sigma ** 2 * Hm @ Hm.T + cfg.epsilon ** 2 * np.eye(Hm.shape[0])
    return cfg.sigma ** 2 * np.linalg.solve(A, Hm).T


def forecast(state, cfg, tangent=False):
    """Propagate the mean (and covariance information) over one window.

    With ``tangent=True`` the tangent propagator from ``state.m`` is
    returned in ``Forecast.L`` for every filter kind; ExKF always has it.
    """
    p = cfg.model
    k1 = state.k + 1
    t1 = k1 * cfg.h
    try:
        if cfg.kind == "exkf" or (tangent and cfg.kind == "3dvar"):
            mean, L = propagate_vectors(state.m, np.eye(p.J), cfg.h, cfg.dt, p)
            if cfg.kind == "3dvar":
                return Forecast(mean, k=k1, t=t1, L=L)
            with np.errstate(over="ignore", invalid="ignore"):
                C_hat = L @ state.C @ L.T
            if not np.all(np.isfinite(C_hat)):
                raise DivergenceError("forecast covariance overflowed", step=k1)
            return Forecast(mean, C=0.5 * (C_hat + C_hat.T), k=k1, t=t1, L=L)
        if cfg.kind == "3dvar":
            return Forecast(flow(state.m, cfg.h, cfg.dt, p), k=k1, t=t1)
        if tangent:
            basis = np.hstack([state.S, np.eye(p.J)])
            mean, W = propagate_vectors(state.m, basis, cfg.h, cfg.dt, p)
            r = state.S.shape[1]
            return Forecast(mean, S=W[:, :r], k=k1, t=t1, L=W[:, r:])
        mean, S_hat = propagate_vectors(state.m, state.S, cfg.h, cfg.dt, p)
        return Forecast(mean, S=S_hat, k=k1, t=t1)
    except BlowUpError as exc:
        raise BlowUpError("forecast blew up", step=k1, state=exc.state) from exc


def numerical_rank(C, rtol=RANK_RTOL):
    """Number of eigenvalues of symmetric ``C`` above rtol * largest eigenvalue."""
    w = np.linalg.eigvalsh(0.5 * (C + C.T))
    top = w[-1] if w.size else 0.0
    if top <= 0:
        return 0
    return int(np.sum(w > rtol * top))


def _check_obs(y, H):
    y = np.asarray(y, dtype=float)
    if y.shape != (H.M,):
        raise DimensionError(f"observation has shape {y.shape}, operator rank is {H.M}")
    return y


def analyse(fc, y, H, cfg):
    """Combine a forecast with data ``y = H v + noise``.

    Raises DivergenceError when the covariance algebra breaks down (singular
    innovation matrix, loss of positive semidefiniteness, collapsed factor).
    """
    y = _check_obs(y, H)
    try:
        return _analyse(fc, y, H, cfg)
    except np.linalg.LinAlgError as exc:
        raise DivergenceError(f"analysis linear algebra failed: {exc}", step=fc.k) from exc


def _analyse(fc, y, H, cfg):
    Hm = H.H
    M = Hm.shape[0]
    Gamma = cfg.epsilon ** 2 * np.eye(M)
    innovation = y - Hm @ fc.mean

    if cfg.kind == "3dvar":
        G = gain_3dvar(H, cfg)
        return FilterState(fc.mean + G @ innovation, k=fc.k, t=fc.t)

    if cfg.kind == "exkf":
        C_hat = fc.C
        CHt = C_hat @ Hm.T
        Sinn = Hm @ CHt + Gamma
        G = np.linalg.solve(Sinn, CHt.T).T
        # Joseph form: equals (I - GH) C_hat for this G but keeps rounding PSD
        IGH = np.eye(C_hat.shape[0]) - G @ Hm
        C = IGH @ C_hat @ IGH.T + cfg.epsilon ** 2 * (G @ G.T)
        C = 0.5 * (C + C.T)
        w, V = np.linalg.eigh(C)
        scale = max(abs(w[0]), abs(w[-1]))
        if w[0] < -PSD_TOL * scale:
            raise DivergenceError(f"covariance lost positive semidefiniteness (min eig {w[0]:.3e})",
                                  step=fc.k)
        if w[0] < 0:
            w = np.clip(w, 0.0, None)
            C = (V * w) @ V.T
            C = 0.5 * (C + C.T)
        rank = int(np.sum(w > RANK_RTOL * w[-1])) if w[-1] > 0 else 0
        return FilterState(fc.mean + G @ innovation, C=C, k=fc.k, t=fc.t, rank=rank)

    # reduced-rank square-root analysis in span(S_hat)
    S_hat = fc.S
    sv = np.linalg.svd(S_hat, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > AUS_MAX_COND:
        raise DivergenceError("forecast factor lost rank", step=fc.k)
    Y = Hm @ S_hat
    if cfg.epsilon > 0:
        A = np.eye(S_hat.shape[1]) + Y.T @ Y / cfg.epsilon ** 2
        a, W = np.linalg.eigh(A)
        Ainv_Yt = (W / a) @ W.T @ Y.T
        mean = fc.mean + S_hat @ (Ainv_Yt @ innovation) / cfg.epsilon ** 2
        S_post = S_hat @ ((W / np.sqrt(a)) @ W.T)
    else:
        G = S_hat @ np.linalg.pinv(Y)
        mean = fc.mean + G @ innovation
        S_post = S_hat - G @ Y
    U, s, _ = np.linalg.svd(S_post, full_matrices=False)
    S_new = U * s
    rank = int(np.sum(s ** 2 > RANK_RTOL * s[0] ** 2)) if s[0] > 0 else 0
    return FilterState(mean, S=S_new, k=fc.k, t=fc.t, rank=rank)


def _require_kind(cfg, kind):
    if cfg.kind != kind:
        cfg = replace(cfg, kind=kind)
    return cfg


def threedvar_step(state, y, H, cfg):
    cfg = _require_kind(cfg, "3dvar")
    return analyse(forecast(state, cfg), y, H, cfg)


def exkf_step(state, y, H, cfg):
    if state.C is None:
        raise ValueError("ExKF step needs a covariance in the filter state")
    cfg = _require_kind(cfg, "exkf")
    return analyse(forecast(state, cfg), y, H, cfg)


def aus_step(state, y, H, cfg):
    if state.S is None:
        raise ValueError("AUS step needs a square-root factor in the filter state")
    if cfg.kind != "aus" or cfg.aus_rank != state.S.shape[1]:
        cfg = replace(cfg, kind="aus", aus_rank=state.S.shape[1])
    return analyse(forecast(state, cfg), y, H, cfg)


def threedvar_objective(m, forecast_mean, y, H, cfg):
    """Value and gradient of the 3DVAR cost at ``m``."""
    dm = m - forecast_mean
    r = y - H.H @ m
    val = 0.5 * dm @ dm / cfg.sigma ** 2 + 0.5 * r @ r / cfg.epsilon ** 2
    grad = dm / cfg.sigma ** 2 - H.H.T @ r / cfg.epsilon ** 2
    return val, grad


def sync_discrete_run(v0, m0, h, T, p, P=None, dt=DEFAULT_DT):
    """Discrete synchronization filter: reset the observed part to truth at each t_k.

    Returns the error |m_k - v_k| for k = 0 .. round(T/h).
    """
    P = (P or build_P(p.J)).projector()
    Q = np.eye(p.J) - P
    v = np.array(v0, dtype=float)
    m = np.array(m0, dtype=float)
    n = int(round(T / h))
    errors = [np.linalg.norm(m - v)]
    for k in range(n):
        try:
            v = flow(v, h, dt, p)
            m = flow(m, h, dt, p)
        except BlowUpError as exc:
            raise BlowUpError("synchronization filter blew up", step=k + 1) from exc
        m = P @ v + Q @ m
        errors.append(np.linalg.norm(m - v))
    return np.array(errors)


def _sync_rhs(v, q, Pm, Qm, F):
    f_v = -v - bilinear_B(v, v) + F
    w = Pm @ v + q
    f_q = -q - Qm @ bilinear_B(w, w) + Qm @ np.full_like(q, F)
    return f_v, f_q


def sync_continuous_run(v0, q0, T, dt=DEFAULT_DT, p=None, P=None):
    """Continuous synchronization filter m = P v + q, integrated jointly with the truth.

    ``q0`` is projected onto the unobserved subspace. Returns (t, |m(t) - v(t)|)
    at every RK4 step.
    """
    p = p or ModelParams(len(v0))
    P = (P or build_P(p.J)).projector()
    Q = np.eye(p.J) - P
    v = np.array(v0, dtype=float)
    q = Q @ np.asarray(q0, dtype=float)
    n = int(round(T / dt))
    err = np.empty(n + 1)
    err[0] = np.linalg.norm(P @ v + q - v)
    for s in range(n):
        a1, b1 = _sync_rhs(v, q, P, Q, p.F)
        a2, b2 = _sync_rhs(v + 0.5 * dt * a1, q + 0.5 * dt * b1, P, Q, p.F)
        a3, b3 = _sync_rhs(v + 0.5 * dt * a2, q + 0.5 * dt * b2, P, Q, p.F)
        a4, b4 = _sync_rhs(v + dt * a3, q + dt * b3, P, Q, p.F)
        v = v + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        q = q + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(q))):
            raise BlowUpError("synchronization filter blew up", step=s + 1)
        err[s + 1] = np.linalg.norm(P @ v + q - v)
    return dt * np.arange(n + 1), err


def _vf_batch(U, F):
    return np.roll(U, 1, axis=-1) * (np.roll(U, -1, axis=-1) - np.roll(U, 2, axis=-1)) - U + F


def continuous_3dvar_run(v0, m0, eta, epsilon, T, dt=None, seed=0, p=None, P=None,
                         n_realizations=200, sample_every=None):
    """Monte Carlo mean-square error of continuous-time 3DVAR.

    Truth and filter are co-integrated by Euler-Maruyama:
    dm = [F(m) + P(v - m)/eta] dt + (epsilon/eta) P dW.

    Returns (t, E|m(t) - v(t)|^2) sampled every ``sample_every`` steps
    (default: 0.01 time units).
    """
    p = p or ModelParams(len(v0))
    if eta <= 0 or epsilon < 0:
        raise ValueError("eta must be positive and epsilon non-negative")
    if dt is None:
        dt = min(1e-3, eta / 10.0)
    if not dt < eta:
        raise ValueError(f"Euler-Maruyama step dt={dt} must be smaller than eta={eta}")
    Pm = (P or build_P(p.J)).projector()
    rng = np.random.default_rng(seed)
    n = int(round(T / dt))
    if sample_every is None:
        sample_every = max(1, int(round(0.01 / dt)))
    v = np.array(v0, dtype=float)
    m = np.tile(np.asarray(m0, dtype=float), (n_realizations, 1))
    times = [0.0]
    mse = [float(np.mean(np.sum((m - v) ** 2, axis=1)))]
    noise_scale = epsilon / eta * np.sqrt(dt)
    for s in range(n):
        dW = rng.standard_normal(m.shape)
        drift = _vf_batch(m, p.F) + (v - m) @ Pm / eta
        m = m + dt * drift + noise_scale * dW @ Pm
        v = v + dt * _vf_batch(v, p.F)
        if (s + 1) % sample_every == 0:
            if not np.all(np.isfinite(m)):
                raise BlowUpError("continuous 3DVAR blew up", step=s + 1)
            times.append((s + 1) * dt)
            mse.append(float(np.mean(np.sum((m - v) ** 2, axis=1))))
    return np.array(times), np.array(mse)
