"""Lyapunov spectrum by repeated QR re-orthonormalization of tangent vectors."""
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .model import DEFAULT_DT, ModelParams, propagate_vectors

POSITIVE_TOL = 0.01


@dataclass(frozen=True)
class LyapunovResult:
    exponents: np.ndarray
    n_positive: int
    t_total: float
    renorm_interval: float
    transient: float
    tol: float = POSITIVE_TOL

    @property
    def sum(self):
        return float(np.sum(self.exponents))

    def summary(self, params=None):
        out = {"n_positive": self.n_positive, "sum": self.sum,
               "max": float(self.exponents[0]),
               "min_abs": float(np.min(np.abs(self.exponents))),
               "t_total": self.t_total, "renorm_interval": self.renorm_interval,
               "transient": self.transient, "tol": self.tol}
        if params is not None:
            out["params"] = params
        return out


def lyapunov_spectrum(p=None, t_total=2000.0, renorm_interval=0.5, transient=100.0,
                      dt=DEFAULT_DT, seed=0, tol=POSITIVE_TOL, n_exponents=None):
    """Estimate the Lyapunov exponents of the Lorenz '96 flow.

    The run lasts ``t_total`` time units. During the first ``transient``
    units the trajectory settles onto the attractor and the tangent basis
    aligns; the exponents are time averages of log|R_ii| over the rest.

    Returns
    -------
    LyapunovResult
        Exponents sorted non-increasing.
    """
    p = p or ModelParams()
    if not t_total > transient >= 0:
        raise ValueError("need t_total > transient >= 0")
    n = n_exponents or p.J
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(p.J)
    u = p.fixed_point() + 0.01 * z / np.linalg.norm(z)
    Qb, _ = np.linalg.qr(rng.standard_normal((p.J, n)))

    n_blocks = int(round(t_total / renorm_interval))
    n_skip = int(round(transient / renorm_interval))
    log_r = np.zeros(n)
    for b in range(n_blocks):
        u, W = propagate_vectors(u, Qb, renorm_interval, dt, p)
        Qb, R = np.linalg.qr(W)
        d = np.diag(R)
        if np.any(d == 0) or not np.all(np.isfinite(d)):
            raise NumericalError(f"degenerate QR at block {b}")
        Qb = Qb * np.sign(d)
        if b >= n_skip:
            log_r += np.log(np.abs(d))
    averaging = (n_blocks - n_skip) * renorm_interval
    exps = np.sort(log_r / averaging)[::-1]
    return LyapunovResult(exps, int(np.sum(exps > tol)), float(t_total),
                          float(renorm_interval), float(transient), tol)
