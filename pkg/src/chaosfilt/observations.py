"""Linear observation operators and observation noise.

Fixed operators keep two forms: the M x J selection matrix ``H`` used by
the Kalman algebra and the J x J projector ``square`` used by the
synchronization filters and theorem checks.
"""
import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericalError

KINDS = ("identity", "P", "P36", "P24", "adaptive", "custom")

# observed positions (0-based) within one period of each periodic pattern
_PATTERNS = {
    "P": (3, (0, 1)),
    "P36": (5, (0, 1, 3)),
    "P24": (10, (0, 3, 6, 9)),
}

DEGENERACY_RTOL = 1e-9


@dataclass(frozen=True)
class ObservationOperator:
    """Rank-M linear map from R^J to R^M with orthonormal rows.

    Attributes
    ----------
    H : ndarray, shape (M, J)
    kind : str
        One of ``KINDS``.
    square : ndarray, shape (J, J) or None
        Projector form H^T H, kept for the fixed kinds.
    eigenvalues : ndarray or None
        Adaptive only: the full non-decreasing spectrum of L^T L.
    degenerate : bool
        Adaptive only: the rank-M cut falls inside a (near) repeated eigenvalue.
    """

    H: np.ndarray
    kind: str = "custom"
    square: np.ndarray = None
    eigenvalues: np.ndarray = None
    degenerate: bool = False
    observed: tuple = field(default=None)

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        if H.ndim != 2 or H.shape[0] > H.shape[1]:
            raise DimensionError(f"observation matrix must be M x J with M <= J, got {H.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @property
    def M(self):
        return self.H.shape[0]

    @property
    def J(self):
        return self.H.shape[1]

    @property
    def rank(self):
        return self.M

    def projector(self):
        """J x J orthogonal projector onto the observed subspace."""
        if self.square is not None:
            return self.square
        return self.H.T @ self.H

    def complement(self):
        return complement(self)

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.J:
            raise DimensionError(f"state length {v.shape[-1]} != operator width {self.J}")
        return v @ self.H.T

    def basis_hash(self):
        return hashlib.sha256(np.ascontiguousarray(self.H).tobytes()).hexdigest()[:16]

    def to_csv(self, path=None):
        """Dense CSV (17 significant digits) under a one-line JSON header."""
        header = json.dumps({"kind": self.kind, "J": self.J, "M": self.M,
                             "seed-basis-hash": self.basis_hash()}, sort_keys=True)
        buf = io.StringIO()
        buf.write(header + "\n")
        for row in self.H:
            buf.write(",".join(f"{x:.17g}" for x in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source):
        """Inverse of :meth:`to_csv`; ``source`` is a path or the CSV text."""
        if "\n" not in source:
            with open(source, encoding="utf-8") as fh:
                source = fh.read()
        first, _, body = source.partition("\n")
        meta = json.loads(first)
        H = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
        if H.shape != (meta["M"], meta["J"]):
            raise DimensionError(f"header says {meta['M']}x{meta['J']}, body is {H.shape}")
        kind = meta["kind"]
        square = H.T @ H if kind in _PATTERNS or kind == "identity" else None
        return cls(H, kind=kind, square=square)


def _selection(J, observed, kind):
    observed = tuple(int(i) for i in observed)
    H = np.zeros((len(observed), J))
    H[np.arange(len(observed)), observed] = 1.0
    square = np.zeros((J, J))
    square[observed, observed] = 1.0
    square.setflags(write=False)
    return ObservationOperator(H, kind=kind, square=square, observed=observed)


def _periodic(J, kind):
    period, pos = _PATTERNS[kind]
    if J % period:
        raise ValueError(f"{kind} needs J divisible by {period}, got J={J}")
    observed = [b + q for b in range(0, J, period) for q in pos]
    return _selection(J, observed, kind)


def build_identity(J):
    return _selection(J, range(J), "identity")


def build_P(J):
    """Observe two of every three components: columns e1, e2, 0, e4, e5, 0, ..."""
    return _periodic(J, "P")


def build_P36(J):
    """Observe three of every five components: e1, e2, 0, e4, 0, ..."""
    return _periodic(J, "P36")


def build_P24(J):
    """Observe four of every ten components: e1, 0, 0, e4, 0, 0, e7, 0, 0, e10, ..."""
    return _periodic(J, "P24")


def build_fixed(kind, J):
    builders = {"identity": build_identity, "P": build_P, "P36": build_P36, "P24": build_P24}
    try:
        return builders[kind](J)
    except KeyError:
        raise ValueError(f"{kind!r} is not a fixed operator kind") from None


def complement(op):
    """Q = I - P for the square projector form of ``op``."""
    P = op.projector()
    return np.eye(P.shape[0]) - P


def _canonical_signs(vecs):
    # largest-magnitude component positive
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs, idx


def adaptive_H(L, M):
    """Operator projecting onto the M leading eigenvectors of L^T L.

    Rows are ordered by non-decreasing eigenvalue, so the last row is the
    direction of largest growth over the window.
    """
    L = np.asarray(getattr(L, "L", L), dtype=float)
    J = L.shape[0]
    if not 1 <= M <= J:
        raise ValueError(f"rank M must lie in [1, {J}], got {M}")
    if not np.all(np.isfinite(L)):
        raise NumericalError("non-finite tangent propagator")
    with np.errstate(over="ignore", invalid="ignore"):
        S = L.T @ L
    if not np.all(np.isfinite(S)):
        raise NumericalError("L^T L overflowed")
    S = 0.5 * (S + S.T)
    try:
        lam, vecs = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    vecs, idx = _canonical_signs(vecs)
    # exact ties: order by descending index of the dominant component
    order = np.lexsort((-idx, lam))
    lam, vecs = lam[order], vecs[:, order]
    degenerate = False
    if M < J:
        gap = lam[J - M] - lam[J - M - 1]
        degenerate = bool(gap <= DEGENERACY_RTOL * max(abs(lam[-1]), 1e-300))
    lam.setflags(write=False)
    return ObservationOperator(vecs[:, J - M:].T, kind="adaptive",
                               eigenvalues=lam, degenerate=degenerate)


_MASK64 = (1 << 64) - 1


def splitmix64(x):
    """One output of the SplitMix64 generator seeded with ``x``."""
    z = (int(x) + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian observation noise N(0, epsilon^2 I) with reproducible streams.

    Draws are a pure function of (seed, realization, k): each realization
    gets key ``seed ^ splitmix64(realization)`` for a counter-based Philox
    generator whose counter is the step index.
    """

    epsilon: float
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")

    def realization_key(self, realization):
        return (int(self.seed) & _MASK64) ^ splitmix64(realization)

    def generator(self, k, realization=0):
        bitgen = np.random.Philox(key=self.realization_key(realization), counter=[0, 0, 0, int(k)])
        return np.random.Generator(bitgen)

    def draw(self, size, k, realization=0):
        return self.epsilon * self.generator(k, realization).standard_normal(size)


def observe(H, v, noise, k, realization=0):
    """Noisy observation y = H v + nu of state ``v`` at step ``k``."""
    y = H(v)
    if noise is None or noise.epsilon == 0:
        return y
    return y + noise.draw(H.M, k, realization)
