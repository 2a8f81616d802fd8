"""Twin experiments: one seeded truth, many noise realizations, RMSE statistics."""
import dataclasses
import hashlib
import json
import logging
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericalError
from .filters import (RANK_RTOL, FilterConfig, analyse, forecast, initial_state,
                      numerical_rank)
from .model import ModelParams, TangentPropagator, flow, spin_up
from .observations import NoiseModel, adaptive_H, build_fixed, observe

log = logging.getLogger(__name__)

TRANSIENT_CUTOFF = 40.0

# dotted config key -> ExperimentConfig attribute
CONFIG_KEYS = {
    "model.J": "J",
    "model.F": "F",
    "assimilation.h": "h",
    "assimilation.epsilon": "epsilon",
    "assimilation.eta": "eta",
    "assimilation.sigma": "sigma",
    "assimilation.T_end": "T_end",
    "assimilation.dt": "dt",
    "observation.kind": "obs_kind",
    "observation.M": "M",
    "filter.kind": "filter_kind",
    "filter.aus_rank": "aus_rank",
    "monte_carlo.I": "I",
    "monte_carlo.base_seed": "base_seed",
    "init.spinup_T": "spinup_T",
    "init.mismatch": "mismatch",
    "lyapunov.t_total": "lyap_t_total",
    "lyapunov.renorm_interval": "lyap_renorm_interval",
    "lyapunov.transient": "lyap_transient",
    "output.path": "output",
}
_FIXED_RANK = {"identity": lambda J: J, "P": lambda J: 2 * J // 3,
               "P36": lambda J: 3 * J // 5, "P24": lambda J: 2 * J // 5}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one twin experiment.

    Defaults: J=60, F=8, h=0.1, epsilon^2=0.01, eta=0.01 (sigma=1), T_end=100.
    The files in configs/ use epsilon=0.01 instead; see the README.
    """

    J: int = 60
    F: float = 8.0
    h: float = 0.1
    epsilon: float = 0.1
    eta: Optional[float] = 0.01
    sigma: Optional[float] = None
    T_end: float = 100.0
    dt: float = 1e-3
    obs_kind: str = "identity"
    M: Optional[int] = None
    filter_kind: str = "3dvar"
    aus_rank: Optional[int] = None
    I: int = 100
    base_seed: int = 0
    spinup_T: float = 100.0
    mismatch: float = 1.0
    lyap_t_total: float = 2000.0
    lyap_renorm_interval: float = 0.5
    lyap_transient: float = 100.0
    output: Optional[str] = None

    def __post_init__(self):
        if self.sigma is not None and self.eta is not None:
            if not np.isclose(self.eta, self.epsilon ** 2 / self.sigma ** 2, rtol=1e-12):
                raise ConfigError("give either assimilation.eta or assimilation.sigma, not both")
        if self.obs_kind not in ("identity", "P", "P36", "P24", "adaptive"):
            raise ConfigError(f"unknown observation.kind {self.obs_kind!r}")
        if self.obs_kind == "adaptive":
            if self.M is None or not 1 <= self.M <= self.J:
                raise ConfigError("adaptive observation needs observation.M in [1, J]")
        else:
            try:
                build_fixed(self.obs_kind, self.J)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            expected = _FIXED_RANK[self.obs_kind](self.J)
            if self.M is not None and self.M != expected:
                raise ConfigError(f"{self.obs_kind} has rank {expected} for J={self.J}, not {self.M}")
        if self.I < 1:
            raise ConfigError("monte_carlo.I must be >= 1")
        try:
            self.filter_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def rank(self):
        return self.M if self.obs_kind == "adaptive" else _FIXED_RANK[self.obs_kind](self.J)

    @property
    def model(self):
        return ModelParams(self.J, self.F)

    def filter_config(self):
        eta = self.eta if self.sigma is None else None
        return FilterConfig(h=self.h, epsilon=self.epsilon, sigma=self.sigma, eta=eta,
                            kind=self.filter_kind, aus_rank=self.aus_rank, dt=self.dt,
                            model=self.model)

    def n_steps(self):
        return int(round(self.T_end / self.h))

    def to_dict(self):
        return {key: getattr(self, attr) for key, attr in CONFIG_KEYS.items()}

    def config_hash(self):
        blob = json.dumps({k: v for k, v in self.to_dict().items() if k != "output.path"},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d):
        """Build from a flat mapping of dotted keys; unknown keys are errors."""
        unknown = sorted(set(d) - set(CONFIG_KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {CONFIG_KEYS[k]: v for k, v in d.items()}
        # an explicit sigma replaces the default eta
        if "sigma" in kwargs and "eta" not in kwargs:
            kwargs["eta"] = None
        return cls(**kwargs)


def _parse_scalar(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip("'\"")


def load_config(path):
    """Read a flat JSON config or a ``key = value`` file (one per line, # comments)."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    else:
        data = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            data[key.strip()] = _parse_scalar(value)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


@dataclass
class Truth:
    t: np.ndarray
    v: np.ndarray

    @property
    def v0(self):
        return self.v[0]


def make_truth(cfg):
    """Seeded spin-up followed by the truth sampled at every observation time."""
    p = cfg.model
    v = spin_up(p, T=cfg.spinup_T, dt=cfg.dt, seed=cfg.base_seed)
    states = [v]
    for _ in range(cfg.n_steps()):
        v = flow(v, cfg.h, cfg.dt, p)
        states.append(v)
    return Truth(cfg.h * np.arange(cfg.n_steps() + 1), np.array(states))


def initial_mean(cfg, v0):
    rng = np.random.default_rng([cfg.base_seed, 1])
    return v0 + cfg.mismatch * rng.standard_normal(cfg.J)


@dataclass
class FilterTrace:
    """Per-step diagnostics of one filtered realization."""

    k: np.ndarray
    t: np.ndarray
    error: np.ndarray          # |m_k - v_k|
    observed_error: np.ndarray  # |H_k (m_k - v_k)|, nan where no operator applies
    rank: np.ndarray           # covariance rank, -1 for 3DVAR
    diverged: bool = False
    message: str = ""
    means: Optional[np.ndarray] = None
    step: int = -1             # first step that failed, -1 if none

    def to_csv(self, path, J):
        rows = ["k,t,rmse_contrib,|Pdelta|,|delta|,cov_rank"]
        for i in range(len(self.k)):
            obs = "" if np.isnan(self.observed_error[i]) else f"{self.observed_error[i]:.17g}"
            rank = "" if self.rank[i] < 0 else str(int(self.rank[i]))
            rows.append(f"{self.k[i]},{self.t[i]:.17g},{self.error[i] / np.sqrt(J):.17g},"
                        f"{obs},{self.error[i]:.17g},{rank}")
        _write_text(path, "\n".join(rows) + "\n")


def run_filter(cfg, truth=None, realization=0, keep_means=False):
    """Filter one noise realization against the shared truth."""
    truth = truth if truth is not None else make_truth(cfg)
    fcfg = cfg.filter_config()
    p = cfg.model
    noise = NoiseModel(cfg.epsilon, cfg.base_seed)
    fixed = None if cfg.obs_kind == "adaptive" else build_fixed(cfg.obs_kind, cfg.J)
    n = cfg.n_steps()

    state = initial_state(initial_mean(cfg, truth.v0), fcfg)
    err = np.full(n + 1, np.nan)
    obs_err = np.full(n + 1, np.nan)
    rank = np.full(n + 1, -1, dtype=int)
    means = np.full((n + 1, cfg.J), np.nan) if keep_means else None
    err[0] = np.linalg.norm(state.m - truth.v[0])
    if fixed is not None:
        obs_err[0] = np.linalg.norm(fixed.H @ (state.m - truth.v[0]))
    if state.rank is not None:
        rank[0] = state.rank
    if keep_means:
        means[0] = state.m
    diverged, message, failed = False, "", -1
    for k in range(n):
        try:
            fc = forecast(state, fcfg, tangent=fixed is None)
            if fixed is None:
                # L over the window just forecast, started from the analysis mean m_k
                H = adaptive_H(TangentPropagator(fc.L, (fc.t - cfg.h, fc.t)), cfg.M)
            else:
                H = fixed
            y = observe(H, truth.v[k + 1], noise, k + 1, realization)
            state = analyse(fc, y, H, fcfg)
        except NumericalError as exc:
            diverged, message, failed = True, str(exc), k + 1
            log.warning("realization %d diverged at step %d: %s", realization, k + 1, exc)
            break
        if not np.all(np.isfinite(state.m)):
            diverged, message, failed = True, f"non-finite mean at step {k + 1}", k + 1
            break
        d = state.m - truth.v[k + 1]
        err[k + 1] = np.linalg.norm(d)
        obs_err[k + 1] = np.linalg.norm(H.H @ d)
        if state.rank is not None:
            rank[k + 1] = state.rank
        if keep_means:
            means[k + 1] = state.m
    return FilterTrace(np.arange(n + 1), truth.t, err, obs_err, rank, diverged, message, means,
                       failed)


@dataclass
class RmseSeries:
    t: np.ndarray
    rmse: np.ndarray
    I: int
    config_hash: str
    divergences: int = 0
    cutoff: float = TRANSIENT_CUTOFF

    @property
    def average(self):
        return time_average(self.t, self.rmse, self.cutoff)


@dataclass
class RankSeries:
    t: np.ndarray
    rank: np.ndarray
    threshold: float = RANK_RTOL


def time_average(t, values, cutoff=TRANSIENT_CUTOFF):
    """Mean of ``values`` over t_k > cutoff (t rounded to 1e-9 first)."""
    mask = np.round(t, 9) > cutoff
    if not mask.any():
        return float("nan")
    return float(np.mean(np.asarray(values)[mask]))


def rmse_from_errors(errors, J):
    """RMSE(t_k) = mean over realizations of sqrt(|m_k - v_k|^2 / J).

    ``errors`` is (I, n_steps+1) of |m_k - v_k|. Rows are summed in
    realization order so the result does not depend on how they were computed.
    """
    errors = np.asarray(errors, dtype=float)
    acc = np.zeros(errors.shape[1])
    for row in errors:
        acc += np.sqrt(row ** 2 / J)
    return acc / errors.shape[0]


def rank_series(traces, t=None, threshold=RANK_RTOL):
    """Numerical rank of each covariance matrix in ``traces``."""
    ranks = np.array([numerical_rank(C, threshold) for C in traces])
    t = np.arange(len(ranks), dtype=float) if t is None else np.asarray(t)
    return RankSeries(t, ranks, threshold)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    series: RmseSeries
    rank: Optional[RankSeries]
    errors: np.ndarray = field(repr=False)
    ranks: Optional[np.ndarray] = field(default=None, repr=False)
    diverged: list = field(default_factory=list)
    divergence_steps: list = field(default_factory=list)

    @property
    def average(self):
        return self.series.average

    def summary(self):
        avg = self.average
        out = {"avg_rmse": avg if np.isfinite(avg) else None,
               "all_diverged": len(self.diverged) == self.config.I, "I": self.config.I,
               "divergences": len(self.diverged), "diverged_realizations": self.diverged,
               "divergence_steps": self.divergence_steps,
               "config": self.config.to_dict(), "config_hash": self.config.config_hash(),
               "git-describe": git_describe(), "seed": self.config.base_seed}
        if self.rank is not None:
            out["final_rank"] = int(self.rank.rank[-1])
            if self.ranks is not None:
                out["final_rank_range"] = [int(self.ranks[:, -1].min()), int(self.ranks[:, -1].max())]
        return out


def _worker(args):
    cfg, truth, i = args
    return run_filter(cfg, truth, i)


def n_workers():
    cap = os.environ.get("CHAOSFILT_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"CHAOSFILT_THREADS must be an integer, got {cap!r}") from None
    return n


def run_twin_experiment(cfg, progress=None):
    """Monte Carlo twin experiment over ``cfg.I`` noise realizations.

    Diverging realizations are recorded and excluded from the RMSE.
    """
    truth = make_truth(cfg)
    jobs = [(cfg, truth, i) for i in range(cfg.I)]
    workers = min(n_workers(), cfg.I)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_worker, jobs))
    else:
        traces = []
        for job in jobs:
            traces.append(_worker(job))
            if progress:
                progress(len(traces), cfg.I)
    ok = [tr for tr in traces if not tr.diverged]
    diverged = [i for i, tr in enumerate(traces) if tr.diverged]
    if ok:
        errors = np.array([tr.error for tr in ok])
        rmse = rmse_from_errors(errors, cfg.J)
    else:
        # nothing left to average: the filter lost the signal in every realization
        log.warning("all %d realizations diverged", cfg.I)
        errors = np.empty((0, len(truth.t)))
        rmse = np.full(len(truth.t), np.inf)
    series = RmseSeries(truth.t, rmse, cfg.I, cfg.config_hash(), len(diverged))
    rank = ranks = None
    if ok and cfg.filter_kind in ("exkf", "aus"):
        ranks = np.array([tr.rank for tr in ok])
        rank = RankSeries(truth.t, ranks[0])
    steps = [traces[i].step for i in diverged]
    return ExperimentResult(cfg, series, rank, errors, ranks, diverged, steps)


def git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _write_text(path, text):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_csv(path, header, columns):
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(_fmt(x) for x in row))
    _write_text(path, "\n".join(lines) + "\n")


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def read_csv(path):
    """Load a CSV written by :func:`write_csv` as (header, 2-D float array)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def export_results(result, path, figures=True):
    """Write rmse.csv, summary.json (and rank.csv, figures) into directory ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    s = result.series
    write_csv(out / "rmse.csv", ["t", "rmse"], [s.t, s.rmse])
    if result.rank is not None:
        write_csv(out / "rank.csv", ["t", "rank"], [result.rank.t, result.rank.rank])
    _write_text(out / "summary.json", json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    written = [out / "rmse.csv", out / "summary.json"]
    if result.rank is not None:
        written.append(out / "rank.csv")
    if figures:
        from . import plotting
        written.extend(plotting.experiment_figures(result, out))
    return written
