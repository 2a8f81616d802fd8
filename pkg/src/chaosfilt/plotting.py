"""Figure output for the CLI report paths.

Everything renders off-screen (Agg) straight to PNG files; each function
returns the list of paths it wrote.
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def _label(cfg):
    if cfg.obs_kind == "adaptive":
        obs = f"adaptive M={cfg.M}"
    else:
        obs = f"{cfg.obs_kind} (M={cfg.rank})"
    return f"{cfg.filter_kind}, {obs}"


def rmse_figure(series, path, label=None, epsilon=None):
    """RMSE(t_k) on a log scale with the averaging cutoff marked."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    rmse = np.asarray(series.rmse, dtype=float)
    if np.all(np.isfinite(rmse)):
        ax.semilogy(series.t, rmse, lw=0.8, label=label)
    else:
        ax.text(0.5, 0.5, "all realizations diverged", transform=ax.transAxes, ha="center")
    ax.axvline(series.cutoff, color="0.6", ls=":", lw=0.8)
    if epsilon is not None:
        ax.axhline(epsilon, color="tab:red", ls="--", lw=0.8, label="noise level")
    ax.set_xlabel("t")
    ax.set_ylabel("RMSE")
    title = f"I={series.I}"
    if np.isfinite(series.average):
        title += f", mean over t>{series.cutoff:g}: {series.average:.3g}"
    ax.set_title(title, fontsize=9)
    if label or epsilon is not None:
        ax.legend(fontsize=8)
    return _save(fig, path)


def rank_figure(rank, path):
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.step(rank.t, rank.rank, where="post", lw=0.9)
    ax.set_xlabel("t")
    ax.set_ylabel("covariance rank")
    ax.set_title(f"eigenvalues below {rank.threshold:g} x largest truncated", fontsize=9)
    return _save(fig, path)


def experiment_figures(result, out):
    out = Path(out)
    cfg = result.config
    paths = [rmse_figure(result.series, out / "rmse.png", _label(cfg), cfg.epsilon)]
    if result.rank is not None:
        paths.append(rank_figure(result.rank, out / "rank.png"))
    return paths


def trace_figure(trace, J, path, label=None):
    """Single-realization error |m_k - v_k| / sqrt(J)."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    e = trace.error / np.sqrt(J)
    ok = np.isfinite(e)
    ax.semilogy(trace.t[ok], e[ok], lw=0.8, label=label)
    if trace.diverged:
        ax.set_title(f"diverged: {trace.message}", fontsize=8)
    ax.set_xlabel("t")
    ax.set_ylabel("|m - v| / sqrt(J)")
    if label:
        ax.legend(fontsize=8)
    return _save(fig, path)


def sweep_figure(rows, path):
    """Averaged RMSE against M, one line per filter kind.

    ``rows`` are dicts with keys ``filter``, ``M`` and ``avg_rmse``
    (None for runs where every realization diverged).
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    for kind in sorted({r["filter"] for r in rows}):
        sub = sorted((r for r in rows if r["filter"] == kind), key=lambda r: r["M"])
        M = [r["M"] for r in sub if r["avg_rmse"] is not None]
        v = [r["avg_rmse"] for r in sub if r["avg_rmse"] is not None]
        line, = ax.semilogy(M, v, "o-", label=kind)
        lost = [r["M"] for r in sub if r["avg_rmse"] is None]
        if lost:
            top = max(v) if v else 1.0
            ax.plot(lost, [top * 3] * len(lost), "x", color=line.get_color(),
                    label=f"{kind}: diverged")
    ax.set_xlabel("M")
    ax.set_ylabel("averaged RMSE")
    ax.legend(fontsize=8)
    return _save(fig, path)


def lyapunov_figure(result, path):
    lam = np.asarray(result.exponents)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    idx = np.arange(1, lam.size + 1)
    pos = lam > result.tol
    ax.plot(idx[pos], lam[pos], "o", ms=3, color="tab:red", label=f"{result.n_positive} positive")
    ax.plot(idx[~pos], lam[~pos], "o", ms=3, color="tab:blue")
    ax.axhline(0.0, color="0.5", lw=0.7)
    ax.set_xlabel("index")
    ax.set_ylabel("exponent")
    ax.set_title(f"sum = {result.sum:.4g}", fontsize=9)
    ax.legend(fontsize=8)
    return _save(fig, path)


def truth_figure(t, v, path):
    """Space-time plot of a trajectory."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    im = ax.pcolormesh(np.arange(v.shape[1]), t, v, shading="nearest", cmap="RdBu_r")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("j")
    ax.set_ylabel("t")
    return _save(fig, path)


def envelope_figure(report, path):
    """Monte Carlo mean-square error against the theoretical envelope."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(report["t"], report["mse"], lw=0.9, label="E|m - v|^2 (Monte Carlo)")
    ax.semilogy(report["t"], report["bound"], "--", lw=0.9, label="bound")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    return _save(fig, path)
