"""Matplotlib figure rendering for the report paths.

Figures accompany the delimited text and CSV outputs; every helper takes the
data it draws plus a destination path and writes a PNG. The Agg backend keeps
rendering headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.figsize": (5.2, 3.4),
    "figure.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _new(**kwargs):
    with plt.rc_context(RC):
        return plt.subplots(**kwargs)


def _save(fig, path) -> str:
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return str(path)


def coverage_figure(rounds, coverage, megabytes, path) -> str:
    """Client coverage and cumulative uplink volume per round."""
    fig, ax = _new()
    ax.plot(rounds, coverage, marker="o", color="tab:blue", label="coverage")
    ax.set_xlabel("round")
    ax.set_ylabel("fraction of clients seen", color="tab:blue")
    ax.set_ylim(0, 1.05)
    twin = ax.twinx()
    twin.plot(rounds, np.cumsum(megabytes), marker="s", color="tab:orange",
              label="uplink")
    twin.set_ylabel("cumulative uplink (MB)", color="tab:orange")
    twin.grid(False)
    ax.set_title("federation progress")
    return _save(fig, path)


def error_curve_figure(checkpoints, errors, path) -> str:
    """Relative estimation error against accumulated trials, log-log."""
    fig, ax = _new()
    errors = np.atleast_2d(errors)
    for c in range(errors.shape[1]):
        ax.loglog(checkpoints, errors[:, c], marker="o", lw=1,
                  label=f"class {c}")
    ax.set_xlabel("trials averaged")
    ax.set_ylabel("relative Frobenius error")
    ax.set_title("mean-estimate convergence")
    if errors.shape[1] <= 6:
        ax.legend(fontsize=7)
    return _save(fig, path)


def mse_figure(m_values, gamma_values, table, path) -> str:
    """One error line per shrinkage setting across means-per-class values."""
    fig, ax = _new()
    for j, g in enumerate(gamma_values):
        ax.plot(m_values, table[:, j], marker="o", label=f"gamma={g:g}")
    ax.set_xlabel("means per class per client")
    ax.set_ylabel("mean squared Frobenius error")
    ax.set_xticks(list(m_values))
    ax.set_title("estimator error grid")
    ax.legend(fontsize=8)
    return _save(fig, path)


def bias_figure(analytic, empirical, path) -> str:
    """Entry-wise agreement of analytic and Monte-Carlo bias matrices."""
    fig, ax = _new(figsize=(3.6, 3.6))
    a = np.asarray(analytic).ravel()
    e = np.asarray(empirical).ravel()
    lim = 1.05 * max(np.abs(a).max(), np.abs(e).max(), 1e-12)
    ax.plot([-lim, lim], [-lim, lim], color="0.6", lw=1)
    ax.plot(a, e, "o", ms=4, alpha=0.8)
    ax.set_xlabel("analytic bias entry")
    ax.set_ylabel("empirical bias entry")
    ax.set_title("bias formula vs Monte-Carlo")
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    return _save(fig, path)


def residual_figure(residuals, path, title="identity residuals") -> str:
    """Histogram of per-instance residuals on a log axis."""
    fig, ax = _new()
    vals = np.asarray(residuals, dtype=np.float64)
    vals = np.maximum(vals, 1e-18)
    ax.hist(np.log10(vals), bins=24, color="tab:blue", alpha=0.8)
    ax.set_xlabel("log10 residual")
    ax.set_ylabel("instances")
    ax.set_title(title)
    return _save(fig, path)
