"""Figures for the report command. Rendered off-screen to PNG."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (4.8, 3.2),
    "savefig.dpi": 120,
}

# PNG metadata would otherwise carry the matplotlib version string
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def sweep_figure(report, path) -> None:
    """``2 alpha J_alpha(x)`` against ``alpha`` per starting point, with the stationary cost."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for lab in dict.fromkeys(r.x_label for r in report.rows):
            rows = [r for r in report.rows if r.x_label == lab]
            a = np.array([r.alpha for r in rows])
            v = np.array([r.two_alpha_J for r in rows])
            e = np.array([r.std_err for r in rows])
            ax.errorbar(a, v, yerr=3 * e if e.any() else None, marker="o", ms=3, lw=1, label=f"x = {lab}")
        ax.axhline(report.stationary_cost, color="k", ls="--", lw=0.8, label="stationary cost")
        if report.extrapolated_limit is not None:
            ax.plot([0.0], [report.extrapolated_limit], "k*", ms=7, clip_on=False, label="extrapolated")
        ax.set_xlim(left=0.0)
        ax.set_xlabel(r"$\alpha$")
        ax.set_ylabel(r"$2\alpha J_\alpha(x)$")
        ax.legend()
        _save(fig, path)


def burn_in_figure(burn_in, path) -> None:
    """Coupled gaps against look-back length."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(burn_in.lookbacks, np.maximum(burn_in.gaps, 1e-300), "o-", ms=3, lw=1)
        ax.set_xlabel("look-back N")
        ax.set_ylabel(r"mean $|X^{(2N)}_0 - X^{(N)}_0|^2$")
        _save(fig, path)


def datko_figure(fit, path, reference_rate: float | None = None) -> None:
    """Mean-square decay of the homogeneous loop with the fitted exponential."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keep = fit.moment > 0
        ax.semilogy(fit.times[keep], fit.moment[keep], lw=1, label=r"$E|X_t|^2$")
        if not fit.degenerate:
            ax.semilogy(fit.times, np.exp(fit.intercept + fit.rate * fit.times), "k--", lw=0.8,
                        label=f"fit, rate {fit.rate:.3f}")
        if reference_rate is not None and np.isfinite(reference_rate):
            ax.semilogy(fit.times, fit.moment[0] * np.exp(reference_rate * fit.times), ":", lw=0.8,
                        label=f"moment rate {reference_rate:.3f}")
        ax.set_xlabel("t")
        ax.legend()
        _save(fig, path)
