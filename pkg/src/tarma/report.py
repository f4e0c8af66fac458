"""Render report figures from harness outputs.

Every function takes tabular data (the same rows the CSV writers emit)
and writes PNG files next to the delimited output.  Rendering is
deliberately separate from computation: the experiment commands emit
plot-ready data, and the ``report`` CLI subcommand turns those files
into figures.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import InvalidInputError

__all__ = ["plot_mc_report", "plot_bias_curves", "plot_fit_diagnostics"]


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_mc_report(rows: list[dict], out_dir) -> list[Path]:
    """Bias and variance against alpha, one panel pair per (case, n)."""
    out_dir = Path(out_dir)
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["case"], row["n"], row["kind"]), []).append(row)
    if not groups:
        raise InvalidInputError("no rows to plot")
    written = []
    for (case, n, kind), grp in sorted(groups.items(), key=lambda kv: str(kv[0])):
        grp = sorted(grp, key=lambda r: r["alpha"])
        alphas = [r["alpha"] for r in grp]
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
        for ax, key, label in ((axes[0], "sq_bias", "squared bias"),
                               (axes[1], "sq_var", "squared variance norm")):
            ax.plot(alphas, [r[key] for r in grp], "o-")
            ax.set_xlabel("alpha")
            ax.set_ylabel(label)
            ax.set_yscale("log")
        fig.suptitle(f"case {case}, n={n}, contamination={kind}")
        written.append(_save(fig, out_dir / f"mc_case{case}_n{n}_{kind}.png"))
    return written


def plot_bias_curves(rows: list[dict], out_dir) -> list[Path]:
    """Large-sample squared bias against outlier size, one panel per level."""
    out_dir = Path(out_dir)
    rows = [r for r in rows if r.get("B") is not None]
    if not rows:
        raise InvalidInputError("no rows to plot")
    levels = sorted({r["epsilon"] for r in rows})
    kind = rows[0]["kind"]
    ncol = min(2, len(levels))
    nrow = math.ceil(len(levels) / ncol)
    fig, axes = plt.subplots(nrow, ncol, figsize=(4.5 * ncol, 3.2 * nrow),
                             squeeze=False)
    for i, eps_level in enumerate(levels):
        ax = axes[i // ncol][i % ncol]
        sub = [r for r in rows if r["epsilon"] == eps_level]
        for alpha in sorted({r["alpha"] for r in sub}):
            line = sorted((r for r in sub if r["alpha"] == alpha),
                          key=lambda r: r["k"])
            ax.plot([r["k"] for r in line], [r["B"] for r in line],
                    "o-", label=f"alpha={alpha:g}")
        ax.set_xlabel("outlier size k")
        ax.set_ylabel("asymptotic squared bias")
        ax.set_yscale("log")
        ax.set_title(f"epsilon={eps_level:g}")
        ax.legend(fontsize=8)
    for j in range(len(levels), nrow * ncol):
        axes[j // ncol][j % ncol].set_axis_off()
    fig.suptitle(f"{kind} contamination")
    fig.tight_layout()
    return [_save(fig, out_dir / f"bias_curves_{kind}.png")]


def plot_fit_diagnostics(series_values, fit_dict: dict, out_dir,
                         top_m: int | None = None) -> list[Path]:
    """Residual histogram, robust weights, and flagged points in time and
    state space for a fitted model (JSON dict as written by ``fit``)."""
    from .estimation import FitResult, robust_outlier_weights

    out_dir = Path(out_dir)
    fit = FitResult.from_dict(fit_dict)
    x = np.asarray(series_values, dtype=np.float64)
    e = fit.residuals
    t_idx = fit.time_index()
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.4))

    ax = axes[0][0]
    ax.hist(e / fit.sigma_hat, bins=40, density=True, alpha=0.7)
    grid = np.linspace(-4, 4, 200)
    ax.plot(grid, np.exp(-grid * grid / 2) / np.sqrt(2 * np.pi), "r-")
    ax.set_title("standardized residuals")

    flagged = np.asarray([], dtype=int)
    ax = axes[0][1]
    if fit.loss.family == "power_divergence" and fit.loss.alpha > 0:
        m = top_m if top_m is not None else max(1, round(0.05 * e.size))
        w, flagged = robust_outlier_weights(fit, m)
        ax.plot(t_idx, 100.0 * w, ".")
        ax.set_title("robust weights (x100)")
    else:
        ax.set_axis_off()

    ax = axes[1][0]
    ax.plot(np.arange(x.size), x, "-", lw=0.8)
    if flagged.size:
        ax.plot(flagged, x[flagged], "o", mfc="none", color="red")
    ax.set_title("series with flagged outliers")

    ax = axes[1][1]
    d = fit.params.d
    ax.plot(x[:-d], x[d:], ".", ms=3)
    if flagged.size:
        lag_ok = flagged[flagged >= d]
        ax.plot(x[lag_ok - d], x[lag_ok], "o", mfc="none", color="red")
    ax.axvline(fit.params.r, color="gray", lw=0.8)
    ax.set_xlabel(f"x[t-{d}]")
    ax.set_ylabel("x[t]")
    ax.set_title("state space")

    fig.tight_layout()
    return [_save(fig, out_dir / "fit_diagnostics.png")]
