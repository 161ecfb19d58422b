"""Render assessment reports to figure files.

Everything here is optional sugar over the plot-ready data the engine emits:
the CLI writes these PNGs next to report.json / pvalues.csv when asked.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .engine import AssessmentReport, SweepResult, pvalue_cdf


def plot_pvalue_cdf(report: AssessmentReport, path, grid: np.ndarray | None = None) -> Path:
    """Empirical CDF of replicate p-values against the uniform diagonal."""
    if grid is None:
        grid = np.linspace(0.0, 1.0, 501)
    table = pvalue_cdf(report, grid)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(table[:, 0], table[:, 1], lw=1.5, label="p-value CDF")
    ax.plot([0, 1], [0, 1], ls="--", lw=1.0, color="gray", label="uniform")
    ax.set_xlabel("significance level")
    ax.set_ylabel("rejection rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    ax.set_title(f"KS to uniform: {report.ks_uniform:.3f}")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_rejection_rates(report: AssessmentReport, path) -> Path:
    """Rejection rate per nominal level with Monte Carlo error bars."""
    alphas = [r.alpha for r in report.rejection_rates]
    rates = [r.rate for r in report.rejection_rates]
    errs = [2 * r.mc_se for r in report.rejection_rates]
    fig, ax = plt.subplots(figsize=(5, 4))
    x = np.arange(len(alphas))
    ax.bar(x, rates, yerr=errs, capsize=4, width=0.6, color="#4477aa")
    ax.scatter(x, alphas, marker="_", s=400, color="black", label="nominal", zorder=3)
    ax.set_xticks(x)
    ax.set_xticklabels([f"{a:g}" for a in alphas])
    ax.set_xlabel("nominal level")
    ax.set_ylabel("rejection rate")
    ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_sweep(sweep: SweepResult, path, alpha: float = 0.05) -> Path:
    """Rejection rate at one level across the variance-ratio grid."""
    ratios = [e.ratio for e in sweep.entries]
    rates = [e.report.rejection_rate(alpha) for e in sweep.entries]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(ratios, rates, marker="o")
    ax.axhline(alpha, ls="--", lw=1.0, color="gray")
    ax.set_xscale("log")
    ax.set_xlabel("group variance ratio")
    ax.set_ylabel(f"rejection rate at {alpha:g}")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_report_figures(report: AssessmentReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        plot_pvalue_cdf(report, out_dir / "pvalue_cdf.png"),
        plot_rejection_rates(report, out_dir / "rejection_rates.png"),
    ]
