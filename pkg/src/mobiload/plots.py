"""Render report figures to files next to the CSV outputs.

All rendering uses the Agg backend and fixed PNG metadata so repeated runs
write identical files for identical inputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvaluationReport
from .scenario import Projection
from .util import from_hour_epoch

PNG_METADATA = {"Software": "mobiload"}

_VARIANT_COLORS = {
    "NN_Orig": "#7f7f7f",
    "Retrain": "#1f77b4",
    "Mobi": "#ff7f0e",
    "Mobi_MTL": "#2ca02c",
}


def _color(variant: str) -> str:
    return _VARIANT_COLORS.get(variant, "#9467bd")


def save_figure(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def plot_mape_bars(report: EvaluationReport):
    """Grouped bar chart of test MAPE per region and variant."""
    regions = report.regions()
    variants = report.variants()
    table = report.mape_table()
    x = np.arange(len(regions))
    width = 0.8 / max(len(variants), 1)
    fig, ax = plt.subplots(figsize=(max(6, 1.6 * len(regions)), 4))
    for i, variant in enumerate(variants):
        values = [table[(r, variant)] for r in regions]
        ax.bar(x + (i - (len(variants) - 1) / 2) * width, values, width,
               label=variant, color=_color(variant))
    ax.set_xticks(x)
    ax.set_xticklabels(regions)
    ax.set_ylabel("test MAPE (%)")
    ax.set_title("Day-ahead test MAPE by region")
    ax.legend()
    fig.tight_layout()
    return fig


def plot_error_histograms(report: EvaluationReport):
    """Signed percentage error distribution per variant, pooled over regions."""
    variants = report.variants()
    fig, axes = plt.subplots(1, len(variants), figsize=(3.2 * len(variants), 3.2),
                             sharex=True, sharey=True)
    if len(variants) == 1:
        axes = [axes]
    for ax, variant in zip(axes, variants):
        errors = np.concatenate([p.signed_errors() for p in report.predictions
                                 if p.variant == variant])
        ax.hist(errors, bins=40, color=_color(variant))
        ax.axvline(0.0, color="black", linewidth=0.8)
        ax.set_title(variant)
        ax.set_xlabel("signed error (%)")
    axes[0].set_ylabel("count")
    fig.suptitle("Forecast error distribution")
    fig.tight_layout()
    return fig


def plot_forecast_curves(report: EvaluationReport, region: str):
    """Actual vs predicted MW over the test window for one region."""
    fig, ax = plt.subplots(figsize=(9, 3.6))
    drew_actual = False
    for p in report.predictions:
        if p.region != region:
            continue
        order = np.argsort(p.target_hours)
        times = [from_hour_epoch(h) for h in p.target_hours[order]]
        if not drew_actual:
            ax.plot(times, p.actual_mw[order], color="black", linewidth=1.4,
                    label="actual")
            drew_actual = True
        ax.plot(times, p.pred_mw[order], color=_color(p.variant), linewidth=0.9,
                label=p.variant)
    ax.set_ylabel("load (MW)")
    ax.set_title(f"Test-window forecasts, {region}")
    ax.legend(loc="upper right", fontsize=8)
    fig.autofmt_xdate()
    fig.tight_layout()
    return fig


def plot_projection(projection: Projection, title: str = "Scenario projection"):
    """Point trajectory with shaded confidence band."""
    times = [from_hour_epoch(h) for h in projection.target_hours]
    fig, ax = plt.subplots(figsize=(9, 3.6))
    ax.fill_between(times, projection.lo_mw, projection.hi_mw, alpha=0.3,
                    color="#1f77b4", label=f"{projection.scenario.confidence:.0%} band")
    ax.plot(times, projection.point_mw, color="#1f77b4", linewidth=1.2, label="point")
    ax.set_ylabel("load (MW)")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.autofmt_xdate()
    fig.tight_layout()
    return fig


def render_evaluation_figures(report: EvaluationReport, directory) -> list:
    directory = Path(directory)
    paths = [
        save_figure(plot_mape_bars(report), directory / "mape_by_region.png"),
        save_figure(plot_error_histograms(report), directory / "error_distribution.png"),
    ]
    for region in report.regions():
        paths.append(save_figure(plot_forecast_curves(report, region),
                                 directory / f"forecast_{region}.png"))
    return paths
