"""Static figures for statistics reports.

Renders one multipanel figure per metric (appearances per page, page
coverage): seven stacked panels, one per content class, with one line per
confidence threshold across publication years. Written as PNG next to the
CSV/JSON report so a stats run is self-contained.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analytics import StatsReport
from .detect import CLASS_NAMES


def _render(report: StatsReport, values: dict, ylabel: str, path: Path) -> None:
    years = report.years()
    fig, axes = plt.subplots(len(CLASS_NAMES), 1, figsize=(7, 2.2 * len(CLASS_NAMES)),
                             sharex=True, squeeze=False)
    for row, (class_id, name) in enumerate(sorted(CLASS_NAMES.items())):
        ax = axes[row][0]
        for threshold in report.thresholds:
            series = [values.get((year, class_id, threshold), 0.0) for year in years]
            ax.plot(years, series, label=f">= {threshold:g}", linewidth=1.2)
        ax.set_ylabel(ylabel, fontsize=8)
        ax.set_title(name, fontsize=9)
        ax.tick_params(labelsize=8)
    axes[-1][0].set_xlabel("publication year", fontsize=9)
    axes[0][0].legend(fontsize=8, loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_stats_figures(report: StatsReport, out_dir) -> list[Path]:
    """Write avg_per_page.png and coverage.png; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if not report.pages_per_year:
        return written
    for values, ylabel, name in (
        (report.yearly_avg_per_page, "per page", "avg_per_page.png"),
        (report.yearly_coverage, "fraction covered", "coverage.png"),
    ):
        path = out_dir / name
        _render(report, values, ylabel, path)
        written.append(path)
    return written
