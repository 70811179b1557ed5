"""Report generation: per-series plot data, a rendered figure, and a summary
table for regret-versus-compute comparisons."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, DataFormatError
from .sweep import (
    AGGREGATE_COLUMNS,
    RESULT_COLUMNS,
    AggregateRow,
    aggregate,
    read_aggregate_csv,
    read_results_csv,
)

SERIES_COLUMNS = (
    "final_candidates", "mean_relative_compute",
    "mean_relative_regret", "stderr_relative_regret",
)


def load_aggregates(path) -> list[AggregateRow]:
    """Read either a results.csv (aggregated on the fly) or an aggregate.csv."""
    with open(path, "r", newline="") as handle:
        header = next(csv.reader(handle), None)
    if header == list(RESULT_COLUMNS):
        results = read_results_csv(path)
        if not results:
            raise ConfigError(f"{path} contains no result rows")
        return aggregate(results)
    if header == list(AGGREGATE_COLUMNS):
        rows = read_aggregate_csv(path)
        if not rows:
            raise ConfigError(f"{path} contains no aggregate rows")
        return rows
    raise DataFormatError(
        f"{path} is neither a results nor an aggregate CSV (header {header})"
    )


def series_label(ranker: str, n_training: int) -> str:
    return f"{ranker}_c{n_training}" if ranker == "gp" else ranker


def split_series(rows: Sequence[AggregateRow]) -> dict[str, list[AggregateRow]]:
    """One series per (ranker, C), points ordered by relative compute."""
    series: dict[str, list[AggregateRow]] = {}
    for row in rows:
        series.setdefault(series_label(row.ranker, row.training_curves), []).append(row)
    for label in series:
        series[label].sort(key=lambda r: (r.mean_relative_compute, r.final_candidates))
    return series


def write_series_files(rows: Sequence[AggregateRow], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for label, points in split_series(rows).items():
        path = out_dir / f"series_{label}.csv"
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(SERIES_COLUMNS)
            for point in points:
                writer.writerow([
                    point.final_candidates,
                    repr(point.mean_relative_compute),
                    repr(point.mean_relative_regret),
                    repr(point.stderr_relative_regret),
                ])
        written.append(path)
    return written


def render_figure(rows: Sequence[AggregateRow], out_dir) -> Path:
    """Render mean regret against mean relative compute, one line per series."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, points in split_series(rows).items():
        ax.errorbar(
            [p.mean_relative_compute for p in points],
            [p.mean_relative_regret for p in points],
            yerr=[p.stderr_relative_regret for p in points],
            marker="o", markersize=3.5, capsize=2, linewidth=1.2, label=label,
        )
    ax.set_xlabel("relative compute")
    ax.set_ylabel("relative regret")
    ax.set_title("Regret vs compute")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out_dir / "regret_vs_compute.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def summary_table(rows: Sequence[AggregateRow]) -> str:
    header = f"{'ranker':<10}{'F':>6}{'C':>6}{'mean regret':>14}{'stderr':>12}{'mean compute':>14}{'trials':>8}"
    lines = [header, "-" * len(header)]
    for row in sorted(
        rows, key=lambda r: (r.ranker, r.training_curves, r.final_candidates)
    ):
        lines.append(
            f"{row.ranker:<10}{row.final_candidates:>6}{row.training_curves:>6}"
            f"{row.mean_relative_regret:>14.6f}{row.stderr_relative_regret:>12.6f}"
            f"{row.mean_relative_compute:>14.6f}{row.trials:>8}"
        )
    return "\n".join(lines)


def write_report(source_path, out_dir) -> dict:
    """Full report path: series CSVs, rendered figure, and summary table."""
    rows = load_aggregates(source_path)
    out_dir = Path(out_dir)
    series_paths = write_series_files(rows, out_dir)
    figure_path = render_figure(rows, out_dir)
    table = summary_table(rows)
    (out_dir / "summary.txt").write_text(table + "\n")
    return {
        "series": series_paths,
        "figure": figure_path,
        "summary": out_dir / "summary.txt",
        "table": table,
    }
