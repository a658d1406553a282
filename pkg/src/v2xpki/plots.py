"""Figure rendering for benchmark reports.

Each report emitted by the CLI also lands as a figure file next to the
delimited output: one horizontal bar chart for message lengths (measured
bars, published reference values as markers) and one bar chart of timing
medians with p10/p90 whiskers.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .bench import BenchReport, LengthRow, TimingRow  # noqa: E402

_STANDARD_COLORS = {"ieee": "#1f6fb4", "etsi": "#c95f02"}


def render_length_figure(rows: list[LengthRow], path: Path | str) -> Path:
    rows = [row for row in rows if not row.extra]
    labels = [row.message for row in rows]
    values = [row.measured_bytes for row in rows]
    colors = [_STANDARD_COLORS[row.standard] for row in rows]

    fig, ax = plt.subplots(figsize=(8, 0.45 * len(rows) + 1.6))
    positions = range(len(rows))
    ax.barh(positions, values, color=colors, label="measured")
    for pos, row in zip(positions, rows):
        if row.reference_bytes is not None:
            ax.plot(row.reference_bytes, pos, "kx", markersize=7)
    ax.set_yticks(list(positions), labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("encoded length (bytes)")
    ax.set_title("Provisioning message lengths")
    handles = [plt.Rectangle((0, 0), 1, 1, color=_STANDARD_COLORS["ieee"]),
               plt.Rectangle((0, 0), 1, 1, color=_STANDARD_COLORS["etsi"]),
               plt.Line2D([], [], color="k", marker="x", linestyle="none")]
    ax.legend(handles, ["IEEE flow", "ETSI flow", "published reference"], fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_timing_figure(rows: list[TimingRow], path: Path | str) -> Path:
    labels = [f"{row.message}\n({row.phase})" for row in rows]
    medians = [row.median_ms for row in rows]
    lower = [max(0.0, row.median_ms - row.p10_ms) for row in rows]
    upper = [max(0.0, row.p90_ms - row.median_ms) for row in rows]
    colors = [_STANDARD_COLORS[row.standard] for row in rows]

    fig, ax = plt.subplots(figsize=(max(8, 1.1 * len(rows)), 4.5))
    positions = range(len(rows))
    ax.bar(positions, medians, yerr=[lower, upper], capsize=3, color=colors)
    ax.set_xticks(list(positions), labels, fontsize=7, rotation=30, ha="right")
    ax.set_ylabel("median time (ms)")
    ax.set_title(f"Client-side computation time (median of {len(rows[0].samples_ns)} runs)")
    handles = [plt.Rectangle((0, 0), 1, 1, color=_STANDARD_COLORS["ieee"]),
               plt.Rectangle((0, 0), 1, 1, color=_STANDARD_COLORS["etsi"])]
    ax.legend(handles, ["IEEE flow", "ETSI flow"], fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_report_figures(report: BenchReport, directory: Path | str,
                          stem: str = "bench") -> list[Path]:
    """Render every figure the report's contents support."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    if report.length_rows:
        written.append(render_length_figure(report.length_rows, directory / f"{stem}_lengths.png"))
    if report.timing_rows:
        written.append(render_timing_figure(report.timing_rows, directory / f"{stem}_timings.png"))
    return written
