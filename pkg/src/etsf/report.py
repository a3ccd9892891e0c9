"""Benchmark report rendering: a delimited per-cell file, a Markdown summary
table with win tallies, and win-count figures saved alongside."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import EvalReport


def _ordered_by_size(report: EvalReport) -> list:
    # Summary rows follow ascending series count, smallest (hardest) first.
    return sorted(report.dataset_ids, key=lambda d: (report.dataset_info[d]["series_count"], d))


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    """One row per (dataset, method); floats rendered with their shortest
    exact form so identical runs produce identical bytes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "method", "mase", "excluded", "seed", "manifest_hash"])
        for dataset_id in report.dataset_ids:
            for method in report.methods:
                cell = report.cell(dataset_id, method)
                mase = "" if cell.mase is None else repr(cell.mase)
                writer.writerow([dataset_id, method, mase, cell.excluded, report.seed, report.manifest_hash])


def write_summary_md(report: EvalReport, path: str | Path) -> None:
    """Markdown table of scaled errors (winner per row bolded) with win
    tallies in the footer."""
    rows = _ordered_by_size(report)
    lines = ["# Benchmark summary", ""]
    lines.append(f"- seed: {report.seed}")
    lines.append(f"- manifest hash: `{report.manifest_hash}`")
    lines.append(f"- training batches audited: {report.leakage_batches}, leakage violations: {report.leakage_violations}")
    if report.tie_datasets:
        lines.append(f"- tie-broken rows (first declared method wins): {', '.join(report.tie_datasets)}")
    lines.append("")
    header = ["Dataset", "M", "delta", "h"] + list(report.methods)
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join(["---"] * len(header)) + "|")
    for dataset_id in rows:
        info = report.dataset_info[dataset_id]
        cells = [info["name"], str(info["series_count"]), str(info["delta"]), str(info["horizon"])]
        for method in report.methods:
            cell = report.cell(dataset_id, method)
            if cell.mase is None:
                cells.append("error")
            else:
                text = f"{cell.mase:.3f}"
                if report.winners[dataset_id] == method:
                    text = f"**{text}**"
                cells.append(text)
        lines.append("| " + " | ".join(cells) + " |")
    total = sum(report.wins.values())
    win_row = ["Wins", "", "", ""] + [str(report.wins[m]) for m in report.methods]
    pct_row = ["% Wins", "", "", ""] + [
        f"{100.0 * report.wins[m] / total:.1f}" if total else "0.0" for m in report.methods
    ]
    lines.append("| " + " | ".join(win_row) + " |")
    lines.append("| " + " | ".join(pct_row) + " |")
    lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def render_win_figures(report: EvalReport, out_dir: str | Path) -> list:
    """Render the win-count figures into ``out_dir``: cumulative wins across
    datasets (ordered by series count) and the total tally per method."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _ordered_by_size(report)
    paths = []

    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(1, len(rows) + 1)
    for method in report.methods:
        cumulative = np.cumsum([1 if report.winners[d] == method else 0 for d in rows])
        ax.step(x, cumulative, where="post", label=method)
    ax.set_xlabel("datasets (ascending series count)")
    ax.set_ylabel("wins")
    ax.set_title("Cumulative wins across datasets")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "wins_cumulative.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    counts = [report.wins[m] for m in report.methods]
    ax.bar(report.methods, counts, color="#9fc5e8", edgecolor="black")
    for idx, count in enumerate(counts):
        ax.text(idx, count, str(count), ha="center", va="bottom")
    ax.set_ylabel("wins")
    ax.set_title("Total wins per method")
    fig.tight_layout()
    path = out_dir / "wins_total.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def write_report(report: EvalReport, out_dir: str | Path, manifest_json: str | None = None) -> dict:
    """Write the full report bundle; returns the paths that were written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    md_path = out_dir / "summary.md"
    write_report_csv(report, csv_path)
    write_summary_md(report, md_path)
    figures = render_win_figures(report, out_dir / "figures")
    written = {"csv": csv_path, "summary": md_path, "figures": figures}
    if manifest_json is not None:
        manifest_path = out_dir / "manifest.json"
        manifest_path.write_text(manifest_json, encoding="utf-8")
        written["manifest"] = manifest_path
    return written
