"""Figure rendering for benchmark reports.

Renders PNG summaries next to the result CSV: mean communication rounds and
final residuals per configuration, plus per-run decay curves when a
diagnostics dump is available.  Uses the Agg backend so it works headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .bench import read_rows  # noqa: E402


def _group_labels(rows):
    labels, comm, kkt = [], [], []
    for row in rows:
        if row["replicate"] != "mean":
            continue
        tag = row["solver"]
        if row["param1"]:
            tag += f" {row['param1']}"
        if row["param2"]:
            tag += f" [{row['param2']}]"
        labels.append(tag)
        comm.append(float(row["vector_rounds"]))
        kkt.append(float(row["kkt"]))
    return labels, comm, kkt


def render_summary_figures(csv_path, out_dir) -> list[Path]:
    """Bar charts of mean rounds and mean final residuals per configuration."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels, comm, kkt = _group_labels(read_rows(csv_path))
    if not labels:
        return []
    paths = []
    height = max(2.5, 0.32 * len(labels) + 1.2)
    pos = range(len(labels))

    fig, ax = plt.subplots(figsize=(9, height))
    ax.barh(pos, comm, color="#4878d0")
    ax.set_yticks(pos, labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("mean communication rounds")
    ax.set_title(Path(csv_path).stem)
    fig.tight_layout()
    path = out_dir / f"{Path(csv_path).stem}_rounds.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(9, height))
    ax.barh(pos, kkt, color="#d65f5f")
    ax.set_yticks(pos, labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xscale("log")
    ax.set_xlabel("mean final residual")
    ax.set_title(Path(csv_path).stem)
    fig.tight_layout()
    path = out_dir / f"{Path(csv_path).stem}_kkt.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def render_decay_figure(diagnostics_csv, out_path) -> Path:
    """Semilog decay of the outer-loop residual quantities of one run."""
    with open(diagnostics_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    ks = [int(r["k"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    for col, style in (("norm_delta", "o-"), ("norm_p", "s--"),
                       ("norm_u", "^-."), ("kkt", "x:")):
        ax.semilogy(ks, [max(float(r[col]), 1e-300) for r in rows], style,
                    label=col, markersize=4)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("residual")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_report(csv_path, out_dir) -> list[Path]:
    """Everything the report path produces: summary charts plus a decay
    figure for every diagnostics dump sitting next to the CSV."""
    out_dir = Path(out_dir)
    paths = render_summary_figures(csv_path, out_dir)
    diag_dir = Path(csv_path).parent / "diagnostics"
    if diag_dir.is_dir():
        for diag in sorted(diag_dir.glob("*.csv")):
            paths.append(render_decay_figure(diag, out_dir / f"{diag.stem}_decay.png"))
    return paths
