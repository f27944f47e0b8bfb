"""Plain-text tables and matplotlib figures for the reporting commands.

Figures are rendered headlessly to files next to the delimited outputs.
"""
from __future__ import annotations

from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import MetricReport

__all__ = [
    "metrics_table",
    "ablation_table",
    "save_metrics_figure",
    "save_ablation_figure",
    "save_training_curve",
]

_METRIC_COLUMNS = ("teta", "loca", "assoca", "clsa")
_PNG_METADATA = {"Software": None}  # keep PNG bytes reproducible across runs


def metrics_table(reports: Dict[str, MetricReport]) -> str:
    header = f"{'split':<10}" + "".join(f"{c.upper():>9}" for c in _METRIC_COLUMNS)
    lines = [header, "-" * len(header)]
    for split, rep in reports.items():
        vals = rep.as_dict()
        lines.append(f"{split:<10}" + "".join(f"{vals[c]:>9.3f}" for c in _METRIC_COLUMNS))
    return "\n".join(lines) + "\n"


def ablation_table(rows) -> str:
    width = max(24, max((len(r.name) for r in rows), default=0) + 2)
    header = f"{'variant':<{width}}" + "".join(f"{c.upper():>9}" for c in _METRIC_COLUMNS)
    lines = [header, "-" * len(header)]
    for row in rows:
        vals = row.report.as_dict()
        lines.append(f"{row.name:<{width}}"
                     + "".join(f"{vals[c]:>9.3f}" for c in _METRIC_COLUMNS))
    return "\n".join(lines) + "\n"


def save_metrics_figure(reports: Dict[str, MetricReport], path) -> None:
    """Grouped bar chart of the four scores per class split."""
    splits = list(reports)
    x = range(len(_METRIC_COLUMNS))
    bar_w = 0.8 / max(1, len(splits))
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    for si, split in enumerate(splits):
        vals = reports[split].as_dict()
        ax.bar([xi + si * bar_w for xi in x], [vals[c] for c in _METRIC_COLUMNS],
               width=bar_w, label=split)
    ax.set_xticks([xi + bar_w * (len(splits) - 1) / 2 for xi in x])
    ax.set_xticklabels([c.upper() for c in _METRIC_COLUMNS])
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)


def save_ablation_figure(rows, path) -> None:
    """One bar group per variant."""
    x = range(len(rows))
    bar_w = 0.8 / len(_METRIC_COLUMNS)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.6 * len(rows)), 3.5))
    for mi, col in enumerate(_METRIC_COLUMNS):
        ax.bar([xi + mi * bar_w for xi in x],
               [row.report.as_dict()[col] for row in rows],
               width=bar_w, label=col.upper())
    ax.set_xticks([xi + bar_w * (len(_METRIC_COLUMNS) - 1) / 2 for xi in x])
    ax.set_xticklabels([row.name for row in rows], rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)


def save_training_curve(log: Sequence, path) -> None:
    """Loss components over training steps."""
    steps = [r.step for r in log]
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.plot(steps, [r.total for r in log], label="total")
    ax.plot(steps, [r.intra for r in log], label="intra", alpha=0.7)
    ax.plot(steps, [r.inter for r in log], label="inter", alpha=0.7)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)
