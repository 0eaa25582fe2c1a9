"""Report figures: bar charts rendered to files next to the JSON/CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

METRIC_KEYS = (
    "miou",
    "ap50",
    "grounding_precision",
    "grounding_recall",
    "grounding_f1",
    "bleu4",
    "rouge_l",
    "meteor",
    "vqa_acc",
)


def save_metric_bars(finalized: dict, path, title: str = "evaluation") -> Path:
    """Bar chart of the [0, 1] metric values in a finalized report."""
    names = [k for k in METRIC_KEYS if k in finalized]
    values = [finalized[k] for k in names]
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(names)), 3.5))
    ax.bar(range(len(names)), values, color="#4878cf")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(title)
    for i, value in enumerate(values):
        ax.text(i, value + 0.01, f"{value:.3f}", ha="center", fontsize=7)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_count_bars(counts: dict[str, int], path, title: str) -> Path:
    """Bar chart of category counts (perspectives, modalities, splits)."""
    names = list(counts.keys())
    values = [counts[k] for k in names]
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(names)), 3.5))
    ax.bar(range(len(names)), values, color="#6acc65")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("samples")
    ax.set_title(title)
    for i, value in enumerate(values):
        ax.text(i, value, str(value), ha="center", va="bottom", fontsize=7)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_eval_figures(report: dict, out_dir) -> list[Path]:
    """One overall chart plus one per perspective breakdown, if present."""
    out_dir = Path(out_dir)
    written = [save_metric_bars(report["overall"], out_dir / "metrics_overall.png")]
    for name, sub in sorted(report.get("per_perspective", {}).items()):
        written.append(
            save_metric_bars(
                sub, out_dir / f"metrics_{name.lower()}.png", title=f"evaluation ({name})"
            )
        )
    return written


def render_stats_figures(stats: dict, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    perspectives = stats.get("perspectives", {})
    if perspectives:
        totals = {name: rec.get("total", 0) for name, rec in perspectives.items()}
        written.append(
            save_count_bars(totals, out_dir / "counts_perspective.png", "samples per perspective")
        )
    modalities = stats.get("modalities", {})
    if modalities:
        written.append(
            save_count_bars(modalities, out_dir / "counts_modality.png", "samples per modality")
        )
    splits = stats.get("splits", {})
    if splits:
        written.append(save_count_bars(splits, out_dir / "counts_split.png", "samples per split"))
    return written
