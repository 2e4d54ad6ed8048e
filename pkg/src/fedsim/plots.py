"""Figure rendering for run reports.

Every function takes recorded data and writes a PNG next to the delimited
output; nothing here feeds back into a run. The Agg backend is forced so
rendering works headless and never pops a window.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import RunLog

_DPI = 120


def _rounds_and(log: RunLog, pick) -> tuple[list[int], list]:
    pairs = [(row.round, pick(row)) for row in log.rows if pick(row) is not None]
    return [r for r, _ in pairs], [v for _, v in pairs]


def save_training_curves(log: RunLog, path, title: str = "Training progress") -> None:
    """Loss and accuracy per round, train curves plus eval points when present."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    rounds = [row.round for row in log.rows]
    ax_loss.plot(rounds, [row.train_loss for row in log.rows], label="train")
    ax_acc.plot(rounds, [row.train_accuracy for row in log.rows], label="train")
    eval_rounds, eval_loss = _rounds_and(log, lambda r: r.eval_loss)
    if eval_rounds:
        _, eval_acc = _rounds_and(log, lambda r: r.eval_accuracy)
        ax_loss.plot(eval_rounds, eval_loss, marker="o", markersize=3, label="eval")
        ax_acc.plot(eval_rounds, eval_acc, marker="o", markersize=3, label="eval")
    for ax, ylabel in ((ax_loss, "loss"), (ax_acc, "accuracy")):
        ax.set_xlabel("round")
        ax.set_ylabel(ylabel)
        ax.legend()
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_bits_curves(log: RunLog, path, title: str = "Communication cost") -> None:
    """Cumulative broadcast and aggregate bits per round."""
    fig, ax = plt.subplots(figsize=(6, 4))
    rounds = [row.round for row in log.rows]
    ax.plot(rounds, [row.cumulative_broadcast_bits for row in log.rows], label="broadcast")
    ax.plot(rounds, [row.cumulative_aggregate_bits for row in log.rows], label="aggregate")
    ax.set_xlabel("round")
    ax.set_ylabel("cumulative bits")
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_comparison_curves(
    log_a: RunLog, log_b: RunLog, label_a: str, label_b: str, path,
    title: str = "Run comparison",
) -> None:
    """Accuracy, loss, and cumulative total bits for two runs side by side."""
    fig, (ax_acc, ax_loss, ax_bits) = plt.subplots(1, 3, figsize=(15, 4))
    for log, label in ((log_a, label_a), (log_b, label_b)):
        rounds = [row.round for row in log.rows]
        eval_rounds, eval_acc = _rounds_and(log, lambda r: r.eval_accuracy)
        if eval_rounds:
            _, eval_loss = _rounds_and(log, lambda r: r.eval_loss)
            ax_acc.plot(eval_rounds, eval_acc, label=label)
            ax_loss.plot(eval_rounds, eval_loss, label=label)
        else:
            ax_acc.plot(rounds, [row.train_accuracy for row in log.rows], label=label)
            ax_loss.plot(rounds, [row.train_loss for row in log.rows], label=label)
        totals = [
            row.cumulative_broadcast_bits + row.cumulative_aggregate_bits for row in log.rows
        ]
        ax_bits.plot(rounds, totals, label=label)
    for ax, ylabel in ((ax_acc, "accuracy"), (ax_loss, "loss"), (ax_bits, "cumulative bits")):
        ax.set_xlabel("round")
        ax.set_ylabel(ylabel)
        ax.legend()
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_label_distribution(
    histogram: np.ndarray, path, title: str = "Per-client label counts", max_clients: int = 20
) -> None:
    """Bar chart of class counts for each client, one panel per client."""
    shown = min(len(histogram), max_clients)
    cols = min(5, shown)
    rows = (shown + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 2.2 * rows), squeeze=False)
    classes = np.arange(histogram.shape[1])
    for i in range(rows * cols):
        ax = axes[i // cols][i % cols]
        if i >= shown:
            ax.axis("off")
            continue
        ax.bar(classes, histogram[i])
        ax.set_title(f"client {i}", fontsize=9)
        ax.set_xticks(classes[:: max(1, len(classes) // 5)])
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
