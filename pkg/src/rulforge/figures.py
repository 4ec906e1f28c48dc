"""SVG figure rendering for curves, training logs, and comparisons.

Uses the Agg backend with a fixed svg.hashsalt and no embedded date, so
the same inputs render byte-identical files on every run.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluate import CurveRecord  # noqa: E402

plt.rcParams["svg.hashsalt"] = "rulforge"

PREDICTED_COLOR = "red"
ACTUAL_COLOR = "blue"


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_curves(records: list[CurveRecord], path: str | Path, ncols: int = 2) -> None:
    """One panel per engine: predicted RUL in red, actual in blue."""
    n = len(records)
    ncols = min(ncols, n) if n else 1
    nrows = (n + ncols - 1) // ncols if n else 1
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(5.5 * ncols, 3.5 * nrows), squeeze=False
    )
    for i, rec in enumerate(records):
        ax = axes[i // ncols][i % ncols]
        (actual,) = ax.plot(rec.cycles, rec.actual, color=ACTUAL_COLOR, label="actual")
        actual.set_gid(f"series-actual-{rec.unit_id}")
        (pred,) = ax.plot(rec.cycles, rec.predicted, color=PREDICTED_COLOR, label="predicted")
        pred.set_gid(f"series-predicted-{rec.unit_id}")
        ax.set_title(f"unit {rec.unit_id}")
        ax.set_xlabel("Cycle")
        ax.set_ylabel("RUL (cycles)")
        if i == 0:
            ax.legend()
    for j in range(n, nrows * ncols):
        axes[j // ncols][j % ncols].set_visible(False)
    fig.tight_layout()
    _save(fig, path)


def plot_loss_curves(
    train_losses: list[float], val_losses: list[float], path: str | Path
) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    epochs = range(1, len(train_losses) + 1)
    ax.plot(epochs, train_losses, color="tab:gray", label="train")
    ax.plot(epochs, val_losses, color="tab:orange", label="validation")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("MSE loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_ablation(rows: list[dict], path: str | Path) -> None:
    """Side-by-side RMSE and score bars for a set of pipeline variants."""
    labels = [str(r["label"]) for r in rows]
    rmses = [float(r["rmse"]) for r in rows]
    scores = [float(r["score"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    x = range(len(rows))
    ax1.bar(x, rmses, color="tab:blue")
    ax1.set_xticks(list(x))
    ax1.set_xticklabels(labels, rotation=20, ha="right")
    ax1.set_ylabel("RMSE (cycles)")
    ax2.bar(x, scores, color="tab:red")
    ax2.set_xticks(list(x))
    ax2.set_xticklabels(labels, rotation=20, ha="right")
    ax2.set_ylabel("Score")
    fig.tight_layout()
    _save(fig, path)
