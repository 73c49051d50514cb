"""Figure rendering for the report paths (headless matplotlib)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def plot_training_curves(log, path) -> None:
    """Train/val loss per epoch with the learning rate on a twin axis."""
    epochs = [r["epoch"] for r in log.rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, [r["train_loss"] for r in log.rows], label="train loss")
    ax.plot(epochs, [r["val_loss"] for r in log.rows], label="val loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r["lr"] for r in log.rows], color="gray", ls="--", label="lr")
    ax2.set_ylabel("learning rate")
    ax2.set_yscale("log")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_cs_curve(curve, path, label: str | None = None) -> None:
    """Cumulative score vs error threshold."""
    thetas = [t for t, _ in curve]
    scores = [c for _, c in curve]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot(thetas, scores, marker=".", label=label)
    ax.set_xlabel("error threshold (years)")
    ax.set_ylabel("cumulative score (%)")
    ax.set_ylim(0, 105)
    ax.grid(True, alpha=0.3)
    if label:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
