"""Plots for training histories and dependency heatmaps."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from rich.console import Console  # noqa: E402
from rich.table import Table  # noqa: E402

from dwenet.analysis import HeatmapMatrix  # noqa: E402

logger = logging.getLogger(__name__)


def plot_learning_curves(
    history: Dict[str, List[float]],
    title: str = "dweNet training",
    save_path: str | Path | None = None,
) -> None:
    """
    Plot loss, accuracy and the one-cycle schedule.

    Args:
        history: Output of `TrainingHistory.to_dict()`
        title: Figure title
        save_path: Where to write the PNG (if None, the figure is only built)
    """
    fig, axes = plt.subplots(2, 2, figsize=(14, 10))
    fig.suptitle(title, fontsize=16, fontweight="bold")
    epochs = np.arange(1, len(history["epoch_loss"]) + 1)
    steps = np.arange(len(history["lrs"]))

    ax = axes[0, 0]
    ax.plot(epochs, history["epoch_loss"], linewidth=2, marker="o")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Mean log-loss")
    ax.set_title("Training loss")
    ax.grid(True, alpha=0.3)

    ax = axes[0, 1]
    ax.plot(epochs, history["epoch_accuracy"], color="green", linewidth=2, marker="o")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Accuracy")
    ax.set_title("Training accuracy")
    ax.grid(True, alpha=0.3)
    ax.set_ylim([-0.05, 1.05])

    ax = axes[1, 0]
    ax.plot(steps, history["lrs"], color="orange", linewidth=2)
    ax.set_xlabel("Step")
    ax.set_ylabel("Learning rate")
    ax.set_title("One-cycle learning rate")
    ax.grid(True, alpha=0.3)

    ax = axes[1, 1]
    ax.plot(steps, history["momentums"], color="purple", linewidth=2)
    ax.set_xlabel("Step")
    ax.set_ylabel("beta1")
    ax.set_title("One-cycle momentum")
    ax.grid(True, alpha=0.3)

    plt.tight_layout()
    _finish(fig, save_path)


def plot_comparison(
    histories: Sequence[Dict[str, List[float]]],
    labels: Sequence[str],
    title: str = "Run comparison",
    save_path: str | Path | None = None,
) -> None:
    """Overlay the loss and accuracy curves of several runs."""
    fig, axes = plt.subplots(1, 2, figsize=(14, 5))
    fig.suptitle(title, fontsize=16, fontweight="bold")
    colors = plt.cm.tab10(np.linspace(0, 1, max(len(histories), 1)))

    for history, label, color in zip(histories, labels, colors):
        epochs = np.arange(1, len(history["epoch_loss"]) + 1)
        axes[0].plot(epochs, history["epoch_loss"], label=label, linewidth=2, color=color)
        axes[1].plot(epochs, history["epoch_accuracy"], label=label, linewidth=2, color=color)
    for ax, ylabel in zip(axes, ("Mean log-loss", "Accuracy")):
        ax.set_xlabel("Epoch")
        ax.set_ylabel(ylabel)
        ax.legend()
        ax.grid(True, alpha=0.3)

    plt.tight_layout()
    _finish(fig, save_path)


def plot_heatmap(
    heatmap: HeatmapMatrix,
    title: Optional[str] = None,
    save_path: str | Path | None = None,
) -> None:
    """
    Render a dependency matrix with the block-input boundary drawn as a
    vertical black bar, source groups along x and output channels along y.
    """
    fig, ax = plt.subplots(figsize=(max(6.0, 0.15 * heatmap.values.shape[0]), 4))
    image = ax.imshow(heatmap.values.T, aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.axvline(heatmap.boundary - 0.5, color="black", linewidth=3)
    centers = [(s.start + s.stop - 1) / 2 for s in heatmap.group_slices()]
    ax.set_xticks(centers)
    ax.set_xticklabels(heatmap.labels, rotation=45, ha="right")
    ax.set_yticks(range(heatmap.values.shape[1]))
    ax.set_yticklabels([f"C{j + 1}" for j in range(heatmap.values.shape[1])])
    ax.set_xlabel("Source")
    ax.set_ylabel("Target channel")
    ax.set_title(title or f"Block {heatmap.block}, layer {heatmap.target_layer}")
    fig.colorbar(image, ax=ax, label="normalized |w|")
    plt.tight_layout()
    _finish(fig, save_path)


def _finish(fig: plt.Figure, save_path: str | Path | None) -> None:
    if save_path:
        Path(save_path).parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(save_path, dpi=150, bbox_inches="tight")
        logger.info("Saved plot to %s", save_path)
    plt.close(fig)


def print_training_summary(
    history: Dict[str, List[float]], console: Optional[Console] = None
) -> None:
    """Final and best epoch statistics as a rich table."""
    console = console or Console()
    if not history["epoch_loss"]:
        console.print("No training epochs recorded.")
        return
    best = int(np.argmin(history["epoch_loss"]))
    table = Table(title="Training summary")
    table.add_column("")
    table.add_column("Epoch", justify="right")
    table.add_column("Loss", justify="right")
    table.add_column("Accuracy", justify="right")
    last = len(history["epoch_loss"]) - 1
    for label, idx in (("final", last), ("lowest loss", best)):
        table.add_row(
            label, str(idx + 1),
            f"{history['epoch_loss'][idx]:.4f}", f"{history['epoch_accuracy'][idx]:.1%}",
        )
    console.print(table)
