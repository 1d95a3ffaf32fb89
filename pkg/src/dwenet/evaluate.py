"""Classification metrics and evaluation of a trained model."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from rich.console import Console
from rich.table import Table

from dwenet.data import SARCASTIC, Dataset, batches
from dwenet.model import Model, predict_proba
from dwenet.tensor import Array

logger = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class Metrics:
    """
    Binary confusion counts with the sarcastic class as positive.

    Attributes:
        tp, fp, tn, fn: Confusion counts
        loss_curve: Mean training loss per epoch, when produced by training
    """

    tp: int
    fp: int
    tn: int
    fn: int
    loss_curve: Tuple[float, ...] = ()

    @classmethod
    def from_predictions(cls, predictions: npt.ArrayLike, labels: npt.ArrayLike) -> "Metrics":
        pred = np.asarray(predictions, dtype=np.int64)
        gold = np.asarray(labels, dtype=np.int64)
        if pred.shape != gold.shape:
            raise ValueError(f"{pred.shape[0]} predictions for {gold.shape[0]} labels")
        pos_pred = pred == SARCASTIC
        pos_gold = gold == SARCASTIC
        return cls(
            tp=int(np.sum(pos_pred & pos_gold)),
            fp=int(np.sum(pos_pred & ~pos_gold)),
            tn=int(np.sum(~pos_pred & ~pos_gold)),
            fn=int(np.sum(~pos_pred & pos_gold)),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def scores(self) -> Dict[str, float]:
        return {name: float(getattr(self, name)) for name in METRIC_NAMES}

    def to_dict(self) -> Dict[str, Any]:
        return {
            **self.scores(),
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "loss_curve": list(self.loss_curve),
        }


def predict(
    model: Model, dataset: Dataset, batch_size: int = 256
) -> Tuple[npt.NDArray[np.int64], Array]:
    """
    Eval-mode predictions over a dataset, in dataset order.

    Returns:
        Tuple of (class ids `[n]`, probabilities `[n, 2]`). An exact tie
        between the two probabilities resolves to class 0.
    """
    chunks = [predict_proba(model, batch.token_ids) for batch in batches(dataset, batch_size)]
    probs = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 2))
    preds = np.argmax(probs, axis=1).astype(np.int64)
    return preds, probs


def evaluate(model: Model, dataset: Dataset, batch_size: int = 256) -> Metrics:
    """Eval-mode metrics on a labeled dataset."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds, _ = predict(model, dataset, batch_size)
    metrics = Metrics.from_predictions(preds, dataset.labels)
    logger.debug("Evaluated %d examples: accuracy %.4f", metrics.total, metrics.accuracy)
    return metrics


def mean_loss(model: Model, dataset: Dataset, batch_size: int = 256) -> float:
    """Eval-mode mean cross-entropy on a labeled dataset."""
    if len(dataset) == 0:
        raise ValueError("cannot compute a loss on an empty dataset")
    _, probs = predict(model, dataset, batch_size)
    picked = probs[np.arange(len(dataset)), dataset.labels]
    return float(-np.mean(np.log(np.clip(picked, 1e-12, None))))


def summarize(runs: Sequence[Metrics]) -> Dict[str, Dict[str, float]]:
    """
    Mean and sample standard deviation of each score across runs.

    A single run has standard deviation 0.
    """
    if not runs:
        raise ValueError("no runs to summarize")
    out: Dict[str, Dict[str, float]] = {}
    for name in METRIC_NAMES:
        values = np.array([getattr(m, name) for m in runs], dtype=np.float64)
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        out[name] = {"mean": float(values.mean()), "std": std}
    return out


def print_metrics(
    metrics: Metrics, title: str = "Evaluation", console: Optional[Console] = None
) -> None:
    """Render a single result as a rich table."""
    console = console or Console()
    table = Table(title=title)
    table.add_column("Metric")
    table.add_column("Value", justify="right")
    for name, value in metrics.scores().items():
        table.add_row(name, f"{value:.4f}")
    table.add_row("tp / fp / tn / fn", f"{metrics.tp} / {metrics.fp} / {metrics.tn} / {metrics.fn}")
    console.print(table)


def print_summary(
    summary: Mapping[str, Mapping[str, float]],
    runs: int,
    title: str = "Multi-run summary",
    console: Optional[Console] = None,
) -> None:
    console = console or Console()
    table = Table(title=f"{title} ({runs} run{'s' if runs != 1 else ''})")
    table.add_column("Metric")
    table.add_column("Mean", justify="right")
    table.add_column("Std", justify="right")
    for name, stats in summary.items():
        table.add_row(name, f"{stats['mean']:.4f}", f"{stats['std']:.4f}")
    console.print(table)


def write_metrics_csv(runs: Sequence[Metrics], path: str | Path) -> Path:
    """One row per run: `run,accuracy,precision,recall,f1`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["run," + ",".join(METRIC_NAMES)]
    for i, m in enumerate(runs):
        lines.append(f"{i}," + ",".join(f"{v:.6f}" for v in m.scores().values()))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_summary_json(summary: Mapping[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
