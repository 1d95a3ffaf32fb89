"""Tests for metrics, prediction and report writers."""

import json
from pathlib import Path

import numpy as np
import pytest
from rich.console import Console

from dwenet.data import Dataset, EmbeddingMatrix
from dwenet.evaluate import (
    Metrics,
    evaluate,
    mean_loss,
    predict,
    print_metrics,
    print_summary,
    summarize,
    write_metrics_csv,
    write_summary_json,
)
from dwenet.model import Model, ModelConfig


class TestMetrics:
    """Test confusion counts and derived scores."""

    def test_counts_and_scores(self) -> None:
        """Sarcastic (1) is the positive class."""
        m = Metrics.from_predictions([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
        assert (m.tp, m.fp, m.tn, m.fn) == (2, 1, 1, 1)
        assert m.accuracy == pytest.approx(0.6)
        assert m.precision == pytest.approx(2 / 3)
        assert m.recall == pytest.approx(2 / 3)
        assert m.f1 == pytest.approx(2 / 3)

    def test_no_positive_predictions(self) -> None:
        """Precision, recall and F1 are 0 rather than undefined."""
        m = Metrics.from_predictions([0, 0, 0], [1, 0, 1])
        assert m.precision == 0.0
        assert m.recall == 0.0
        assert m.f1 == 0.0
        assert m.accuracy == pytest.approx(1 / 3)

    def test_length_mismatch(self) -> None:
        with pytest.raises(ValueError):
            Metrics.from_predictions([0, 1], [0])

    def test_to_dict(self) -> None:
        m = Metrics(1, 0, 1, 0, loss_curve=(0.7, 0.5))
        d = m.to_dict()
        assert d["accuracy"] == 1.0
        assert d["loss_curve"] == [0.7, 0.5]


class TestSummarize:
    """Test multi-run aggregation."""

    def test_mean_and_sample_std(self) -> None:
        runs = [Metrics(1, 0, 1, 0), Metrics(0, 1, 1, 0)]
        summary = summarize(runs)
        assert summary["accuracy"]["mean"] == pytest.approx(0.75)
        assert summary["accuracy"]["std"] == pytest.approx(np.std([1.0, 0.5], ddof=1))

    def test_single_run_has_zero_std(self) -> None:
        summary = summarize([Metrics(1, 0, 1, 0)])
        assert all(stats["std"] == 0.0 for stats in summary.values())

    def test_no_runs(self) -> None:
        with pytest.raises(ValueError):
            summarize([])


class TestPredict:
    """Test model evaluation."""

    def test_exact_tie_resolves_to_class_zero(
        self, mini_model_config: ModelConfig, tiny_embedding: EmbeddingMatrix,
        tiny_dataset: Dataset,
    ) -> None:
        """Identical logits give probabilities (0.5, 0.5) and prediction 0."""
        model = Model(mini_model_config, tiny_embedding)
        model.head.out.weight.data[:] = 0
        preds, probs = predict(model, tiny_dataset, batch_size=5)
        np.testing.assert_allclose(probs, 0.5)
        assert np.all(preds == 0)

    def test_evaluate_counts_every_item(
        self, mini_model_config: ModelConfig, tiny_embedding: EmbeddingMatrix,
        tiny_dataset: Dataset,
    ) -> None:
        model = Model(mini_model_config, tiny_embedding)
        assert evaluate(model, tiny_dataset).total == len(tiny_dataset) == 48
        with pytest.raises(ValueError):
            evaluate(model, tiny_dataset.subset([]))

    def test_mean_loss_of_uniform_predictions(
        self, mini_model_config: ModelConfig, tiny_embedding: EmbeddingMatrix,
        tiny_dataset: Dataset,
    ) -> None:
        """Probabilities of 0.5 everywhere give a mean loss of log 2."""
        model = Model(mini_model_config, tiny_embedding)
        model.head.out.weight.data[:] = 0
        assert mean_loss(model, tiny_dataset, batch_size=7) == pytest.approx(np.log(2.0))
        with pytest.raises(ValueError):
            mean_loss(model, tiny_dataset.subset([]))


class TestReports:
    """Test the CSV, JSON and console outputs."""

    def test_metrics_csv(self, tmp_path: Path) -> None:
        path = write_metrics_csv([Metrics(1, 0, 1, 0), Metrics(0, 1, 1, 0)], tmp_path / "m.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "run,accuracy,precision,recall,f1"
        assert lines[1] == "0,1.000000,1.000000,1.000000,1.000000"
        assert lines[2].startswith("1,0.500000,0.000000,")

    def test_summary_json_is_sorted(self, tmp_path: Path) -> None:
        path = write_summary_json({"b": 1, "a": {"z": 0, "y": 1}}, tmp_path / "s.json")
        text = path.read_text()
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text)["a"]["y"] == 1

    def test_console_tables(self) -> None:
        console = Console(record=True, width=120)
        print_metrics(Metrics(3, 1, 4, 2), console=console)
        print_summary(summarize([Metrics(1, 0, 1, 0)]), runs=1, console=console)
        text = console.export_text()
        assert "accuracy" in text
        assert "3 / 1 / 4 / 2" in text
        assert "1 run)" in text
