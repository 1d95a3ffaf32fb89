"""End-to-end tests for the dwenet command line."""

import json
from io import StringIO
from pathlib import Path
from typing import List, Tuple

import pytest
from rich.console import Console

from dwenet.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, build_parser, parse_and_dispatch
from dwenet.config import TrainConfig


def run(argv: List[str]) -> Tuple[int, str]:
    console = Console(file=StringIO(), width=200)
    code = parse_and_dispatch(argv, console)
    output = console.file.getvalue()  # type: ignore[attr-defined]
    return code, output


@pytest.fixture
def config_file(tiny_config: TrainConfig, tmp_path: Path) -> Path:
    path = tmp_path / "tiny.json"
    path.write_text(tiny_config.to_json(), encoding="utf-8")
    return path


@pytest.fixture
def trained_checkpoint(config_file: Path, tmp_path: Path) -> Path:
    checkpoint = tmp_path / "model.ckpt"
    code, _ = run([
        "train", "--config", str(config_file), "--out", str(tmp_path / "train"),
        "--checkpoint", str(checkpoint), "-q",
    ])
    assert code == EXIT_OK
    return checkpoint


class TestParser:
    def test_subcommands(self) -> None:
        args = build_parser().parse_args(["heatmap", "--block", "2", "--normalization", "column"])
        assert args.command == "heatmap"
        assert args.block == 2
        assert args.layer is None
        assert args.normalization == "column"

    def test_repeatable_overrides(self) -> None:
        args = build_parser().parse_args(
            ["train", "--override", "training.epochs=1", "--override", "model.growth_rate=4"]
        )
        assert args.override == ["training.epochs=1", "model.growth_rate=4"]

    def test_unknown_flag_is_a_usage_error(self) -> None:
        assert run(["train", "--no-such-flag"])[0] == EXIT_USAGE

    def test_missing_command(self) -> None:
        assert run([])[0] == EXIT_USAGE


class TestTrain:
    def test_outputs(self, config_file: Path, tmp_path: Path) -> None:
        out = tmp_path / "run"
        checkpoint = tmp_path / "m.ckpt"
        code, output = run([
            "train", "--config", str(config_file), "--out", str(out), "--runs", "2",
            "--checkpoint", str(checkpoint), "--plot", "-q",
        ])
        assert code == EXIT_OK
        for name in (
            "config.echo.json", "metrics.csv", "summary.json", "learning_curves.png",
            "run_comparison.png",
        ):
            assert (out / name).exists(), name
        assert checkpoint.exists()
        assert len((out / "metrics.csv").read_text().splitlines()) == 3
        summary = json.loads((out / "summary.json").read_text())
        assert summary["runs"] == 2
        assert summary["seeds"] == [0, 1]
        assert summary["data"]["train"]["size"] + summary["data"]["test"]["size"] == 48
        assert "Accuracy" in output

    def test_echoed_config_reproduces_metrics(self, config_file: Path, tmp_path: Path) -> None:
        """Re-running from the echoed config rewrites byte-identical metrics."""
        first = tmp_path / "first"
        second = tmp_path / "second"
        assert run(["train", "--config", str(config_file), "--out", str(first), "-q"])[0] == 0
        echoed = first / "config.echo.json"
        assert run(["train", "--config", str(echoed), "--out", str(second), "-q"])[0] == 0
        assert (first / "metrics.csv").read_bytes() == (second / "metrics.csv").read_bytes()
        assert echoed.read_bytes() == (second / "config.echo.json").read_bytes()

    def test_overrides_reach_the_config(self, config_file: Path, tmp_path: Path) -> None:
        out = tmp_path / "o"
        code, _ = run([
            "train", "--config", str(config_file), "--out", str(out), "--seed", "5",
            "--override", "training.epochs=1", "-q",
        ])
        assert code == EXIT_OK
        echoed = json.loads((out / "config.echo.json").read_text())
        assert echoed["training"]["seed"] == 5
        assert echoed["training"]["epochs"] == 1

    def test_missing_data_path(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        empty = tmp_path / "empty.json"
        empty.write_text("{}", encoding="utf-8")
        code, _ = run(["train", "--config", str(empty), "--out", str(tmp_path / "x"), "-q"])
        assert code == EXIT_USAGE
        assert capsys.readouterr().err.startswith("error: ConfigError: ")

    def test_bad_override(self, config_file: Path, tmp_path: Path) -> None:
        code, _ = run([
            "train", "--config", str(config_file), "--override", "model.growth_rate=four", "-q",
        ])
        assert code == EXIT_USAGE


class TestCheckpointCommands:
    def test_eval(self, trained_checkpoint: Path, config_file: Path, tmp_path: Path) -> None:
        out = tmp_path / "eval"
        code, output = run([
            "eval", "--config", str(config_file), "--checkpoint", str(trained_checkpoint),
            "--out", str(out), "-q",
        ])
        assert code == EXIT_OK
        assert len((out / "metrics.csv").read_text().splitlines()) == 2
        assert "accuracy" in output
        assert json.loads((out / "summary.json").read_text())["test_loss"] > 0
        assert "Mean test loss" in output

    def test_predict(self, trained_checkpoint: Path, tmp_path: Path) -> None:
        out = tmp_path / "predict"
        code, output = run([
            "predict", "--checkpoint", str(trained_checkpoint),
            "--text", "Great! I love waking up sick!", "--out", str(out), "-q",
        ])
        assert code == EXIT_OK
        label, p0, p1 = output.split()
        assert label in ("nonsarcastic", "sarcastic")
        assert float(p0) + float(p1) == pytest.approx(1.0, abs=2e-6)
        assert (label == "sarcastic") == (float(p1) > float(p0))
        echoed = json.loads((out / "config.echo.json").read_text())
        assert echoed["model"]["max_len"] == 8
        prediction = json.loads((out / "prediction.json").read_text())
        assert prediction["label"] == label
        assert prediction["probabilities"]["sarcastic"] == pytest.approx(float(p1), abs=1e-6)

    def test_heatmap_from_checkpoint(
        self, trained_checkpoint: Path, config_file: Path, tmp_path: Path
    ) -> None:
        out = tmp_path / "heat"
        code, _ = run([
            "heatmap", "--config", str(config_file), "--checkpoint", str(trained_checkpoint),
            "--out", str(out), "-q",
        ])
        assert code == EXIT_OK
        assert sorted(p.name for p in out.glob("heatmap_*.csv")) == [
            f"heatmap_block{b}_layer1.csv" for b in range(1, 5)
        ]
        assert sorted(p.name for p in out.glob("dependency_grid_*.csv")) == [
            f"dependency_grid_block{b}.csv" for b in range(1, 5)
        ]
        assert len(list(out.glob("*.pgm"))) == 4

    def test_heatmap_single_layer(
        self, trained_checkpoint: Path, config_file: Path, tmp_path: Path
    ) -> None:
        out = tmp_path / "heat1"
        code, _ = run([
            "heatmap", "--config", str(config_file), "--checkpoint", str(trained_checkpoint),
            "--block", "2", "--layer", "1", "--normalization", "column", "--plot",
            "--out", str(out), "-q",
        ])
        assert code == EXIT_OK
        assert (out / "heatmap_block2_layer1.png").exists()
        assert run([
            "heatmap", "--config", str(config_file), "--checkpoint", str(trained_checkpoint),
            "--block", "9", "--out", str(out), "-q",
        ])[0] == EXIT_FAILURE

    def test_diff_against_itself_is_empty(
        self, trained_checkpoint: Path, config_file: Path, tmp_path: Path
    ) -> None:
        out = tmp_path / "diff"
        code, output = run([
            "diff-errors", "--config", str(config_file), "--checkpoint", str(trained_checkpoint),
            "--baseline", str(trained_checkpoint), "--out", str(out), "-q",
        ])
        assert code == EXIT_OK
        assert (out / "case_study.csv").read_text().splitlines() == [
            "text,label,pred_a,pred_b"
        ]
        assert json.loads((out / "summary.json").read_text())["a_right_b_wrong"] == 0
        assert "Case-study headlines" in output

    def test_checkpoint_flag_required(self, config_file: Path, tmp_path: Path) -> None:
        code, _ = run(["eval", "--config", str(config_file), "--out", str(tmp_path), "-q"])
        assert code == EXIT_USAGE

    def test_missing_checkpoint_file(self, tmp_path: Path) -> None:
        code, _ = run(["predict", "--checkpoint", str(tmp_path / "nope.ckpt"), "--text", "x"])
        assert code == EXIT_FAILURE


class TestAblate:
    def test_grid_written(self, config_file: Path, tmp_path: Path) -> None:
        out = tmp_path / "ablate"
        code, output = run([
            "ablate", "--config", str(config_file), "--runs", "1",
            "--override", "training.epochs=1", "--out", str(out), "-q",
        ])
        assert code == EXIT_OK
        lines = (out / "ablation.csv").read_text().splitlines()
        assert len(lines) == 1 + 7
        assert [line.split(",")[0] for line in lines[1:]][-1] == "dwenet"
        assert "Ablation" in output
