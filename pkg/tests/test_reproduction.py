"""
Reproduction runs on the real corpora.

Skipped unless DWENET_DATA_DIR holds Sarcasm_Headlines_Dataset.json,
glove.6B.50d.txt and sarc/pol-{train,test}.tsv. Run with `pytest -m slow`.
"""

from pathlib import Path
from typing import Sequence

import numpy as np
import pytest

from dwenet.analysis import ablation_grid, ablation_run, l1_dependency_matrix
from dwenet.config import TrainConfig, load_config
from dwenet.data import class_counts, load_headlines, load_sarc, split_train_test
from dwenet.train import multi_run, prepare_experiment, train_model

from tests.conftest import data_dir

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
DATA = data_dir()

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(DATA is None, reason="DWENET_DATA_DIR is not set"),
]


def _config(name: str, extra: Sequence[str] = ()) -> TrainConfig:
    assert DATA is not None
    overrides = [f"data.embeddings={DATA / 'glove.6B.50d.txt'}"]
    if name == "sarc_pol.json":
        overrides += [
            f"data.train_path={DATA / 'sarc' / 'pol-train.tsv'}",
            f"data.test_path={DATA / 'sarc' / 'pol-test.tsv'}",
        ]
    else:
        overrides.append(f"data.path={DATA / 'Sarcasm_Headlines_Dataset.json'}")
    return load_config(CONFIGS / name, [*overrides, *extra])


def test_headlines_split_counts() -> None:
    assert DATA is not None
    train, test = split_train_test(load_headlines(DATA / "Sarcasm_Headlines_Dataset.json"))
    assert class_counts(train) == (11988, 9379)
    assert class_counts(test) == (2997, 2345)


def test_sarc_pol_counts() -> None:
    assert DATA is not None
    assert class_counts(load_sarc(DATA / "sarc" / "pol-train.tsv", "pol")) == (6834, 6834)
    assert class_counts(load_sarc(DATA / "sarc" / "pol-test.tsv", "pol")) == (1703, 1703)


def test_densenet8_headlines_accuracy() -> None:
    config = _config("densenet8.json")
    result = multi_run(config, prepare_experiment(config), runs=5, verbose=False)
    assert result.summary["accuracy"]["mean"] >= 0.815


def test_sarc_pol_accuracy() -> None:
    config = _config("sarc_pol.json")
    result = multi_run(config, prepare_experiment(config), runs=3, verbose=False)
    assert result.summary["accuracy"]["mean"] >= 0.60


def test_connectivity_ordering() -> None:
    """dense(8) >= residual(8) >= plain(8), each with half a point of slack."""
    base = _config("densenet8.json")
    cells = [c for c in ablation_grid(base) if c.name in ("cnn8", "resnet8", "densenet8")]
    results = {r.cell.name: r.summary["accuracy"]["mean"] for r in ablation_run(cells, runs=5)}
    assert results["densenet8"] >= results["resnet8"] - 0.005
    assert results["resnet8"] >= results["cnn8"] - 0.005


def test_final_block_heatmap() -> None:
    config = _config("heatmap16.json")
    experiment = prepare_experiment(config)
    result = train_model(
        config, experiment.embedding, experiment.train_set, experiment.test_set, verbose=False
    )
    heatmap = l1_dependency_matrix(result.model, 4)
    n = result.model.blocks[3].in_channels
    assert heatmap.groups == (n, 4, 4, 4)
    assert heatmap.values.min() >= 0.0
    assert heatmap.values.max() == pytest.approx(1.0)
    assert heatmap.group_means()[0] > 0.0
    assert np.all(np.isfinite(heatmap.values))

