"""Shared fixtures: a miniature configuration and small on-disk corpora."""

import json
import os
from pathlib import Path
from typing import Iterator, List, Tuple

import numpy as np
import pytest

from dwenet.config import DataConfig, OptimConfig, TrainConfig, TrainingConfig
from dwenet.data import (
    Dataset,
    EmbeddingMatrix,
    Example,
    Vocabulary,
    build_vocab,
    pad_and_filter,
    random_embeddings,
)
from dwenet.model import ModelConfig
from dwenet.tensor import set_debug

SARCASTIC_TEMPLATES = (
    "area man {} finally achieves inner peace",
    "nation somehow still shocked by {}",
    "local {} reportedly thrilled to be ignored again",
    "study finds {} totally worth it",
)
PLAIN_TEMPLATES = (
    "senate votes on {} funding bill",
    "officials report new figures on {}",
    "court hears arguments over {}",
    "markets react to {} announcement",
)
TOPICS = ("taxes", "weather", "traffic", "elections", "schools", "housing", "energy", "trade")


def make_headlines(per_class: int) -> List[Tuple[str, int]]:
    """Two separable template families, alternating labels."""
    rows: List[Tuple[str, int]] = []
    for i in range(per_class):
        topic = TOPICS[i % len(TOPICS)]
        rows.append((SARCASTIC_TEMPLATES[i % len(SARCASTIC_TEMPLATES)].format(topic), 1))
        rows.append((PLAIN_TEMPLATES[i % len(PLAIN_TEMPLATES)].format(topic), 0))
    return rows


def write_headlines(path: Path, rows: List[Tuple[str, int]]) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for i, (text, label) in enumerate(rows):
            record = {"article_link": f"https://example.org/{i}", "headline": text,
                      "is_sarcastic": label}
            fh.write(json.dumps(record) + "\n")
    return path


@pytest.fixture(autouse=True, scope="session")
def debug_mode() -> Iterator[None]:
    """Every op asserts finite outputs while the suite runs."""
    set_debug(True)
    yield
    set_debug(False)


@pytest.fixture
def mini_model_config() -> ModelConfig:
    """Dense, 4 blocks of one layer, k=4: small enough for exhaustive checks."""
    return ModelConfig(
        connectivity="dense",
        block_sizes=(1, 1, 1, 1),
        growth_rate=4,
        init_channels=8,
        embed_dim=6,
        max_len=8,
        head_dims=(8,),
        dropout_rate=0.0,
    )


@pytest.fixture
def headlines_file(tmp_path: Path) -> Path:
    return write_headlines(tmp_path / "headlines.jsonl", make_headlines(24))


@pytest.fixture
def tiny_config(mini_model_config: ModelConfig, headlines_file: Path) -> TrainConfig:
    return TrainConfig(
        model=mini_model_config,
        optimizer=OptimConfig(lr_max=1e-2),
        data=DataConfig(dataset="headlines", path=str(headlines_file)),
        training=TrainingConfig(epochs=2, batch_size=8, seed=0, runs=1),
    )


@pytest.fixture
def tiny_vocab() -> Vocabulary:
    return build_vocab([text for text, _ in make_headlines(24)])


@pytest.fixture
def tiny_embedding(tiny_vocab: Vocabulary) -> EmbeddingMatrix:
    return random_embeddings(tiny_vocab, 6, seed=0)


@pytest.fixture
def tiny_dataset(tiny_vocab: Vocabulary) -> Dataset:
    """The 48 template headlines, padded to the miniature max_len of 8."""
    examples = [
        Example(text, label, f"t:{i}") for i, (text, label) in enumerate(make_headlines(24))
    ]
    return pad_and_filter(examples, tiny_vocab, 8)


@pytest.fixture
def glove_file(tmp_path: Path) -> Path:
    """A 6-d GloVe-style text file covering part of the vocabulary."""
    rng = np.random.default_rng(7)
    lines = []
    for token in ("area", "man", "nation", "senate", "court", "the", "unseen"):
        values = " ".join(f"{v:.5f}" for v in rng.normal(size=6))
        lines.append(f"{token} {values}")
    path = tmp_path / "glove.6d.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def data_dir() -> Path | None:
    """Directory with the real corpora, when the slow suite is requested."""
    value = os.environ.get("DWENET_DATA_DIR")
    return Path(value) if value else None
