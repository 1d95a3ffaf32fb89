"""Tokenization, vocabulary, embeddings, dataset loading and batching."""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from dwenet.errors import DataFormatError

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1
OOV_STD = 0.1
DEFAULT_SPLIT_SEED = 42

NONSARCASTIC = 0
SARCASTIC = 1

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

SarcVariant = Literal["main", "pol"]


def tokenize(text: str) -> List[str]:
    """Lowercase, split off every punctuation mark, split on whitespace."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Example:
    """A labeled utterance before tokenization."""

    text: str
    label: int
    source: str


@dataclass
class Vocabulary:
    """
    Token <-> id map. Id 0 is PAD and id 1 is UNK in every vocabulary.
    """

    tokens: List[str] = field(default_factory=lambda: [PAD, UNK])

    def __post_init__(self) -> None:
        if self.tokens[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with the PAD and UNK tokens")
        self._index: Dict[str, int] = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self._index.get(tok, UNK_ID) for tok in tokens]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids if i != PAD_ID]


def build_vocab(train_texts: Sequence[str], min_freq: int = 1) -> Vocabulary:
    """
    Build a vocabulary from training texts only.

    Ids are assigned by descending frequency, ties broken lexicographically.
    """
    counts: Counter[str] = Counter()
    for text in train_texts:
        counts.update(tokenize(text))
    ordered = sorted(
        (tok for tok, n in counts.items() if n >= min_freq and tok not in (PAD, UNK)),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary([PAD, UNK, *ordered])


@dataclass
class EmbeddingMatrix:
    """Vector table `[|V|, d]`; row 0 (PAD) is all zeros."""

    vectors: npt.NDArray[np.float32]
    trainable: bool = True

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-d, got shape {self.vectors.shape}")
        if np.any(self.vectors[PAD_ID] != 0):
            raise ValueError("PAD embedding row must be zero")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def vocab_size(self) -> int:
        return int(self.vectors.shape[0])


def random_embeddings(
    vocab: Vocabulary, d: int, seed: int = 0, trainable: bool = True
) -> EmbeddingMatrix:
    """N(0, 0.1^2) rows with a zero PAD row."""
    rng = np.random.default_rng(seed)
    vectors = rng.normal(0.0, OOV_STD, size=(len(vocab), d)).astype(np.float32)
    vectors[PAD_ID] = 0.0
    return EmbeddingMatrix(vectors, trainable=trainable)


def load_embeddings(
    path: str | Path,
    vocab: Vocabulary,
    d: int,
    seed: int = 0,
    trainable: bool = True,
) -> EmbeddingMatrix:
    """
    Load a whitespace-separated text vector file (GloVe or FastText `.vec`).

    In-vocabulary tokens take their file vectors; tokens absent from the file
    keep a random N(0, 0.1^2) row drawn under `seed`. A FastText `count dim`
    header line is detected and skipped.

    Raises:
        DataFormatError: Malformed line, invalid UTF-8 or dimension mismatch
            (with line number)
    """
    path = Path(path)
    matrix = random_embeddings(vocab, d, seed=seed, trainable=trainable).vectors
    found = 0
    seen: set[int] = set()
    with path.open("rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise DataFormatError(
                    f"invalid UTF-8 at byte {exc.start}", str(path), lineno
                ) from exc
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                if int(parts[1]) != d:
                    raise DataFormatError(
                        f"header declares dimension {parts[1]}, expected {d}", str(path), lineno
                    )
                continue
            if len(parts) != d + 1:
                raise DataFormatError(
                    f"expected a token and {d} values, got {len(parts) - 1} values",
                    str(path), lineno,
                )
            token = parts[0]
            if token not in vocab:
                continue
            idx = vocab.id_of(token)
            if idx in seen or idx == PAD_ID:
                continue
            try:
                matrix[idx] = np.asarray(parts[1:], dtype=np.float32)
            except ValueError as exc:
                raise DataFormatError(f"non-numeric value: {exc}", str(path), lineno) from exc
            seen.add(idx)
            found += 1
    matrix[PAD_ID] = 0.0
    logger.info(
        "Loaded %d/%d vocabulary vectors from %s (%d random)",
        found, len(vocab) - 2, path.name, len(vocab) - 2 - found,
    )
    return EmbeddingMatrix(matrix, trainable=trainable)


def load_headlines(path: str | Path) -> List[Example]:
    """
    Load the news-headlines corpus: one JSON record per line with fields
    `headline` and `is_sarcastic`. Other fields are ignored.
    """
    path = Path(path)
    examples: List[Example] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"invalid JSON: {exc.msg}", str(path), lineno) from exc
            if not isinstance(record, dict) or not {"headline", "is_sarcastic"} <= record.keys():
                raise DataFormatError(
                    "record needs 'headline' and 'is_sarcastic'", str(path), lineno
                )
            label = record["is_sarcastic"]
            if label not in (0, 1):
                raise DataFormatError(
                    f"is_sarcastic must be 0 or 1, got {label!r}", str(path), lineno
                )
            examples.append(Example(str(record["headline"]), int(label), f"headlines:{lineno}"))
    logger.info("Loaded %d headlines from %s", len(examples), path)
    return examples


def load_sarc(path: str | Path, variant: SarcVariant = "main") -> List[Example]:
    """
    Load a normalized SARC split: `label<TAB>comment` per line.

    Only the original comment is read; context is never part of this format.
    """
    if variant not in ("main", "pol"):
        raise ValueError(f"unknown SARC variant: {variant}")
    path = Path(path)
    examples: List[Example] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if "\t" not in line:
                raise DataFormatError("missing tab between label and text", str(path), lineno)
            label_str, text = line.split("\t", 1)
            if label_str not in ("0", "1"):
                raise DataFormatError(f"label must be 0 or 1, got {label_str!r}", str(path), lineno)
            examples.append(Example(text, int(label_str), f"sarc-{variant}:{lineno}"))
    logger.info("Loaded %d SARC-%s comments from %s", len(examples), variant, path)
    return examples


def class_counts(examples: Sequence[Example]) -> Tuple[int, int]:
    """(non-sarcastic, sarcastic) counts."""
    positives = sum(1 for ex in examples if ex.label == SARCASTIC)
    return len(examples) - positives, positives


def split_train_test(
    examples: Sequence[Example],
    test_frac: float = 0.2,
    seed: int = DEFAULT_SPLIT_SEED,
) -> Tuple[List[Example], List[Example]]:
    """
    Stratified split: each class contributes round(test_frac * |class|) items
    to the test split. Both splits keep the input order.
    """
    if not 0.0 <= test_frac < 1.0:
        raise ValueError(f"test_frac must lie in [0, 1), got {test_frac}")
    rng = np.random.default_rng(seed)
    by_class: Dict[int, List[int]] = {}
    for i, ex in enumerate(examples):
        by_class.setdefault(ex.label, []).append(i)
    test_idx: set[int] = set()
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < 2:
            raise ValueError(f"class {label} has {len(members)} member(s); need at least 2")
        n_test = int(np.floor(test_frac * len(members) + 0.5))
        chosen = rng.permutation(len(members))[:n_test]
        test_idx.update(members[j] for j in chosen)
    train = [ex for i, ex in enumerate(examples) if i not in test_idx]
    test = [ex for i, ex in enumerate(examples) if i in test_idx]
    return train, test


@dataclass(frozen=True)
class Dataset:
    """
    Labeled token-id sequences, all right-padded to `max_len`.

    Sequences longer than `max_len` were removed, not truncated; `removed`
    counts them.
    """

    token_ids: npt.NDArray[np.int64]
    labels: npt.NDArray[np.int64]
    texts: Tuple[str, ...]
    sources: Tuple[str, ...]
    max_len: int
    removed: int = 0

    def __post_init__(self) -> None:
        if self.token_ids.ndim != 2 or self.token_ids.shape[1] != self.max_len:
            raise ValueError(f"token ids must be [n, {self.max_len}], got {self.token_ids.shape}")
        if len(self.labels) != len(self.token_ids):
            raise ValueError("labels and sequences differ in length")
        if self.labels.size and not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be binary")
        self.token_ids.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def class_counts(self) -> Tuple[int, int]:
        positives = int(self.labels.sum())
        return len(self) - positives, positives

    def subset(self, indices: Sequence[int] | npt.NDArray[np.int64]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.token_ids[idx].copy(),
            self.labels[idx].copy(),
            tuple(self.texts[i] for i in idx),
            tuple(self.sources[i] for i in idx),
            self.max_len,
        )


def pad_and_filter(examples: Sequence[Example], vocab: Vocabulary, max_len: int) -> Dataset:
    """
    Tokenize, encode, right-pad with PAD and drop sequences over `max_len`.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be positive, got {max_len}")
    rows: List[List[int]] = []
    labels: List[int] = []
    texts: List[str] = []
    sources: List[str] = []
    removed = 0
    for ex in examples:
        ids = vocab.encode(tokenize(ex.text))
        if len(ids) > max_len:
            removed += 1
            continue
        rows.append(ids + [PAD_ID] * (max_len - len(ids)))
        labels.append(ex.label)
        texts.append(ex.text)
        sources.append(ex.source)
    if removed:
        logger.info("Removed %d of %d texts longer than %d tokens", removed, len(examples), max_len)
    token_ids = np.array(rows, dtype=np.int64).reshape(len(rows), max_len)
    return Dataset(
        token_ids, np.array(labels, dtype=np.int64), tuple(texts), tuple(sources), max_len, removed
    )


@dataclass(frozen=True)
class Batch:
    """A mini-batch: ids `[b, max_len]`, labels `[b]`, and dataset row indices."""

    token_ids: npt.NDArray[np.int64]
    labels: npt.NDArray[np.int64]
    indices: npt.NDArray[np.int64]

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def num_batches(n: int, batch_size: int, min_batch: int = 1) -> int:
    """Number of batches `batches` yields for `n` rows."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    count = math.ceil(n / batch_size)
    tail = n - (count - 1) * batch_size
    if count > 1 and tail < min_batch:
        count -= 1
    return count


def batches(
    dataset: Dataset,
    batch_size: int = 64,
    shuffle: bool = False,
    seed: Optional[int | Sequence[int]] = None,
    min_batch: int = 1,
) -> Iterator[Batch]:
    """
    Yield mini-batches; the last one may be smaller.

    A trailing batch with fewer than `min_batch` rows is folded into the
    batch before it, so no step sees fewer rows than that (unless the whole
    dataset is smaller).
    """
    n = len(dataset)
    count = num_batches(n, batch_size, min_batch)
    order = np.arange(n)
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
    for k in range(count):
        stop = n if k == count - 1 else (k + 1) * batch_size
        idx = order[k * batch_size:stop]
        yield Batch(dataset.token_ids[idx], dataset.labels[idx], idx)


CASE_STUDY_HEADLINES: Tuple[Tuple[str, int], ...] = (
    ("Efforts of world's 16 billion chickens still not adding up to much.", SARCASTIC),
    ("CEO unveils bold new plan to undo damage from last year's bold new plan.", SARCASTIC),
    ("Like boxes of shit in your house? Get a cat.", SARCASTIC),
    ("United airlines temporarily suspends cargo travel for pets.", NONSARCASTIC),
    ("There have been more mass shootings this year than there have been days.", NONSARCASTIC),
    ("Cops cleared on corruption charges after implicating decorated police dog.", SARCASTIC),
)


def case_study_examples() -> List[Example]:
    """Headlines from the error-analysis case study, as a micro fixture."""
    return [
        Example(text, label, f"case-study:{i}")
        for i, (text, label) in enumerate(CASE_STUDY_HEADLINES, start=1)
    ]


def describe(dataset: Dataset) -> Dict[str, Any]:
    nonsarc, sarc = dataset.class_counts
    return {"size": len(dataset), "nonsarcastic": nonsarc, "sarcastic": sarc,
            "max_len": dataset.max_len, "removed": dataset.removed}
