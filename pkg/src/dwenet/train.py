"""Training loop, multi-run averaging and experiment preparation."""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from dwenet import ops
from dwenet.config import TrainConfig, resolve_workers
from dwenet.data import (
    Dataset,
    EmbeddingMatrix,
    Example,
    Vocabulary,
    batches,
    build_vocab,
    load_embeddings,
    load_headlines,
    load_sarc,
    num_batches,
    pad_and_filter,
    random_embeddings,
    split_train_test,
)
from dwenet.errors import ConfigError, TrainingDivergedError
from dwenet.evaluate import Metrics, evaluate, summarize
from dwenet.model import Model, model_param_init
from dwenet.optim import Adam, OneCycleSpec, one_cycle
from dwenet.tensor import backward

logger = logging.getLogger(__name__)

# Batch norm needs two or more values per channel in train mode.
MIN_TRAIN_BATCH = 2


@dataclass
class TrainingHistory:
    """Per-epoch loss/accuracy and the (lr, momentum) consumed at every step."""

    epoch_loss: List[float] = field(default_factory=list)
    epoch_accuracy: List[float] = field(default_factory=list)
    lrs: List[float] = field(default_factory=list)
    momentums: List[float] = field(default_factory=list)

    def record_step(self, lr: float, momentum: float) -> None:
        self.lrs.append(lr)
        self.momentums.append(momentum)

    def record_epoch(self, loss: float, accuracy: float) -> None:
        self.epoch_loss.append(loss)
        self.epoch_accuracy.append(accuracy)

    @property
    def steps(self) -> int:
        return len(self.lrs)

    def to_dict(self) -> Dict[str, List[float]]:
        return {
            "epoch_loss": self.epoch_loss,
            "epoch_accuracy": self.epoch_accuracy,
            "lrs": self.lrs,
            "momentums": self.momentums,
        }


@dataclass
class TrainResult:
    model: Model
    history: TrainingHistory
    metrics: Metrics
    seed: int


@dataclass
class Experiment:
    """Everything a run needs besides the config: vocabulary, vectors and splits."""

    vocab: Vocabulary
    embedding: EmbeddingMatrix
    train_set: Dataset
    test_set: Dataset


def schedule_for(config: TrainConfig, train_size: int) -> Tuple[OneCycleSpec, int]:
    """
    The one-cycle spec and step count for a run.

    Step i of n is evaluated at schedule position i on a spec spanning n - 1
    positions, so the first step sees the start values and the last step the
    closed-form endpoint.
    """
    per_epoch = num_batches(train_size, config.training.batch_size, MIN_TRAIN_BATCH)
    n_steps = config.training.epochs * per_epoch
    return config.optimizer.schedule(max(n_steps - 1, 1)), n_steps


def train_model(
    config: TrainConfig,
    embedding: EmbeddingMatrix,
    train_set: Dataset,
    test_set: Optional[Dataset] = None,
    seed: Optional[int] = None,
    verbose: bool = True,
) -> TrainResult:
    """
    Train one model with Adam under the one-cycle schedule.

    Args:
        config: Experiment configuration
        embedding: Initial word vectors (row 0 zero)
        train_set: Training split
        test_set: Evaluated once after the final epoch (train split if None)
        seed: Overrides `config.training.seed`
        verbose: Log one line per epoch at INFO

    Returns:
        TrainResult with the model, history and final test metrics

    Raises:
        TrainingDivergedError: The loss became non-finite
        ValueError: Fewer than two training examples
    """
    if len(train_set) < MIN_TRAIN_BATCH:
        raise ValueError(
            f"need at least {MIN_TRAIN_BATCH} training examples, got {len(train_set)}"
        )
    seed = config.training.seed if seed is None else seed
    model = model_param_init(config.model, embedding, seed)
    opt_cfg = config.optimizer
    optimizer = Adam(
        model.trainable_parameters(),
        weight_decay=opt_cfg.weight_decay,
        beta2=opt_cfg.beta2,
        eps=opt_cfg.eps,
        decoupled=opt_cfg.decoupled_weight_decay,
        masks=model.update_masks(),
    )
    spec, n_steps = schedule_for(config, len(train_set))
    epochs = config.training.epochs
    history = TrainingHistory()
    step = 0

    for epoch in range(epochs):
        model.train()
        loss_sum = 0.0
        correct = 0
        seen = 0
        for batch_id, batch in enumerate(
            batches(
                train_set, config.training.batch_size, shuffle=True,
                seed=[seed, 2, epoch], min_batch=MIN_TRAIN_BATCH,
            )
        ):
            lr, momentum = one_cycle(min(step, spec.total_steps), spec)
            optimizer.zero_grad()
            logits = model(batch.token_ids)
            loss, probs = ops.softmax_cross_entropy(logits, batch.labels)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(step, lr, batch_id, value)
            backward(loss)
            optimizer.step(lr, momentum)
            history.record_step(lr, momentum)

            loss_sum += value * len(batch)
            correct += int(np.sum(np.argmax(probs, axis=1) == batch.labels))
            seen += len(batch)
            step += 1

        history.record_epoch(loss_sum / seen, correct / seen)
        if verbose:
            logger.info(
                "Epoch %d/%d | loss: %.4f | lr: %.1e | acc: %.1f%%",
                epoch + 1, epochs, history.epoch_loss[-1], history.lrs[-1],
                100.0 * history.epoch_accuracy[-1],
            )

    assert step == n_steps
    metrics = evaluate(model, test_set if test_set is not None else train_set)
    metrics = dataclasses.replace(metrics, loss_curve=tuple(history.epoch_loss))
    if verbose:
        logger.info(
            "Run seed %d | test acc: %.2f%% | f1: %.4f", seed, 100 * metrics.accuracy, metrics.f1
        )
    return TrainResult(model, history, metrics, seed)


@dataclass
class MultiRunResult:
    """Per-run metrics and their mean/std; `model` is the first run's model."""

    seeds: List[int]
    metrics: List[Metrics]
    histories: List[TrainingHistory]
    model: Model

    @property
    def summary(self) -> Dict[str, Dict[str, float]]:
        return summarize(self.metrics)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "runs": len(self.metrics),
            "seeds": self.seeds,
            "summary": self.summary,
            "per_run": [m.to_dict() for m in self.metrics],
        }


def _run_worker(
    args: Tuple[TrainConfig, EmbeddingMatrix, Dataset, Dataset, int]
) -> Tuple[Metrics, TrainingHistory]:
    config, embedding, train_set, test_set, seed = args
    result = train_model(config, embedding, train_set, test_set, seed=seed, verbose=False)
    return result.metrics, result.history


def multi_run(
    config: TrainConfig,
    experiment: Experiment,
    runs: Optional[int] = None,
    workers: Optional[int] = None,
    verbose: bool = True,
) -> MultiRunResult:
    """
    Repeat training with seeds base, base+1, ... and average the test metrics.

    Runs after the first may execute in worker processes (`DWENET_THREADS`);
    results are always reported in seed order.
    """
    n = config.training.runs if runs is None else runs
    if n < 1:
        raise ValueError(f"runs must be positive, got {n}")
    base = config.training.seed
    seeds = [base + r for r in range(n)]
    n_workers = resolve_workers(workers)

    first = train_model(
        config, experiment.embedding, experiment.train_set, experiment.test_set,
        seed=seeds[0], verbose=verbose,
    )
    metrics = [first.metrics]
    histories = [first.history]
    rest = [
        (config, experiment.embedding, experiment.train_set, experiment.test_set, s)
        for s in seeds[1:]
    ]
    if rest and n_workers > 1:
        logger.info("Running %d further run(s) on %d workers", len(rest), n_workers)
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for m, h in pool.map(_run_worker, rest):
                metrics.append(m)
                histories.append(h)
    else:
        for i, args in enumerate(rest, start=2):
            m, h = _run_worker(args)
            if verbose:
                logger.info("Run %d/%d | acc: %.2f%%", i, n, 100 * m.accuracy)
            metrics.append(m)
            histories.append(h)
    return MultiRunResult(seeds, metrics, histories, first.model)


def load_splits(config: TrainConfig) -> Tuple[List[Example], List[Example]]:
    """Raw (train, test) examples: Headlines is split here, SARC ships pre-split."""
    data = config.data
    if data.dataset == "headlines":
        if not data.path:
            raise ConfigError("data.path is required for the headlines dataset", "data.path")
        return split_train_test(load_headlines(data.path), data.test_frac, data.split_seed)
    if data.dataset == "sarc_main" and not config.training.allow_long_running:
        raise ConfigError(
            "sarc_main is a long-running dataset; set training.allow_long_running=true",
            "training.allow_long_running",
        )
    if not data.train_path or not data.test_path:
        raise ConfigError(
            f"data.train_path and data.test_path are required for {data.dataset}", "data.train_path"
        )
    variant = "main" if data.dataset == "sarc_main" else "pol"
    return load_sarc(data.train_path, variant), load_sarc(data.test_path, variant)


def prepare_experiment(config: TrainConfig) -> Experiment:
    """
    Load the configured dataset, build the vocabulary on the training split,
    load (or draw) embeddings and pad both splits.
    """
    train_examples, test_examples = load_splits(config)
    vocab = build_vocab([ex.text for ex in train_examples], config.data.min_freq)
    d = config.model.embed_dim
    trainable = config.model.embedding_trainable
    if config.data.embeddings:
        embedding = load_embeddings(
            config.data.embeddings, vocab, d, seed=config.training.seed, trainable=trainable
        )
    else:
        embedding = random_embeddings(vocab, d, seed=config.training.seed, trainable=trainable)

    max_len = config.model.max_len
    train_set = pad_and_filter(train_examples, vocab, max_len)
    test_set = pad_and_filter(test_examples, vocab, max_len)
    logger.info(
        "Prepared %s: vocab %d, train %d (removed %d), test %d (removed %d)",
        config.data.dataset, len(vocab), len(train_set), train_set.removed,
        len(test_set), test_set.removed,
    )
    subset = config.training.train_subset
    if subset is not None and subset < len(train_set):
        train_set = train_set.subset(np.arange(subset))
        logger.info("Training on the first %d examples only", subset)
    return Experiment(vocab, embedding, train_set, test_set)
