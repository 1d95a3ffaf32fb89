"""Tests for the training loop, multi-run averaging and experiment preparation."""

import dataclasses
from pathlib import Path

import numpy as np
import pytest

from dwenet.config import DataConfig, TrainConfig, TrainingConfig
from dwenet.data import (
    PAD_ID,
    Dataset,
    EmbeddingMatrix,
    Example,
    build_vocab,
    pad_and_filter,
    random_embeddings,
)
from dwenet.errors import ConfigError, TrainingDivergedError
from dwenet.evaluate import evaluate, mean_loss
from dwenet.model import model_param_init
from dwenet.train import (
    Experiment,
    load_splits,
    multi_run,
    prepare_experiment,
    schedule_for,
    train_model,
)

from tests.conftest import make_headlines, write_headlines


class TestSchedule:
    """Test step accounting."""

    def test_steps_per_run(self, tiny_config: TrainConfig) -> None:
        """ceil(n / batch) steps per epoch; the schedule spans n_steps - 1 positions."""
        spec, n_steps = schedule_for(tiny_config, 50)
        assert n_steps == 2 * 7
        assert spec.total_steps == 13
        assert spec.lr_max == tiny_config.optimizer.lr_max

    def test_one_row_tail_does_not_count_as_a_step(self, tiny_config: TrainConfig) -> None:
        _, n_steps = schedule_for(tiny_config, 49)
        assert n_steps == 2 * 6


class TestTrainModel:
    """Test a single training run."""

    def test_history_and_schedule_endpoints(
        self, tiny_config: TrainConfig, tiny_embedding: EmbeddingMatrix, tiny_dataset: Dataset
    ) -> None:
        """One (lr, momentum) per step, starting low and ending at the floor."""
        result = train_model(tiny_config, tiny_embedding, tiny_dataset, verbose=False)
        spec, n_steps = schedule_for(tiny_config, len(tiny_dataset))
        history = result.history
        assert history.steps == n_steps
        assert len(history.epoch_loss) == tiny_config.training.epochs
        assert history.lrs[0] == pytest.approx(spec.lr_start)
        assert history.lrs[-1] == pytest.approx(spec.lr_end)
        assert history.momentums[0] == pytest.approx(spec.mom_high)
        assert max(history.lrs) <= spec.lr_max
        assert result.metrics.loss_curve == tuple(history.epoch_loss)
        assert result.metrics.total == len(tiny_dataset)

    def test_identical_seeds_are_bit_identical(
        self, tiny_config: TrainConfig, tiny_embedding: EmbeddingMatrix, tiny_dataset: Dataset
    ) -> None:
        a = train_model(tiny_config, tiny_embedding, tiny_dataset, seed=3, verbose=False)
        b = train_model(tiny_config, tiny_embedding, tiny_dataset, seed=3, verbose=False)
        c = train_model(tiny_config, tiny_embedding, tiny_dataset, seed=4, verbose=False)
        assert a.history.epoch_loss == b.history.epoch_loss
        assert a.metrics == b.metrics
        assert a.history.epoch_loss != c.history.epoch_loss

    def test_pad_row_stays_zero(
        self, tiny_config: TrainConfig, tiny_embedding: EmbeddingMatrix, tiny_dataset: Dataset
    ) -> None:
        """Non-static vectors move, except PAD."""
        result = train_model(tiny_config, tiny_embedding, tiny_dataset, verbose=False)
        weight = result.model.embedding.weight.data
        assert np.all(weight[PAD_ID] == 0)
        assert not np.allclose(weight[1:], tiny_embedding.vectors[1:])

    def test_static_embeddings_do_not_move(
        self, tiny_config: TrainConfig, tiny_embedding: EmbeddingMatrix, tiny_dataset: Dataset
    ) -> None:
        model_cfg = dataclasses.replace(tiny_config.model, embedding_trainable=False)
        config = dataclasses.replace(tiny_config, model=model_cfg)
        result = train_model(config, tiny_embedding, tiny_dataset, verbose=False)
        np.testing.assert_array_equal(result.model.embedding.weight.data, tiny_embedding.vectors)

    def test_non_finite_loss_raises(
        self, tiny_config: TrainConfig, tiny_embedding: EmbeddingMatrix, tiny_dataset: Dataset
    ) -> None:
        """A NaN loss stops training with the step and batch recorded."""
        vectors = tiny_embedding.vectors.copy()
        vectors[1:] = np.nan
        broken = EmbeddingMatrix(vectors)
        with np.errstate(invalid="ignore"), pytest.raises(TrainingDivergedError) as excinfo:
            train_model(tiny_config, broken, tiny_dataset, verbose=False)
        assert excinfo.value.step == 0
        assert excinfo.value.batch_id == 0

    def test_empty_training_set(
        self, tiny_config: TrainConfig, tiny_embedding: EmbeddingMatrix, tiny_dataset: Dataset
    ) -> None:
        with pytest.raises(ValueError):
            train_model(tiny_config, tiny_embedding, tiny_dataset.subset([]), verbose=False)

    def test_single_row_tail_batch_is_merged(
        self, tiny_config: TrainConfig, tiny_embedding: EmbeddingMatrix, tiny_dataset: Dataset
    ) -> None:
        """Batch 47 over 48 rows would leave a one-row batch that batch norm rejects."""
        assert len(tiny_dataset) == 48
        config = dataclasses.replace(
            tiny_config, training=dataclasses.replace(tiny_config.training, batch_size=47)
        )
        result = train_model(config, tiny_embedding, tiny_dataset, verbose=False)
        _, n_steps = schedule_for(config, len(tiny_dataset))
        assert n_steps == config.training.epochs
        assert result.history.steps == n_steps
        assert all(np.isfinite(result.history.epoch_loss))

    def test_first_epoch_lowers_eval_loss(
        self, tiny_config: TrainConfig, tiny_embedding: EmbeddingMatrix, tiny_dataset: Dataset
    ) -> None:
        """Eval-mode loss on the training split drops below its value at initialization."""
        config = dataclasses.replace(
            tiny_config,
            training=dataclasses.replace(tiny_config.training, epochs=1, batch_size=2),
        )
        initial = model_param_init(config.model, tiny_embedding, config.training.seed)
        before = mean_loss(initial, tiny_dataset)
        result = train_model(config, tiny_embedding, tiny_dataset, verbose=False)
        assert mean_loss(result.model, tiny_dataset) < before

    def test_single_example_is_rejected(
        self, tiny_config: TrainConfig, tiny_embedding: EmbeddingMatrix, tiny_dataset: Dataset
    ) -> None:
        with pytest.raises(ValueError, match="at least 2"):
            train_model(tiny_config, tiny_embedding, tiny_dataset.subset([0]), verbose=False)

    def test_epoch_log_line(
        self, tiny_config: TrainConfig, tiny_embedding: EmbeddingMatrix, tiny_dataset: Dataset,
        caplog: pytest.LogCaptureFixture,
    ) -> None:
        with caplog.at_level("INFO", logger="dwenet.train"):
            train_model(tiny_config, tiny_embedding, tiny_dataset, verbose=True)
        assert any(r.getMessage().startswith("Epoch 1/2 | loss: ") for r in caplog.records)

    def test_overfits_small_subset(self, tiny_config: TrainConfig) -> None:
        """The miniature dense model fits 64 headlines within 200 epochs."""
        rows = make_headlines(32)
        vocab = build_vocab([text for text, _ in rows])
        examples = [Example(text, label, f"o:{i}") for i, (text, label) in enumerate(rows)]
        dataset = pad_and_filter(examples, vocab, 8)
        assert len(dataset) == 64
        model_cfg = dataclasses.replace(tiny_config.model, head_dims=(16,))
        config = dataclasses.replace(
            tiny_config,
            model=model_cfg,
            training=dataclasses.replace(tiny_config.training, epochs=200, batch_size=16),
        )
        result = train_model(config, random_embeddings(vocab, 6, seed=0), dataset, verbose=False)
        assert evaluate(result.model, dataset).accuracy >= 0.99


class TestMultiRun:
    """Test repeated training."""

    @pytest.fixture
    def experiment(self, tiny_config: TrainConfig) -> Experiment:
        return prepare_experiment(tiny_config)

    def test_seeds_and_summary(self, tiny_config: TrainConfig, experiment: Experiment) -> None:
        result = multi_run(tiny_config, experiment, runs=3, workers=1, verbose=False)
        assert result.seeds == [0, 1, 2]
        assert len(result.metrics) == len(result.histories) == 3
        assert set(result.summary) == {"accuracy", "precision", "recall", "f1"}
        assert result.to_dict()["runs"] == 3

    def test_workers_do_not_change_results(
        self, tiny_config: TrainConfig, experiment: Experiment
    ) -> None:
        """Parallel runs report the same metrics, in seed order."""
        serial = multi_run(tiny_config, experiment, runs=3, workers=1, verbose=False)
        parallel = multi_run(tiny_config, experiment, runs=3, workers=2, verbose=False)
        assert serial.metrics == parallel.metrics

    def test_runs_must_be_positive(self, tiny_config: TrainConfig, experiment: Experiment) -> None:
        with pytest.raises(ValueError):
            multi_run(tiny_config, experiment, runs=0)


class TestPrepareExperiment:
    """Test dataset loading and experiment assembly."""

    def test_vocabulary_from_training_split_only(self, tiny_config: TrainConfig) -> None:
        experiment = prepare_experiment(tiny_config)
        train_tokens = {
            tok for ids in experiment.train_set.token_ids for tok in experiment.vocab.decode(ids)
        }
        assert set(experiment.vocab.tokens[2:]) == train_tokens
        assert len(experiment.train_set) + len(experiment.test_set) == 48
        assert experiment.embedding.vocab_size == len(experiment.vocab)

    def test_train_subset(self, tiny_config: TrainConfig) -> None:
        config = dataclasses.replace(
            tiny_config, training=dataclasses.replace(tiny_config.training, train_subset=10)
        )
        assert len(prepare_experiment(config).train_set) == 10

    def test_pretrained_vectors(self, tiny_config: TrainConfig, glove_file: Path) -> None:
        config = dataclasses.replace(
            tiny_config, data=dataclasses.replace(tiny_config.data, embeddings=str(glove_file))
        )
        experiment = prepare_experiment(config)
        row = experiment.embedding.vectors[experiment.vocab.id_of("area")]
        expected = glove_file.read_text().splitlines()[0].split()[1:]
        np.testing.assert_allclose(row, np.asarray(expected, dtype=np.float32))

    def test_headlines_need_a_path(self) -> None:
        with pytest.raises(ConfigError) as excinfo:
            load_splits(TrainConfig())
        assert excinfo.value.key == "data.path"

    def test_sarc_main_is_gated(self) -> None:
        config = TrainConfig(data=DataConfig(dataset="sarc_main", train_path="a", test_path="b"))
        with pytest.raises(ConfigError) as excinfo:
            load_splits(config)
        assert excinfo.value.key == "training.allow_long_running"

    def test_sarc_pol_files(self, tmp_path: Path) -> None:
        """SARC ships pre-split; both files are read as given."""
        train = tmp_path / "train.tsv"
        test = tmp_path / "test.tsv"
        train.write_text("1\toh great\n0\tthe bill passed\n", encoding="utf-8")
        test.write_text("0\tvotes counted\n", encoding="utf-8")
        config = TrainConfig(
            data=DataConfig(dataset="sarc_pol", train_path=str(train), test_path=str(test)),
            training=TrainingConfig(allow_long_running=False),
        )
        train_examples, test_examples = load_splits(config)
        assert [ex.label for ex in train_examples] == [1, 0]
        assert len(test_examples) == 1
        with pytest.raises(ConfigError):
            load_splits(dataclasses.replace(config, data=DataConfig(dataset="sarc_pol")))

    def test_long_headlines_are_removed(self, tmp_path: Path, tiny_config: TrainConfig) -> None:
        rows = make_headlines(12) + [(" ".join(["word"] * 20), 1), (" ".join(["x"] * 20), 0)]
        path = write_headlines(tmp_path / "long.jsonl", rows)
        config = dataclasses.replace(
            tiny_config, data=dataclasses.replace(tiny_config.data, path=str(path))
        )
        experiment = prepare_experiment(config)
        assert experiment.train_set.removed + experiment.test_set.removed == 2
