"""Post-hoc analyses: weight-dependency heatmaps, error set differences and ablations."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from dwenet.config import TrainConfig
from dwenet.layers import DenseBlock
from dwenet.model import PRESETS, Model, ModelConfig, parameter_count
from dwenet.tensor import Array
from dwenet.train import Experiment, MultiRunResult, multi_run, prepare_experiment

logger = logging.getLogger(__name__)

Normalization = Literal["global", "column"]


@dataclass(frozen=True)
class HeatmapMatrix:
    """
    Normalized mean absolute kernel weights of one dense layer.

    `values[i, j]` is the mean of |W[j, i, :]| over the kernel width for
    input channel i and output channel j of the target layer, divided by
    the matrix maximum (or by the column maximum). Rows are grouped by the
    source that produced each input channel: the block input first, then
    one group of k channels per earlier layer.
    """

    values: Array
    groups: Tuple[int, ...]
    block: int
    target_layer: int
    normalization: Normalization = "global"

    @property
    def boundary(self) -> int:
        """Row index where block-input planes end and in-block layers begin."""
        return self.groups[0]

    @property
    def labels(self) -> List[str]:
        return ["input"] + [f"layer{t}" for t in range(1, len(self.groups))]

    def group_slices(self) -> List[slice]:
        bounds = np.cumsum((0,) + self.groups)
        return [slice(int(bounds[i]), int(bounds[i + 1])) for i in range(len(self.groups))]

    def group_means(self) -> Array:
        """
        Mean normalized weight per source group `[n_groups]`.

        Cells are normalized before averaging, so a group mean is at most 1
        and usually below it, even for the group holding the maximum.
        """
        return np.array([self.values[s].mean() for s in self.group_slices()])

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        k = self.values.shape[1]
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["source", "channel"] + [f"c{j + 1}" for j in range(k)])
            for label, rows in zip(self.labels, self.group_slices()):
                for offset, i in enumerate(range(rows.start, rows.stop)):
                    writer.writerow([label, offset] + [f"{v:.6f}" for v in self.values[i]])
        return path

    def to_pgm(self, path: str | Path, scale: int = 8) -> Path:
        """Binary grayscale image, one `scale` x `scale` square per cell."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pixels = np.rint(np.clip(self.values, 0.0, 1.0) * 255).astype(np.uint8)
        pixels = np.kron(pixels, np.ones((scale, scale), dtype=np.uint8))
        height, width = pixels.shape
        path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())
        return path


def _dense_block(model: Model, block: int) -> DenseBlock:
    if model.config.connectivity != "dense":
        raise ValueError(
            f"dependency heatmaps need dense connectivity, model is {model.config.connectivity}"
        )
    if not 1 <= block <= len(model.blocks):
        raise IndexError(f"block {block} outside 1..{len(model.blocks)}")
    target = model.blocks[block - 1]
    assert isinstance(target, DenseBlock)
    return target


def l1_dependency_matrix(
    model: Model,
    block: int,
    target_layer: Optional[int] = None,
    normalization: Normalization = "global",
) -> HeatmapMatrix:
    """
    Dependency matrix of one layer inside a dense block.

    Args:
        model: A model with dense connectivity
        block: 1-based block index
        target_layer: 1-based layer index within the block (default: last)
        normalization: Divide by the global maximum or by each column's maximum

    Raises:
        ValueError: Model is not densely connected
        IndexError: Block or layer out of range
    """
    dense = _dense_block(model, block)
    layer_index = len(dense.layers) if target_layer is None else target_layer
    groups = tuple(dense.source_groups(layer_index))
    kernel = dense.layers[layer_index - 1].weight.data  # type: ignore[attr-defined]
    raw = np.abs(kernel.astype(np.float64)).mean(axis=2).T
    if raw.shape[0] != sum(groups):
        raise ValueError(f"kernel has {raw.shape[0]} input channels, groups sum to {sum(groups)}")
    if normalization == "global":
        peak = raw.max()
        values = raw / peak if peak > 0 else raw
    elif normalization == "column":
        peaks = raw.max(axis=0, keepdims=True)
        values = np.divide(raw, peaks, out=np.zeros_like(raw), where=peaks > 0)
    else:
        raise ValueError(f"unknown normalization: {normalization}")
    return HeatmapMatrix(values, groups, block, layer_index, normalization)


def block_heatmaps(model: Model, normalization: Normalization = "global") -> List[HeatmapMatrix]:
    """Dependency matrix of the last layer of every block."""
    return [
        l1_dependency_matrix(model, b, None, normalization)
        for b in range(1, len(model.blocks) + 1)
    ]


def dependency_grid(model: Model, block: int) -> Array:
    """
    Layer-by-source summary of a whole block: entry [t - 1, g] is the mean
    absolute weight layer t places on source group g, normalized by the grid
    maximum. Entries for sources a layer cannot see are NaN.
    """
    dense = _dense_block(model, block)
    depth = len(dense.layers)
    grid = np.full((depth, depth), np.nan)
    for t in range(1, depth + 1):
        kernel = dense.layers[t - 1].weight.data  # type: ignore[attr-defined]
        means = np.abs(kernel.astype(np.float64)).mean(axis=2).T
        bounds = np.cumsum([0] + dense.source_groups(t))
        grid[t - 1, :t] = [means[bounds[g]:bounds[g + 1]].mean() for g in range(t)]
    peak = np.nanmax(grid)
    return grid / peak if peak > 0 else grid


def write_dependency_grid(grid: Array, path: str | Path) -> Path:
    """One row per layer, one column per source group; unseen sources are blank."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = ["input"] + [f"layer{t}" for t in range(1, grid.shape[1])]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["layer"] + labels)
        for t, row in enumerate(grid, start=1):
            writer.writerow([f"layer{t}"] + ["" if np.isnan(v) else f"{v:.6f}" for v in row])
    return path


@dataclass(frozen=True)
class CaseStudy:
    index: int
    text: str
    label: int
    pred_a: int
    pred_b: int


def error_set_diff(
    preds_a: npt.ArrayLike,
    preds_b: npt.ArrayLike,
    labels: npt.ArrayLike,
    texts: Sequence[str],
) -> List[CaseStudy]:
    """Items model A classifies correctly and model B does not, in dataset order."""
    a = np.asarray(preds_a, dtype=np.int64)
    b = np.asarray(preds_b, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if not (len(a) == len(b) == len(y) == len(texts)):
        raise ValueError(
            f"length mismatch: {len(a)} / {len(b)} predictions, {len(y)} labels, {len(texts)} texts"
        )
    hits = np.flatnonzero((a == y) & (b != y))
    return [CaseStudy(int(i), texts[i], int(y[i]), int(a[i]), int(b[i])) for i in hits]


def write_case_studies(cases: Iterable[CaseStudy], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["text", "label", "pred_a", "pred_b"])
        for case in cases:
            writer.writerow([case.text, case.label, case.pred_a, case.pred_b])
    return path


@dataclass(frozen=True)
class AblationCell:
    name: str
    config: TrainConfig
    embedding: str = "glove"


@dataclass
class AblationResult:
    cell: AblationCell
    runs: int
    summary: Dict[str, Dict[str, float]]
    params: int

    def row(self) -> Dict[str, object]:
        model = self.cell.config.model
        return {
            "name": self.cell.name,
            "connectivity": model.connectivity,
            "layers": model.num_conv_layers,
            "growth_rate": model.growth_rate,
            "embedding": self.cell.embedding,
            "static": not model.embedding_trainable,
            "runs": self.runs,
            "accuracy_mean": self.summary["accuracy"]["mean"],
            "accuracy_std": self.summary["accuracy"]["std"],
            "f1_mean": self.summary["f1"]["mean"],
            "f1_std": self.summary["f1"]["std"],
            "params": self.params,
        }


def _with_preset(base: TrainConfig, preset_name: str, **model_overrides: object) -> TrainConfig:
    fields = {
        **PRESETS[preset_name],
        "embed_dim": base.model.embed_dim,
        "max_len": base.model.max_len,
        **model_overrides,
    }
    return dataclasses.replace(base, model=ModelConfig(**fields))


def ablation_grid(
    base: TrainConfig,
    embedding_files: Optional[Mapping[str, Tuple[str, int]]] = None,
) -> List[AblationCell]:
    """
    The structural variants compared against the full network.

    Connectivity at 8 layers (plain, residual, dense), depth (8, 28),
    growth rate (4, 32), embedding source (the base file, each extra
    `name -> (path, dim)` file, random), static vs non-static vectors, and
    the full network last.
    """
    source = "glove" if base.data.embeddings else "random"
    cells = [
        AblationCell("cnn8", _with_preset(base, "cnn8"), source),
        AblationCell("resnet8", _with_preset(base, "resnet8"), source),
        AblationCell("densenet8", _with_preset(base, "densenet8"), source),
        AblationCell("densenet28", _with_preset(base, "densenet28"), source),
        AblationCell("densenet8_gr32", _with_preset(base, "densenet8_gr32"), source),
    ]
    if base.data.embeddings:
        random_cfg = _with_preset(base, "densenet8")
        cells.append(AblationCell(
            "densenet8_random",
            dataclasses.replace(random_cfg, data=dataclasses.replace(base.data, embeddings=None)),
            "random",
        ))
    for name, (path, dim) in sorted((embedding_files or {}).items()):
        cfg = _with_preset(base, "densenet8", embed_dim=dim)
        cells.append(AblationCell(
            f"densenet8_{name}",
            dataclasses.replace(cfg, data=dataclasses.replace(base.data, embeddings=path)),
            name,
        ))
    cells.append(AblationCell(
        "densenet8_static", _with_preset(base, "densenet8", embedding_trainable=False), source
    ))
    cells.append(AblationCell("dwenet", _with_preset(base, "dwenet"), source))
    return cells


def _experiment_key(config: TrainConfig) -> Tuple[object, ...]:
    return (config.data, config.model.embed_dim, config.model.max_len,
            config.model.embedding_trainable, config.training.seed, config.training.train_subset)


def ablation_run(
    cells: Sequence[AblationCell],
    runs: Optional[int] = None,
    workers: Optional[int] = None,
    experiments: Optional[Dict[Tuple[object, ...], Experiment]] = None,
    verbose: bool = True,
) -> List[AblationResult]:
    """
    One multi-run per cell. Cells sharing data settings reuse one prepared
    experiment.
    """
    cache: Dict[Tuple[object, ...], Experiment] = {} if experiments is None else experiments
    results: List[AblationResult] = []
    for i, cell in enumerate(cells, start=1):
        key = _experiment_key(cell.config)
        if key not in cache:
            cache[key] = prepare_experiment(cell.config)
        logger.info("Ablation cell %d/%d: %s", i, len(cells), cell.name)
        outcome: MultiRunResult = multi_run(
            cell.config, cache[key], runs=runs, workers=workers, verbose=verbose
        )
        results.append(
            AblationResult(
                cell, len(outcome.metrics), outcome.summary, parameter_count(outcome.model)
            )
        )
    return results


ABLATION_COLUMNS = (
    "name", "connectivity", "layers", "growth_rate", "embedding", "static", "runs",
    "accuracy_mean", "accuracy_std", "f1_mean", "f1_std", "params",
)


def write_ablation_csv(results: Iterable[AblationResult], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATION_COLUMNS)
        for result in results:
            row = result.row()
            writer.writerow([
                f"{row[c]:.6f}" if isinstance(row[c], float) else row[c] for c in ABLATION_COLUMNS
            ])
    return path
