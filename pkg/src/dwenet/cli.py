"""Command-line entry point: train, eval, predict, heatmap, diff-errors, ablate."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.table import Table

from dwenet.analysis import (
    ablation_grid,
    ablation_run,
    block_heatmaps,
    dependency_grid,
    error_set_diff,
    l1_dependency_matrix,
    write_ablation_csv,
    write_case_studies,
    write_dependency_grid,
)
from dwenet.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from dwenet.config import TrainConfig, load_config
from dwenet.data import (
    NONSARCASTIC,
    PAD_ID,
    SARCASTIC,
    Dataset,
    case_study_examples,
    describe,
    pad_and_filter,
    tokenize,
)
from dwenet.errors import CheckpointError, ConfigError, DwenetError
from dwenet.evaluate import (
    Metrics,
    evaluate,
    mean_loss,
    predict,
    print_metrics,
    print_summary,
    write_metrics_csv,
    write_summary_json,
)
from dwenet.model import Model, predict_proba
from dwenet.train import Experiment, load_splits, multi_run, prepare_experiment, train_model
from dwenet.visualize import (
    plot_comparison,
    plot_heatmap,
    plot_learning_curves,
    print_training_summary,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
DEFAULT_OUT = "out"
LABEL_NAMES = {NONSARCASTIC: "nonsarcastic", SARCASTIC: "sarcastic"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="JSON config file")
    common.add_argument(
        "--override", action="append", default=[], metavar="K=V",
        help="Dotted config override, e.g. model.growth_rate=4 (repeatable)",
    )
    common.add_argument("--out", type=str, default=None, help="Output directory")
    common.add_argument("--seed", type=int, default=None, help="Base random seed")
    common.add_argument("--runs", type=int, default=None, help="Number of training runs")
    common.add_argument("--checkpoint", type=str, default=None, help="Checkpoint path")
    common.add_argument("--plot", action="store_true", help="Also write PNG figures")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only")

    parser = argparse.ArgumentParser(
        prog="dwenet", description="Densely connected text CNN for sarcasm detection"
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("train", parents=[common], help="Train (multi-run) and report test metrics")
    sub.add_parser("eval", parents=[common], help="Evaluate a checkpoint on the test split")
    p = sub.add_parser("predict", parents=[common], help="Classify a single text")
    p.add_argument("--text", type=str, required=True, help="Text to classify")
    p = sub.add_parser("heatmap", parents=[common], help="L1 weight-dependency heatmaps")
    p.add_argument("--block", type=int, default=None, help="1-based block (default: all)")
    p.add_argument("--layer", type=int, default=None, help="1-based target layer (default: last)")
    p.add_argument(
        "--normalization", choices=["global", "column"], default="global",
        help="Normalize by the matrix maximum or by each column's maximum",
    )
    p = sub.add_parser("diff-errors", parents=[common], help="Items A gets right and B wrong")
    p.add_argument("--baseline", type=str, required=True, help="Checkpoint of comparison model B")
    sub.add_parser("ablate", parents=[common], help="Run the structural ablation grid")
    return parser


def setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def _config(args: argparse.Namespace) -> TrainConfig:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"training.seed={args.seed}")
    if args.runs is not None:
        overrides.append(f"training.runs={args.runs}")
    return load_config(args.config, overrides)


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(config: TrainConfig, out: Path) -> None:
    (out / "config.echo.json").write_text(config.to_json(), encoding="utf-8")


def _require_checkpoint(path: Optional[str], flag: str = "--checkpoint") -> Checkpoint:
    if not path:
        raise ConfigError(f"{flag} is required for this command", flag)
    return load_checkpoint(path)


def _test_set_for(checkpoint: Checkpoint, config: TrainConfig) -> Dataset:
    if checkpoint.vocab is None:
        raise CheckpointError("checkpoint has no vocabulary; re-save it from a training run")
    _, test_examples = load_splits(config)
    return pad_and_filter(test_examples, checkpoint.vocab, checkpoint.model.config.max_len)


def cmd_train(args: argparse.Namespace, console: Console) -> int:
    config = _config(args)
    out = _out_dir(args)
    _echo(config, out)
    experiment = prepare_experiment(config)
    result = multi_run(config, experiment, verbose=not args.quiet)
    write_metrics_csv(result.metrics, out / "metrics.csv")
    summary = result.to_dict()
    summary["data"] = {
        "train": describe(experiment.train_set), "test": describe(experiment.test_set)
    }
    write_summary_json(summary, out / "summary.json")
    print_training_summary(result.histories[0].to_dict(), console)
    print_summary(result.summary, len(result.metrics), console=console)
    if args.checkpoint:
        save_checkpoint(result.model, args.checkpoint, experiment.vocab)
    if args.plot:
        plot_learning_curves(result.histories[0].to_dict(), save_path=out / "learning_curves.png")
        if len(result.histories) > 1:
            plot_comparison(
                [h.to_dict() for h in result.histories],
                [f"seed {s}" for s in result.seeds],
                save_path=out / "run_comparison.png",
            )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, console: Console) -> int:
    config = _config(args)
    checkpoint = _require_checkpoint(args.checkpoint)
    out = _out_dir(args)
    _echo(config, out)
    test_set = _test_set_for(checkpoint, config)
    metrics = evaluate(checkpoint.model, test_set)
    loss = mean_loss(checkpoint.model, test_set)
    write_metrics_csv([metrics], out / "metrics.csv")
    write_summary_json(
        {"runs": 1, "per_run": [metrics.to_dict()], "test_loss": loss}, out / "summary.json"
    )
    print_metrics(metrics, title=f"Evaluation of {args.checkpoint}", console=console)
    console.print(f"Mean test loss: {loss:.4f}", markup=False, highlight=False)
    return EXIT_OK


def encode_text(text: str, checkpoint: Checkpoint) -> npt.NDArray[np.int64]:
    """Token ids for one text, right-padded (or truncated) to the model's max_len."""
    if checkpoint.vocab is None:
        raise CheckpointError("checkpoint has no vocabulary; re-save it from a training run")
    max_len = checkpoint.model.config.max_len
    ids = checkpoint.vocab.encode(tokenize(text))
    if len(ids) > max_len:
        logger.warning("Text has %d tokens; truncating to %d", len(ids), max_len)
        ids = ids[:max_len]
    return np.array([ids + [PAD_ID] * (max_len - len(ids))], dtype=np.int64)


def cmd_predict(args: argparse.Namespace, console: Console) -> int:
    config = _config(args)
    checkpoint = _require_checkpoint(args.checkpoint)
    out = _out_dir(args)
    _echo(dataclasses.replace(config, model=checkpoint.model.config), out)
    token_ids = encode_text(args.text, checkpoint)
    assert checkpoint.vocab is not None
    logger.debug("Tokens: %s", " ".join(checkpoint.vocab.decode(token_ids[0].tolist())))
    probs = predict_proba(checkpoint.model, token_ids)[0]
    label = int(np.argmax(probs))
    write_summary_json(
        {
            "text": args.text,
            "label": LABEL_NAMES[label],
            "probabilities": {
                LABEL_NAMES[NONSARCASTIC]: float(probs[NONSARCASTIC]),
                LABEL_NAMES[SARCASTIC]: float(probs[SARCASTIC]),
            },
        },
        out / "prediction.json",
    )
    console.print(
        f"{LABEL_NAMES[label]} {probs[NONSARCASTIC]:.6f} {probs[SARCASTIC]:.6f}",
        markup=False, highlight=False,
    )
    return EXIT_OK


def _heatmap_model(args: argparse.Namespace, config: TrainConfig, out: Path) -> Model:
    if args.checkpoint:
        return load_checkpoint(args.checkpoint).model
    experiment = prepare_experiment(config)
    result = train_model(
        config, experiment.embedding, experiment.train_set, experiment.test_set,
        verbose=not args.quiet,
    )
    write_metrics_csv([result.metrics], out / "metrics.csv")
    write_summary_json({"runs": 1, "per_run": [result.metrics.to_dict()]}, out / "summary.json")
    return result.model


def cmd_heatmap(args: argparse.Namespace, console: Console) -> int:
    config = _config(args)
    out = _out_dir(args)
    _echo(config, out)
    model = _heatmap_model(args, config, out)
    if args.block is None:
        if args.layer is not None:
            raise ConfigError("--layer needs --block", "--layer")
        heatmaps = block_heatmaps(model, args.normalization)
    else:
        heatmaps = [l1_dependency_matrix(model, args.block, args.layer, args.normalization)]

    table = Table(title="Mean normalized weight per source group")
    table.add_column("Block / layer")
    table.add_column("Groups")
    table.add_column("Input planes", justify="right")
    table.add_column("Layers", justify="right")
    for heatmap in heatmaps:
        stem = f"heatmap_block{heatmap.block}_layer{heatmap.target_layer}"
        heatmap.to_csv(out / f"{stem}.csv")
        heatmap.to_pgm(out / f"{stem}.pgm")
        if args.plot:
            plot_heatmap(heatmap, save_path=out / f"{stem}.png")
        means = heatmap.group_means()
        rest = " ".join(f"{m:.3f}" for m in means[1:]) or "-"
        table.add_row(
            f"{heatmap.block} / {heatmap.target_layer}",
            str(list(heatmap.groups)), f"{means[0]:.3f}", rest,
        )
    for block in sorted({h.block for h in heatmaps}):
        write_dependency_grid(
            dependency_grid(model, block), out / f"dependency_grid_block{block}.csv"
        )
    console.print(table)
    return EXIT_OK


def cmd_diff_errors(args: argparse.Namespace, console: Console) -> int:
    config = _config(args)
    model_a = _require_checkpoint(args.checkpoint)
    model_b = _require_checkpoint(args.baseline, "--baseline")
    out = _out_dir(args)
    _echo(config, out)
    test_a = _test_set_for(model_a, config)
    test_b = _test_set_for(model_b, config)
    if test_a.texts != test_b.texts:
        raise ValueError("the two checkpoints keep different test items (max_len differs)")
    preds_a, _ = predict(model_a.model, test_a)
    preds_b, _ = predict(model_b.model, test_b)
    cases = error_set_diff(preds_a, preds_b, test_a.labels, test_a.texts)
    write_case_studies(cases, out / "case_study.csv")

    runs: List[Metrics] = [
        Metrics.from_predictions(preds_a, test_a.labels),
        Metrics.from_predictions(preds_b, test_b.labels),
    ]
    write_metrics_csv(runs, out / "metrics.csv")
    write_summary_json(
        {"a": runs[0].to_dict(), "b": runs[1].to_dict(), "a_right_b_wrong": len(cases)},
        out / "summary.json",
    )

    examples = case_study_examples()
    case_rows = []
    for ex in examples:
        probs = predict_proba(model_a.model, encode_text(ex.text, model_a))[0]
        case_rows.append((ex.text, ex.label, int(np.argmax(probs)), float(probs[SARCASTIC])))
    table = Table(title="Case-study headlines (model A)")
    table.add_column("Headline")
    table.add_column("Label")
    table.add_column("Predicted")
    table.add_column("P(sarcastic)", justify="right")
    for text, label, pred, p in case_rows:
        table.add_row(text, LABEL_NAMES[label], LABEL_NAMES[pred], f"{p:.3f}")
    console.print(table)
    console.print(f"{len(cases)} test items classified correctly by A and wrongly by B")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, console: Console) -> int:
    config = _config(args)
    out = _out_dir(args)
    _echo(config, out)
    cells = ablation_grid(config)
    results = []
    cache: Dict[Tuple[object, ...], Experiment] = {}
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        console=console,
    ) as progress:
        task = progress.add_task("Ablation grid", total=len(cells))
        for cell in cells:
            progress.update(task, description=f"Ablation: {cell.name}")
            results.extend(ablation_run([cell], experiments=cache, verbose=False))
            progress.advance(task)
    write_ablation_csv(results, out / "ablation.csv")
    write_summary_json({r.cell.name: r.row() for r in results}, out / "summary.json")

    table = Table(title="Ablation")
    for column in ("Cell", "Layers", "k", "Embedding", "Accuracy", "F1", "Params"):
        table.add_column(column, justify="left" if column in ("Cell", "Embedding") else "right")
    for result in results:
        row = result.row()
        table.add_row(
            str(row["name"]), str(row["layers"]), str(row["growth_rate"]),
            f"{row['embedding']}{' (static)' if row['static'] else ''}",
            f"{row['accuracy_mean']:.4f} ± {row['accuracy_std']:.4f}",
            f"{row['f1_mean']:.4f}", f"{row['params']:,}",
        )
    console.print(table)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "heatmap": cmd_heatmap,
    "diff-errors": cmd_diff_errors,
    "ablate": cmd_ablate,
}


def parse_and_dispatch(
    argv: Optional[Sequence[str]] = None, console: Optional[Console] = None
) -> int:
    """
    Run one command and return its exit status: 0 on success, 1 on a runtime
    failure, 2 on a usage or configuration error. Failures print a single
    `error: <Kind>: <message>` line to stderr.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    setup_logging(args.verbose, args.quiet)
    console = console or Console()
    try:
        return COMMANDS[args.command](args, console)
    except ConfigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DwenetError, OSError, ValueError, IndexError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
