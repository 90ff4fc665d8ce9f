"""Command-line entry point: ``train``, ``embed``, ``eval`` and ``scatter``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Optional, TextIO

import pydantic

from .checkpoint import load_checkpoint, save_checkpoint
from .data import LabeledDataset, load_dataset
from .encoder import EncoderParams, embed
from .evaluation import evaluate
from .exceptions import ConfigurationError, ContrastiveEmbedError, ShapeError
from .export import read_embedding_csv, render_scatter_svg, write_embedding_csv
from .models import (
    Cifar10Source,
    Cifar100Source,
    DatasetSource,
    EvalOptions,
    RunConfig,
    SynthConfig,
    SyntheticSource,
)
from .trainer import EpochRecord, run_training

logger = logging.getLogger(__name__)

LOSS_LOG = "loss_log.txt"
REPORT_FILE = "report.json"
CONFIG_COPY = "config.json"
CHECKPOINT_SUFFIX = ".tscn"


def _format_validation_error(exc: pydantic.ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return "; ".join(parts)


def load_run_config(path: Path) -> RunConfig:
    """Parse a JSON run configuration; unknown keys and bad values raise ConfigurationError."""
    text = Path(path).read_text()
    try:
        return RunConfig.model_validate_json(text)
    except pydantic.ValidationError as exc:
        raise ConfigurationError(f"{path}: {_format_validation_error(exc)}") from exc


def parse_data_spec(spec: str) -> DatasetSource:
    """``cifar10:<dir>``, ``cifar100:<dir>`` or ``synthetic[:seed=N,classes=N,...]``."""
    kind, _, rest = spec.partition(":")
    if kind == "cifar10" and rest:
        return Cifar10Source(path=Path(rest))
    if kind == "cifar100" and rest:
        return Cifar100Source(path=Path(rest))
    if kind == "synthetic":
        fields: dict[str, str] = {}
        for item in filter(None, rest.split(",")):
            key, sep, value = item.partition("=")
            if not sep:
                # a bare value is the seed
                key, value = "seed", item
            fields[key.strip()] = value.strip()
        seed = fields.pop("seed", "0")
        try:
            return SyntheticSource(config=SynthConfig.model_validate(fields), seed=int(seed))
        except (pydantic.ValidationError, ValueError) as exc:
            detail = (
                _format_validation_error(exc) if isinstance(exc, pydantic.ValidationError) else exc
            )
            raise ConfigurationError(f"bad synthetic data spec {spec!r}: {detail}") from exc
    raise ConfigurationError(
        f"bad data spec {spec!r}; expected cifar10:<dir>, cifar100:<dir> or synthetic[:options]"
    )


def _check_image_shape(p: EncoderParams, dataset: LabeledDataset) -> None:
    if tuple(dataset.image_shape) != tuple(p.input_shape):
        raise ShapeError(
            f"checkpoint expects images of shape {tuple(p.input_shape)}, "
            f"dataset has {tuple(dataset.image_shape)}"
        )


def _splits(dataset: LabeledDataset) -> list[str]:
    return ["train" if flag else "test" for flag in dataset.is_train]


# --- commands ------------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    out_dir = Path(args.output_dir) if args.output_dir else config.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / CONFIG_COPY).write_text(config.model_dump_json(indent=2) + "\n")
    dataset = load_dataset(config.dataset)
    seed = config.training.seed
    if config.protocol is not None:
        stages = [config.protocol.pretrain, config.protocol.readout, config.protocol.finetune]
    else:
        stages = [config.direct.stage]  # type: ignore[union-attr]
    kernels = {s.name: s.kernel for s in stages}
    stage_numbers = {s.name: i + 1 for i, s in enumerate(stages)}

    def on_stage_end(name: str, p: EncoderParams) -> None:
        path = out_dir / f"stage{stage_numbers[name]}_{name}{CHECKPOINT_SUFFIX}"
        save_checkpoint(path, p, stage=name, kernel=kernels[name], seed=seed)

    with (out_dir / LOSS_LOG).open("w") as log:

        def on_epoch(rec: EpochRecord) -> None:
            log.write(f"{rec.stage} {rec.epoch + 1} {rec.mean_loss:.17g} {rec.lr:.17g}\n")
            log.flush()

        params, report = run_training(
            dataset, config, on_stage_end=on_stage_end, on_epoch=on_epoch, workers=args.workers
        )

    final = out_dir / f"final{CHECKPOINT_SUFFIX}"
    save_checkpoint(final, params, stage=stages[-1].name, kernel=report.final_kernel, seed=seed)
    if config.evaluation is not None:
        options = config.evaluation.model_copy(update={"kernel": report.final_kernel})
        eval_report = evaluate(params, dataset, options, config.augment)
        (out_dir / REPORT_FILE).write_text(eval_report.model_dump_json(indent=2) + "\n")
    logger.info("training finished; final loss %s, outputs in %s", report.final_loss, out_dir)
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(parse_data_spec(args.data))
    _check_image_shape(ckpt.params, dataset)
    _, z = embed(ckpt.params, dataset.images)
    write_embedding_csv(args.out, z, dataset.fine_labels, _splits(dataset))
    return 0


def _write_text(text: str, out: Optional[Path], stream: TextIO) -> None:
    if out is None:
        stream.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(parse_data_spec(args.data))
    _check_image_shape(ckpt.params, dataset)
    try:
        options = EvalOptions(
            k=args.k,
            knn_sweep=args.knn_sweep,
            label_level=args.label_level,
            kernel=ckpt.kernel,
            seed=args.seed,
        )
    except pydantic.ValidationError as exc:
        raise ConfigurationError(_format_validation_error(exc)) from exc
    report = evaluate(ckpt.params, dataset, options)
    _write_text(report.model_dump_json(indent=2) + "\n", args.out, sys.stdout)
    return 0


def cmd_scatter(args: argparse.Namespace) -> int:
    table = read_embedding_csv(args.input)
    render_scatter_svg(table, args.out)
    return 0


# --- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contrastive-embed",
        description="Train, apply and evaluate contrastive 2-D image embeddings",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a training configuration")
    train.add_argument("--config", type=Path, required=True, help="JSON run configuration")
    train.add_argument(
        "--output-dir",
        type=Path,
        default=None,
        help="override the configuration's output_dir",
    )
    train.add_argument(
        "--workers",
        type=int,
        default=int(os.getenv("CONTRASTIVE_EMBED_WORKERS", "1")),
        help="augmentation threads (env: CONTRASTIVE_EMBED_WORKERS)",
    )
    train.set_defaults(func=cmd_train)

    emb = sub.add_parser("embed", help="write the Z embedding of a dataset as CSV")
    emb.add_argument("--checkpoint", type=Path, required=True)
    emb.add_argument("--data", required=True, help="cifar10:<dir> | cifar100:<dir> | synthetic")
    emb.add_argument("--out", type=Path, required=True)
    emb.set_defaults(func=cmd_embed)

    ev = sub.add_parser("eval", help="compute the evaluation report of a checkpoint")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--data", required=True, help="cifar10:<dir> | cifar100:<dir> | synthetic")
    ev.add_argument("--k", type=int, default=15, help="neighbours for kNN accuracy")
    ev.add_argument("--knn-sweep", action="store_true", help="report kNN accuracy for k=1..30")
    ev.add_argument("--label-level", choices=("fine", "coarse"), default="fine")
    ev.add_argument("--seed", type=int, default=0, help="seed for loss batches and k-means")
    ev.add_argument("--out", type=Path, default=None, help="write the report here, not stdout")
    ev.set_defaults(func=cmd_eval)

    sc = sub.add_parser("scatter", help="render an embedding CSV as an SVG scatter plot")
    sc.add_argument("--in", dest="input", type=Path, required=True)
    sc.add_argument("--out", type=Path, required=True)
    sc.set_defaults(func=cmd_scatter)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        return int(args.func(args))
    except (ContrastiveEmbedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
