"""Command-line entry point: ``entformer <subcommand> [options]``.

Subcommands ``gen``, ``pretrain``, ``finetune``, ``probe`` and ``eval`` cover
the whole pipeline. Every artifact goes to a fresh path; an existing output
fails with exit code 3 rather than being overwritten.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import config
from .dataset import ConfigError, ShardError, build_dataset, group_counts, parse_dims, read_manifest
from .model import CheckpointFormatError, ChecksumMismatch, ModelConfig, load_checkpoint, save_checkpoint
from .sampler import UnsupportedGroup
from .training import (
    ArtifactMismatch,
    TrainConfig,
    TrainingAborted,
    evaluate,
    finetune_classifier,
    format_report,
    pretrain,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ABORT, EXIT_MISMATCH = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _fresh(path):
    path = Path(path)
    if path.exists():
        raise CliError(EXIT_IO, f"output path {path} already exists")
    return path


def _existing(path, what):
    path = Path(path)
    if not path.is_file():
        raise CliError(EXIT_IO, f"{what} {path} not found")
    return path


def _manifest(args):
    path = Path(args.manifest)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = read_manifest(_existing(path, "manifest"))
    if args.dims and tuple(parse_dims(args.dims)) != tuple(manifest["dims"]):
        raise CliError(EXIT_MISMATCH, f"--dims {args.dims} does not match manifest dims {manifest['dims']}")
    return manifest


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _train_cfg(args, defaults, freeze=False):
    values = dict(defaults)
    for key in ("epochs", "batch_size", "lr_max", "lr_min", "optimizer"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    return TrainConfig(seed=args.seed, deterministic=args.deterministic, freeze_encoder=freeze, **values)


def cmd_gen(args):
    if args.task not in ("pretrain", "classify", "eval"):
        raise CliError(EXIT_CONFIG, f"unknown task {args.task!r}")
    dims = parse_dims(args.dims)
    out = _fresh(args.out)
    groups = args.groups.split(",") if args.groups else None
    counts = group_counts(dims, args.task, args.scale, groups)
    manifest = build_dataset(out, dims, args.task, args.seed, scale_factor=args.scale,
                             counts=counts, workers=args.workers)
    print(out / "manifest.json")
    for g, c in manifest["groups"].items():
        print(f"{g:<16}{c:>10}")
    return EXIT_OK


def cmd_pretrain(args):
    manifest = _manifest(args)
    out = _fresh(args.out)
    out.mkdir(parents=True)
    n = manifest["n"]
    model_cfg = ModelConfig(n_tokens=n * n, **({"dropout": args.dropout} if args.dropout is not None else {}))
    result = pretrain(manifest, model_cfg, _train_cfg(args, config.PRETRAIN_DEFAULTS))
    return _finish(out, result.model, result.report, result.metadata)


def _finetune(args, freeze):
    manifest = _manifest(args)
    model, _ = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    out = _fresh(args.out)
    out.mkdir(parents=True)
    result = finetune_classifier(model, manifest, _train_cfg(args, config.FINETUNE_DEFAULTS, freeze))
    return _finish(out, result.model, result.report, result.metadata)


def cmd_finetune(args):
    return _finetune(args, freeze=False)


def cmd_probe(args):
    return _finetune(args, freeze=True)


def cmd_eval(args):
    manifest = _manifest(args)
    model, _ = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    out = _fresh(args.out)
    if args.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
    report = evaluate(model, manifest, args.mode, seed=args.seed)
    _write_json(out, report)
    print(format_report(report))
    return EXIT_OK


def _finish(out, model, report, metadata):
    metadata = dict(metadata, tool_version=config.TOOL_VERSION)
    save_checkpoint(out / "model.qtck", model, metadata)
    _write_json(out / "report.json", report)
    print(format_report(report))
    print(f"checkpoint: {out / 'model.qtck'}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="entformer", description=__doc__.splitlines()[0])
    parser.add_argument("--show-config", action="store_true", help="print the defaults table and exit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command")

    def common(p, seed_help="master seed"):
        p.add_argument("--seed", type=int, default=0, help=seed_help)
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded deterministic kernels for byte-identical outputs")
        p.add_argument("--out", required=True, help="fresh output path")

    g = sub.add_parser("gen", help="generate a sharded dataset")
    g.add_argument("--dims", required=True, help="subsystem dimensions, e.g. 2x2, 2x3, 3x3")
    g.add_argument("--task", default="pretrain", help="pretrain, classify or eval")
    g.add_argument("--scale", type=float, default=1.0, help="scale factor on the full-size group counts")
    g.add_argument("--groups", default=None, help="comma-separated subset of groups")
    g.add_argument("--workers", type=int, default=1, help="generation processes")
    common(g)
    g.set_defaults(func=cmd_gen)

    def training(p, needs_checkpoint):
        p.add_argument("--manifest", required=True, help="manifest file or dataset directory")
        p.add_argument("--dims", default=None, help="expected dimensions; checked against the manifest")
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True, help="pretrained checkpoint")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr-max", dest="lr_max", type=float)
        p.add_argument("--lr-min", dest="lr_min", type=float)
        p.add_argument("--optimizer", choices=["adam", "sgd"])
        common(p, "training seed")

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining")
    training(p, needs_checkpoint=False)
    p.add_argument("--dropout", type=float)
    p.set_defaults(func=cmd_pretrain)
    p = sub.add_parser("finetune", help="train a classifier head and the encoder")
    training(p, needs_checkpoint=True)
    p.set_defaults(func=cmd_finetune)
    p = sub.add_parser("probe", help="train only the classifier head on a frozen encoder")
    training(p, needs_checkpoint=True)
    p.set_defaults(func=cmd_probe)

    e = sub.add_parser("eval", help="score a checkpoint on the test split")
    e.add_argument("--manifest", required=True, help="manifest file or dataset directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dims", default=None)
    e.add_argument("--mode", choices=["reconstruction", "classification"], default="classification")
    common(e, "mask seed")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.show_config:
        print(json.dumps(config.defaults_table(), indent=2))
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except ArtifactMismatch as exc:
        code, msg = EXIT_MISMATCH, str(exc)
    except TrainingAborted as exc:
        code, msg = EXIT_ABORT, str(exc)
    except (ConfigError, UnsupportedGroup, ValueError) as exc:
        code, msg = EXIT_CONFIG, str(exc)
    except (ShardError, ChecksumMismatch, CheckpointFormatError, OSError) as exc:
        code, msg = EXIT_IO, str(exc)
    print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
