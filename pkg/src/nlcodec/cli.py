"""Command-line interface: ``nlcodec {train,compress,decompress,eval,inspect}``.

Every run echoes its effective configuration and output paths as JSON on
standard output. Exit codes: 0 success, 1 usage error, 2 data error
(missing or unreadable input, corrupt stream), 3 model error (bad
checkpoint, model hash mismatch, diverged training).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .codec import BitstreamError, ModelMismatch, decompress, encode, inspect_latents
from .data import ImageFormatError, load_image_corpus, read_image, write_image
from .evalmetrics import rd_report, write_report
from .networks import ModelConfig
from .training import CheckpointError, TrainingConfig, TrainingDiverged, load_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3
COMPRESSED_SUFFIX = ".nlc"

log = logging.getLogger("nlcodec")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class ModelError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# flag name -> (type, help); defaults live in the dataclasses or below
_TRAIN_FLAGS = {
    "corpus": (str, "directory of training images (PPM or PNG)"),
    "lambda": (float, "rate-distortion trade-off"),
    "variant": (str, "fully-factorized, scale-only, mean-scale, context-only or combined"),
    "steps": (int, "optimization steps"),
    "seed": (int, "seed for initialization, patch sampling and noise"),
    "out": (str, "checkpoint path"),
    "learning-rate": (float, "Adam step size"),
    "batch-size": (int, "patches per step"),
    "patch-size": (int, "patch side in pixels (multiple of 64)"),
    "latent-channels": (int, "bottleneck width M"),
    "channels": (int, "transform width N"),
    "context": (str, "context kernel: 3, 5, 7, single-neighbor or prev-row-3"),
    "distribution": (str, "gaussian, logistic or laplacian"),
    "log-every": (int, "steps between log records"),
}
_IO_FLAGS = {
    "model": (str, "checkpoint path"),
    "in": (str, "input file"),
    "out": (str, "output file"),
}
_EVAL_FLAGS = {
    "models": (str, "checkpoint directory or a single checkpoint"),
    "corpus": (str, "directory of evaluation images"),
    "out": (str, "CSV report path (a JSON mirror is written alongside)"),
}
SUBCOMMANDS = {
    "train": _TRAIN_FLAGS,
    "compress": _IO_FLAGS,
    "decompress": _IO_FLAGS,
    "eval": _EVAL_FLAGS,
    "inspect": _IO_FLAGS,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nlcodec", description="Learned image codec with a joint autoregressive and hierarchical prior.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, flags in SUBCOMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file supplying any of the flags below (command line wins)")
        for flag, (kind, help_text) in flags.items():
            p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=kind, default=None, help=help_text)
        p.add_argument("--verbose", action="store_true", help="log progress to standard error")
    return parser


def effective_options(args: argparse.Namespace) -> dict:
    """Config-file values overlaid by explicitly given flags."""
    allowed = {f.replace("-", "_") for f in SUBCOMMANDS[args.command]}
    opts = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in loaded.items():
            norm = key.replace("-", "_")
            if norm not in allowed:
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            opts[norm] = value
    for key in allowed:
        value = getattr(args, key)
        if value is not None:
            opts[key] = value
    return opts


def _require(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if opts.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _echo(command: str, config: dict, **outputs) -> None:
    print(json.dumps({"command": command, "config": config, **outputs}, indent=2, sort_keys=True, default=str))


def _load_model(path):
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        if not Path(path).exists():
            raise DataError(f"checkpoint {path} not found") from exc
        raise ModelError(str(exc)) from exc


def _read(path):
    try:
        return read_image(path)
    except FileNotFoundError as exc:
        raise DataError(f"{path} not found") from exc
    except (ImageFormatError, OSError) as exc:
        raise DataError(str(exc)) from exc


def _corpus(path):
    try:
        return load_image_corpus(path)
    except (FileNotFoundError, NotADirectoryError) as exc:
        raise DataError(str(exc)) from exc


def cmd_train(opts: dict) -> None:
    _require(opts, "corpus", "out")
    defaults = TrainingConfig()
    mdef = ModelConfig()
    try:
        model_cfg = ModelConfig(
            M=opts.get("latent_channels", mdef.M), N=opts.get("channels", mdef.N),
            context_kernel=str(opts.get("context", mdef.context_kernel)),
            distribution=opts.get("distribution", mdef.distribution),
            variant=opts.get("variant", mdef.variant),
        )
        cfg = TrainingConfig(
            lmbda=opts.get("lambda", defaults.lmbda), learning_rate=opts.get("learning_rate", defaults.learning_rate),
            batch_size=opts.get("batch_size", defaults.batch_size), patch_size=opts.get("patch_size", defaults.patch_size),
            steps=opts.get("steps", defaults.steps), seed=opts.get("seed", defaults.seed), model=model_cfg,
            log_every=opts.get("log_every", defaults.log_every),
        )
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    corpus = _corpus(opts["corpus"])
    out = Path(opts["out"])
    log_path = out.with_name(out.name + ".log.jsonl")
    _echo("train", {"corpus": opts["corpus"], **cfg.to_dict()}, checkpoint=str(out), log=str(log_path))
    out.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("w") as sink:
        def record(r):
            sink.write(json.dumps(r) + "\n")
            sink.flush()
            log.info("step %(step)d loss %(loss).4f bpp %(bpp_latent).4f+%(bpp_hyper).4f mse %(mse).6f", r)
        try:
            ckpt = train(cfg, corpus, out, log_sink=record)
        except TrainingDiverged as exc:
            raise ModelError(str(exc)) from exc
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    print(json.dumps({"digest": f"{ckpt.digest:08x}", "model_hash": ckpt.model_hash.hex()}))


def cmd_compress(opts: dict) -> None:
    _require(opts, "model", "in")
    out = Path(opts.get("out") or Path(opts["in"]).with_suffix(COMPRESSED_SUFFIX))
    ckpt = _load_model(opts["model"])
    image = _read(opts["in"])
    res = encode(image, ckpt.model)
    data = res.bitstream.to_bytes()
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)
    h, w = image.shape[:2]
    _echo("compress", {"model": opts["model"], "in": opts["in"]}, out=str(out), bytes=len(data),
          bpp=8.0 * len(data) / (h * w), hyper_bytes=len(res.bitstream.hyper), latent_bytes=len(res.bitstream.latent))


def cmd_decompress(opts: dict) -> None:
    _require(opts, "model", "in", "out")
    ckpt = _load_model(opts["model"])
    try:
        data = Path(opts["in"]).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {opts['in']}: {exc}") from exc
    try:
        image = decompress(data, ckpt.model)
    except ModelMismatch as exc:
        raise ModelError(str(exc)) from exc
    except BitstreamError as exc:
        raise DataError(str(exc)) from exc
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(out, image)
    _echo("decompress", {"model": opts["model"], "in": opts["in"]}, out=str(out),
          width=image.shape[1], height=image.shape[0])


def cmd_eval(opts: dict) -> None:
    _require(opts, "models", "corpus", "out")
    src = Path(opts["models"])
    if src.is_dir():
        checkpoints = sorted(src.glob("*.ckpt"))
    elif src.exists():
        checkpoints = [src]
    else:
        raise DataError(f"{src} not found")
    if not checkpoints:
        raise DataError(f"no .ckpt files in {src}")
    corpus = _corpus(opts["corpus"])
    points = rd_report(checkpoints, corpus.images)
    csv_path, json_path = write_report(points, opts["out"])
    _echo("eval", {"models": [str(c) for c in checkpoints], "corpus": opts["corpus"]},
          out=str(csv_path), json=str(json_path), rows=len(points),
          errors=[p.error for p in points if p.error])


def cmd_inspect(opts: dict) -> None:
    _require(opts, "model", "in", "out")
    ckpt = _load_model(opts["model"])
    image = _read(opts["in"])
    report = inspect_latents(image, ckpt.model)
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report))
    _echo("inspect", {"model": opts["model"], "in": opts["in"]}, out=str(out), channel=report["channel"],
          channel_bits=report["channel_bits"], autocorrelation=report["normalized_autocorrelation"])


COMMANDS = {
    "train": cmd_train,
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        opts = effective_options(args)
        COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"nlcodec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"nlcodec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelError as exc:
        print(f"nlcodec: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
