"""Command-line entry point: train, finetune, denoise, eval, diagnose, synth.

Exit codes: 0 success, 1 usage or validation error, 2 runtime or I/O error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import __version__, plots
from .config import COMMANDS, RunConfig, base_type, field_types, load_config, parse_bool, split_named
from .data import (
    add_gaussian_noise,
    add_quantized_noise,
    list_images,
    load_dataset,
    load_gray,
    save_gray,
    split_dataset,
)
from .diagnose import export_trace, trace_image
from .errors import ConfigError, DenoiseNetError
from .evaluate import EvalRecord, build_analytics, emit_report, log_summary, psnr
from .model import MODEL_FORMAT_VERSION, DenoiseNetModel, denoise_batch, denoise_image, init_model, load_model, save_decomposition, save_model
from .optim import (
    TrainConfig,
    ValidationSelector,
    checkpoint_callback,
    finetune,
    train,
    write_loss_history,
    write_validation_history,
)
from .synth import write_synthetic_dataset
from .tensor import set_num_threads

log = logging.getLogger("denoisenet")

NOISY_ID = "noisy"
AGNOSTIC_ID = "agnostic"
# validation images are noised with seeds from seed + VAL_NOISE_OFFSET
VAL_NOISE_OFFSET = 100_000

EPILOG = """
Examples:
  %(prog)s synth --synth_kind shapes --synth_count 60 --seed 1 --output_dir runs/toy
  %(prog)s train --config toy.json --manifest runs/toy/data/shapes/manifest.tsv --seed 1
  %(prog)s finetune --config toy.json --model runs/toy/model/denoisenet.dnet \\
        --manifest classes.tsv --class_label disks --learning_rate 1e-4 --seed 2
  %(prog)s denoise --config c.json --model m.dnet --input a.png --output b.png
  %(prog)s eval --manifest test.tsv --models agnostic=a.dnet disks=d.dnet --baseline noisy
  %(prog)s eval --clean_dir clean/ --denoised_dirs bm3d=out_bm3d/ net=out_net/
  %(prog)s diagnose --model m.dnet --input clean.png --noise_sigma 25 --seed 3

Every config key doubles as a --key flag; flags override the JSON file.
"""


class UsageError(Exception):
    def __init__(self, usage: str, message: str):
        super().__init__(message)
        self.usage = usage


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(self.format_usage(), message)


# =============================================================================
# Argument parsing
# =============================================================================

def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="JSON file of flat RunConfig keys")
    for name, hint in field_types().items():
        kind, is_list = base_type(hint)
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        parser.add_argument(
            *flags,
            dest=name,
            type=parse_bool if kind is bool else kind,
            nargs="+" if is_list else None,
            default=argparse.SUPPRESS,
            metavar=name.upper(),
        )


def build_parser() -> Parser:
    parser = Parser(
        prog="denoisenet",
        description="Train, fine-tune, run and analyze DenoiseNet residual denoisers.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    parser.add_argument("--version", action="version",
                        version=f"denoisenet {__version__} (model format DNET v{MODEL_FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    helps = {
        "train": "train a class-agnostic model from a manifest",
        "finetune": "fine-tune a pretrained model on one class",
        "denoise": "denoise one image",
        "eval": "score denoisers and write comparison reports",
        "diagnose": "per-layer noise decomposition of one image",
        "synth": "write a synthetic dataset and its manifest",
    }
    for command in COMMANDS:
        add_config_flags(sub.add_parser(command, help=helps[command]))
    return parser


def parse_run_config(argv: Sequence[str]) -> tuple[str, RunConfig]:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    return command, load_config(config_path, args)


# =============================================================================
# Logging
# =============================================================================

def setup_logging(out_dir: Path) -> list[logging.Handler]:
    out_dir.mkdir(parents=True, exist_ok=True)
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter("%(message)s"))
    logfile = logging.FileHandler(out_dir / "run.log", encoding="utf-8")
    logfile.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("denoisenet")
    root.setLevel(logging.INFO)
    for handler in (console, logfile):
        root.addHandler(handler)
    return [console, logfile]


def teardown_logging(handlers: list[logging.Handler]) -> None:
    root = logging.getLogger("denoisenet")
    for handler in handlers:
        root.removeHandler(handler)
        handler.close()


# =============================================================================
# Shared pipeline pieces
# =============================================================================

def make_noisy(image: np.ndarray, config: RunConfig, index: int) -> np.ndarray:
    seed = (config.seed or 0) + index
    if config.quantized:
        return add_quantized_noise(image, config.noise_sigma, seed)
    return add_gaussian_noise(image, config.noise_sigma, seed)


def score_models(images, models: dict[str, DenoiseNetModel], config: RunConfig) -> list[EvalRecord]:
    """Noise each clean image, denoise with every model, score everything."""
    noisy = [make_noisy(item.image, config, i) for i, item in enumerate(images)]
    records = [EvalRecord(item.image_id, item.class_label, NOISY_ID, psnr(n, item.image))
               for item, n in zip(images, noisy)]
    for name, model in models.items():
        outputs = denoise_batch(model, noisy, config.pad_border)
        records.extend(EvalRecord(item.image_id, item.class_label, name, psnr(out, item.image))
                       for item, out in zip(images, outputs))
    return records


def check_model_config(model: DenoiseNetModel, config: RunConfig, path: str) -> None:
    if model.config != config.model_config():
        raise ConfigError(f"{path}: model is {model.config}, configuration expects {config.model_config()}")


# =============================================================================
# Commands
# =============================================================================

def cmd_train(config: RunConfig) -> None:
    out = config.out
    train_config = config.train_config()
    images = [item.image for item in load_dataset(config.manifest)]
    if config.model:
        model = load_model(config.model)
        check_model_config(model, config, config.model)
    else:
        model = init_model(config.model_config(), config.seed)
    log.info("training %d layers x %d features (%d parameters) for %d steps on %d images",
             model.depth, model.config.feature_channels, model.parameter_count(), train_config.steps, len(images))
    stem = out / "model" / "denoisenet"
    result = train(model, images, train_config, [checkpoint_callback(stem, train_config.checkpoint_every)])
    save_model(result.model, stem.with_suffix(".dnet"))
    write_loss_history(result.history, out / "reports" / "loss.csv")
    if result.history:
        plots.curve_plot(result.history, "step", "loss", out / "reports" / "loss.svg", start=1)
    log.info("wrote %s", stem.with_suffix(".dnet"))
    if config.val_manifest:
        records = score_models(load_dataset(config.val_manifest), {"denoisenet": result.model}, config)
        emit_report(records, build_analytics(records, baseline=NOISY_ID, exclude=(NOISY_ID,)), out / "reports" / "val")
        log_summary(records)


def cmd_finetune(config: RunConfig) -> None:
    out = config.out
    pretrained = load_model(config.model)
    check_model_config(pretrained, config, config.model)
    label = config.class_label or "all"
    dataset = load_dataset(config.manifest, config.class_label)
    if not dataset:
        raise ConfigError(f"{config.manifest}: no images with class {config.class_label!r}")
    split = split_dataset([item.image_id for item in dataset], config.split_fractions, config.split_seed)
    by_id = {item.image_id: item for item in dataset}
    parts = pd.DataFrame([(image_id, part) for part in ("train", "val", "test") for image_id in split.part(part)],
                         columns=["image_id", "part"])
    (out / "reports").mkdir(parents=True, exist_ok=True)
    parts.to_csv(out / "reports" / f"split_{label}.csv", index=False, lineterminator="\n")
    log.info("class %s: %d train / %d val / %d test", label, len(split.train), len(split.val), len(split.test))

    train_config: TrainConfig = config.train_config()
    stem = out / "model" / f"denoisenet_{label}"
    callbacks = [checkpoint_callback(stem, train_config.checkpoint_every)]
    selector = None
    if split.val:
        val = [by_id[i] for i in split.val]
        selector = ValidationSelector(
            [item.image for item in val],
            [make_noisy(item.image, config, VAL_NOISE_OFFSET + i) for i, item in enumerate(val)],
            config.val_every, train_config.steps, config.pad_border,
        )
        log.info("pretrained validation PSNR %.4f dB", selector.score(pretrained))
        callbacks.append(selector)
    result = finetune(pretrained, [by_id[i].image for i in split.train], train_config, config.model_config(), callbacks)
    if selector is not None:
        result = selector.select(result)
        write_validation_history(selector, out / "reports" / f"val_{label}.csv")
        log.info("kept step %s of %d (validation PSNR %.4f dB)", selector.best_step, train_config.steps, selector.best_psnr)
    save_model(result.model, stem.with_suffix(".dnet"))
    write_loss_history(result.history, out / "reports" / f"loss_{label}.csv")
    log.info("wrote %s", stem.with_suffix(".dnet"))

    if split.test:
        test = [by_id[i] for i in split.test]
        records = score_models(test, {AGNOSTIC_ID: pretrained, label: result.model}, config)
        emit_report(records, build_analytics(records, baseline=AGNOSTIC_ID, exclude=(NOISY_ID,)),
                    out / "reports" / f"finetune_{label}")
        log_summary(records)


def cmd_denoise(config: RunConfig) -> None:
    model = load_model(config.model)
    image = load_gray(config.input)
    save_gray(denoise_image(model, image, config.pad_border), config.output)
    log.info("wrote %s", config.output)


def cmd_eval(config: RunConfig) -> None:
    if config.clean_dir:
        records = []
        named = [split_named(spec) for spec in config.denoised_dirs]
        for clean_path in list_images(config.clean_dir):
            clean = load_gray(clean_path)
            for name, directory in named:
                candidate = Path(directory) / clean_path.name
                if not candidate.is_file():
                    matches = [p for p in list_images(directory) if p.stem == clean_path.stem]
                    if not matches:
                        raise ConfigError(f"{directory}: no denoised image for {clean_path.name}")
                    candidate = matches[0]
                records.append(EvalRecord(clean_path.stem, None, name, psnr(load_gray(candidate), clean)))
        exclude: tuple[str, ...] = ()
    else:
        models = {}
        for spec in config.models:
            name, path = split_named(spec)
            models[name] = load_model(path)
        records = score_models(load_dataset(config.manifest, config.class_label), models, config)
        exclude = (NOISY_ID,)
    if not records:
        raise ConfigError("nothing to evaluate")
    emit_report(records, build_analytics(records, baseline=config.baseline, exclude=exclude), config.out / "reports")
    log_summary(records)


def cmd_diagnose(config: RunConfig) -> None:
    model = load_model(config.model)
    image = load_gray(config.input)
    if config.truth:
        noisy, truth = image, load_gray(config.truth)
    elif config.noise_sigma > 0:
        noisy, truth = make_noisy(image, config, 0), image
    else:
        noisy, truth = image, None
    trace = trace_image(model, noisy, truth, config.pad_border)
    out = config.out / "trace"
    export_trace(trace, out)
    if config.raw:
        save_decomposition(trace.decomposition, out / "raw")
    log.info("wrote trace of %d layers to %s", trace.depth, out)


def cmd_synth(config: RunConfig) -> None:
    label = config.class_label or config.synth_kind
    out = config.out / "data" / label
    manifest = write_synthetic_dataset(config.synth_kind, config.synth_count, config.synth_size,
                                       config.seed or 0, out, label)
    log.info("wrote %d %s images and %s", config.synth_count, config.synth_kind, manifest)


HANDLERS = {
    "train": cmd_train,
    "finetune": cmd_finetune,
    "denoise": cmd_denoise,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "synth": cmd_synth,
}


# =============================================================================
# Main
# =============================================================================

def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        command, config = parse_run_config(argv)
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except SystemExit as exc:  # --help, --version
        return int(exc.code or 0)

    try:
        handlers = setup_logging(config.out)
    except OSError as exc:
        sys.stderr.write(f"error: cannot open {config.out / 'run.log'}: {exc}\n")
        return 2
    try:
        config.validate(command)
        set_num_threads(config.resolved_threads())
        HANDLERS[command](config)
        return 0
    except ConfigError as exc:
        log.error("error: %s", exc)
        return 1
    except (DenoiseNetError, OSError) as exc:
        log.error("error: %s", exc)
        return 2
    finally:
        set_num_threads(1)
        teardown_logging(handlers)
