"""Run configuration: dataclass defaults < JSON file < command-line overrides."""

import json
import os
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .model import INFERENCE_PAD, ModelConfig
from .optim import TrainConfig
from .synth import KINDS

THREADS_ENV = "DENOISENET_THREADS"
COMMANDS = ("train", "finetune", "denoise", "eval", "diagnose", "synth")


@dataclass
class RunConfig:
    # model
    depth: int = 20
    feature_channels: int = 63
    # training
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    patch_size: int = 128
    crop_border: int = 21
    steps: int = 160_000
    noise_sigma: float = 25.0
    seed: int | None = None
    checkpoint_every: int = 1000
    log_every: int = 100
    val_every: int = 1000
    # paths
    manifest: str | None = None
    val_manifest: str | None = None
    model: str | None = None
    models: list[str] = field(default_factory=list)
    input: str | None = None
    output: str | None = None
    truth: str | None = None
    output_dir: str = "run"
    clean_dir: str | None = None
    denoised_dirs: list[str] = field(default_factory=list)
    # options
    class_label: str | None = None
    split_fractions: list[float] = field(default_factory=lambda: [0.6, 0.2, 0.2])
    split_seed: int = 0
    baseline: str | None = None
    quantized: bool = False
    pad_border: int = INFERENCE_PAD
    threads: int | None = None
    raw: bool = False
    synth_kind: str = "shapes"
    synth_count: int = 60
    synth_size: int = 64

    # -------------------------------------------------------------------------

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.depth, self.feature_channels)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            batch_size=self.batch_size,
            patch_size=self.patch_size,
            crop_border=self.crop_border,
            steps=self.steps,
            noise_sigma=self.noise_sigma,
            seed=self.seed if self.seed is not None else 0,
            checkpoint_every=self.checkpoint_every,
            log_every=self.log_every,
        )

    def resolved_threads(self) -> int:
        if self.threads is not None:
            value = self.threads
        else:
            raw = os.environ.get(THREADS_ENV, "1")
            try:
                value = int(raw)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None
        if value < 1:
            raise ConfigError(f"thread count must be >= 1, got {value}")
        return value

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def validate(self, command: str) -> None:
        """Reject bad settings before any work starts."""
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        self.model_config()
        self.resolved_threads()
        if self.pad_border < 0:
            raise ConfigError(f"pad_border must be >= 0, got {self.pad_border}")
        if self.val_every < 0:
            raise ConfigError(f"val_every must be >= 0, got {self.val_every}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

        if command in ("train", "finetune"):
            self.train_config()
            if self.seed is None:
                raise ConfigError(f"{command} requires a seed")
            _require_file(self.manifest, "manifest")
            if command == "train" and self.model:
                _require_file(self.model, "model")
            if self.val_manifest:
                _require_file(self.val_manifest, "val_manifest")
        if command == "finetune":
            _require_file(self.model, "model")
            if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9:
                raise ConfigError(f"split_fractions must be three values summing to 1, got {self.split_fractions}")
        if command == "denoise":
            _require_file(self.model, "model")
            _require_file(self.input, "input")
            if not self.output:
                raise ConfigError("denoise requires --output")
        if command == "eval":
            if self.clean_dir:
                _require_dir(self.clean_dir, "clean_dir")
                if not self.denoised_dirs:
                    raise ConfigError("eval over a clean directory needs at least one of denoised_dirs")
                for spec in self.denoised_dirs:
                    _require_dir(split_named(spec)[1], "denoised_dirs")
            else:
                _require_file(self.manifest, "manifest")
                if not self.models:
                    raise ConfigError("eval needs either clean_dir + denoised_dirs or manifest + models")
                for spec in self.models:
                    _require_file(split_named(spec)[1], "models")
        if command == "diagnose":
            _require_file(self.model, "model")
            _require_file(self.input, "input")
            if self.truth:
                _require_file(self.truth, "truth")
        if command == "synth":
            if self.synth_kind not in KINDS:
                raise ConfigError(f"synth_kind must be one of {', '.join(KINDS)}, got {self.synth_kind!r}")
            if self.synth_count < 1 or self.synth_size < 3:
                raise ConfigError(f"need synth_count >= 1 and synth_size >= 3, got {self.synth_count}, {self.synth_size}")


def _require_file(path: str | None, key: str) -> None:
    if not path:
        raise ConfigError(f"missing required setting {key!r}")
    if not Path(path).is_file():
        raise ConfigError(f"{key}: file not found: {path}")


def _require_dir(path: str | None, key: str) -> None:
    if not path or not Path(path).is_dir():
        raise ConfigError(f"{key}: directory not found: {path}")


def split_named(spec: str) -> tuple[str, str]:
    """``name=path`` -> (name, path); a bare path is named after its stem."""
    if "=" in spec:
        name, path = spec.split("=", 1)
        return name, path
    return Path(spec).stem, spec


# =============================================================================
# Field typing shared by the JSON loader and the argparse builder
# =============================================================================

def field_types() -> dict[str, Any]:
    return typing.get_type_hints(RunConfig)


def base_type(hint) -> tuple[type, bool]:
    """Scalar element type of a field and whether it is a list."""
    origin = typing.get_origin(hint)
    if origin is list:
        return typing.get_args(hint)[0], True
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        return args[0], False
    return hint, False


def parse_bool(text: str | bool) -> bool:
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce(key: str, value: Any) -> Any:
    hint = field_types()[key]
    kind, is_list = base_type(hint)
    if value is None:
        return [] if is_list else None
    convert = parse_bool if kind is bool else kind
    try:
        if is_list:
            items = value if isinstance(value, list) else [value]
            return [convert(item) for item in items]
        return convert(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    config = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object of flat keys")
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {', '.join(unknown)}")
        config = replace(config, **{key: coerce(key, value) for key, value in raw.items()})
    if overrides:
        config = replace(config, **overrides)
    return config
