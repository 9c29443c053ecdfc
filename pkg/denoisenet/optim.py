"""ADAM optimization and the minibatch training loop."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .data import GrayImage, iter_training_batches
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .evaluate import psnr
from .model import INFERENCE_PAD, DenoiseNetModel, ModelConfig, backward, denoise_batch, save_model

log = logging.getLogger(__name__)

StepCallback = Callable[[int, DenoiseNetModel, float], None]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    patch_size: int = 128
    crop_border: int = 21
    steps: int = 160_000
    noise_sigma: float = 25.0
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 100

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got beta1={self.beta1}, beta2={self.beta2}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.steps < 0 or self.crop_border < 0:
            raise ConfigError(
                f"need batch_size >= 1, steps >= 0, crop_border >= 0; got "
                f"{self.batch_size}, {self.steps}, {self.crop_border}"
            )
        if self.patch_size <= 2 * self.crop_border:
            raise ConfigError(f"patch_size {self.patch_size} must exceed 2 * crop_border = {2 * self.crop_border}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, config: TrainConfig
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected ADAM update; inputs are left untouched."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError(
            f"params/grads/state lengths differ: {len(params)}, {len(grads)}, {len(state.m)}, {len(state.v)}"
        )
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, m {m.shape}, v {v.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_params.append((p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)).astype(p.dtype))
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))
    return new_params, AdamState(new_m, new_v, t)


@dataclass
class TrainResult:
    model: DenoiseNetModel
    history: list[float] = field(default_factory=list)


def train(
    model: DenoiseNetModel,
    dataset: Sequence[GrayImage],
    config: TrainConfig,
    callbacks: Sequence[StepCallback] = (),
    state: AdamState | None = None,
) -> TrainResult:
    """Run ``config.steps`` minibatches of sample, add noise, backward, ADAM.

    The caller's model is never modified. For a fixed seed and dataset the
    patch sequence, noise and final weights are bit-reproducible.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    for index, image in enumerate(dataset):
        if min(image.shape[:2]) < config.patch_size:
            raise ConfigError(f"training image {index} is {image.shape[0]}x{image.shape[1]}, smaller than patch size {config.patch_size}")

    current = model.copy()
    state = state or AdamState.zeros_like(current.parameters())
    batches = iter_training_batches(dataset, config.batch_size, config.patch_size, config.noise_sigma, config.seed)
    history: list[float] = []
    for step, (clean, noisy) in zip(range(1, config.steps + 1), batches):
        loss, grads = backward(current, noisy.astype(current.dtype), clean.astype(current.dtype), config.crop_border)
        if not math.isfinite(loss):
            raise TrainingDivergedError(step, loss)
        flat_grads = [array for kernel in grads for array in (kernel.weights, kernel.bias)]
        params, state = adam_step(current.parameters(), flat_grads, state, config)
        if not all(np.isfinite(p).all() for p in params):
            raise TrainingDivergedError(step, loss)
        current = current.with_parameters(params)
        history.append(loss)
        if config.log_every and step % config.log_every == 0:
            log.info("step %d/%d loss %.6g", step, config.steps, loss)
        for callback in callbacks:
            callback(step, current, loss)
    return TrainResult(current, history)


def finetune(
    pretrained: DenoiseNetModel,
    class_dataset: Sequence[GrayImage],
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    callbacks: Sequence[StepCallback] = (),
) -> TrainResult:
    """Continue training from pretrained weights with a fresh ADAM state."""
    if model_config is not None and model_config != pretrained.config:
        raise ConfigError(f"pretrained model is {pretrained.config}, run configured for {model_config}")
    return train(pretrained, class_dataset, config, callbacks, state=AdamState.zeros_like(pretrained.parameters()))


@dataclass
class ValidationSelector:
    """Step callback that keeps the weights scoring best on a fixed validation set.

    ``noisy`` holds pre-noised copies of ``clean`` so every evaluation sees
    the same inputs. Scoring happens every ``every`` steps and at
    ``final_step``; ties keep the earlier step.
    """

    clean: Sequence[GrayImage]
    noisy: Sequence[GrayImage]
    every: int
    final_step: int
    pad_border: int = INFERENCE_PAD
    history: list[tuple[int, float]] = field(default_factory=list)
    best_step: int | None = None
    best_psnr: float = -math.inf
    best_model: DenoiseNetModel | None = None

    def __post_init__(self):
        if not self.clean or len(self.clean) != len(self.noisy):
            raise ConfigError(f"validation set needs matching clean/noisy images, got {len(self.clean)}/{len(self.noisy)}")

    def score(self, model: DenoiseNetModel) -> float:
        outputs = denoise_batch(model, list(self.noisy), self.pad_border)
        return float(np.mean([psnr(out, truth) for out, truth in zip(outputs, self.clean)]))

    def __call__(self, step: int, model: DenoiseNetModel, loss: float) -> None:
        if step != self.final_step and not (self.every > 0 and step % self.every == 0):
            return
        value = self.score(model)
        self.history.append((step, value))
        if value > self.best_psnr:
            self.best_step, self.best_psnr, self.best_model = step, value, model
        log.info("step %d validation PSNR %.4f dB (best %.4f at step %s)", step, value, self.best_psnr, self.best_step)

    def select(self, result: TrainResult) -> TrainResult:
        """``result`` with its model swapped for the best validated one."""
        if self.best_model is None:
            return result
        return TrainResult(self.best_model, result.history)


def write_validation_history(selector: ValidationSelector, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(selector.history, columns=["step", "val_psnr_db"])
    frame["selected"] = frame["step"] == selector.best_step
    frame.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    return path


def checkpoint_callback(stem: str | Path, every: int) -> StepCallback:
    """Save ``<stem>_step<N>.dnet`` every ``every`` steps."""
    stem = Path(stem)

    def save(step: int, model: DenoiseNetModel, loss: float) -> None:
        if every > 0 and step % every == 0:
            target = stem.with_name(f"{stem.name}_step{step}.dnet")
            save_model(model, target)
            log.info("checkpoint %s (loss %.6g)", target, loss)

    return save


def write_loss_history(history: Sequence[float], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"step": np.arange(1, len(history) + 1), "loss": np.asarray(history, dtype=np.float64)})
    frame.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    return path
