"""DenoiseNet: a stack of 3x3 convolutions whose noise channels sum to the output.

Layer i (1-based) of a depth-D network is one ConvKernel:

    layer 1        1 -> F+1 channels
    layers 2..D-1  F -> F+1 channels
    layer D        F -> 1 channel          (1 -> 1 when D == 1)

Output channel 0 of every layer is its noise component r_i (linear, signed);
channels 1..F are features passed through ReLU to the next layer. The
denoised image is ``noisy + r_1 + r_2 + ... + r_D`` accumulated in that
order, which the captured NoiseDecomposition reproduces bit for bit.
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import BadMagicError, ConfigError, ModelFormatError, ShapeError, TruncatedPayloadError, UnsupportedVersionError
from .rng import STREAM_INIT, CounterRNG
from .tensor import ConvKernel, Tensor, conv2d, conv2d_backward, crop_border, dump_tensor, map_ordered, relu, relu_backward, symmetric_pad

log = logging.getLogger(__name__)

MODEL_MAGIC = b"DNET"
MODEL_FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHH")
INFERENCE_PAD = 21
NOISE_INIT_SCALE = 0.1


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 20
    feature_channels: int = 63

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.feature_channels < 1:
            raise ConfigError(f"feature_channels must be >= 1, got {self.feature_channels}")

    @property
    def receptive_field(self) -> int:
        return 2 * self.depth + 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out_channels, in_channels) for each layer, first to last."""
        shapes = []
        for i in range(self.depth):
            in_c = 1 if i == 0 else self.feature_channels
            out_c = 1 if i == self.depth - 1 else self.feature_channels + 1
            shapes.append((out_c, in_c))
        return shapes

    def parameter_count(self) -> int:
        return sum(out_c * in_c * 9 + out_c for out_c, in_c in self.layer_shapes())


@dataclass
class DenoiseNetModel:
    config: ModelConfig
    layers: list[ConvKernel]

    def __post_init__(self):
        shapes = self.config.layer_shapes()
        if len(self.layers) != len(shapes):
            raise ShapeError(f"model has {len(self.layers)} layers, config expects {len(shapes)}")
        for i, (kernel, (out_c, in_c)) in enumerate(zip(self.layers, shapes), start=1):
            if (kernel.out_channels, kernel.in_channels) != (out_c, in_c):
                raise ShapeError(
                    f"layer {i} maps {kernel.in_channels} -> {kernel.out_channels} channels, "
                    f"expected {in_c} -> {out_c}"
                )

    @property
    def depth(self) -> int:
        return self.config.depth

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    def parameter_count(self) -> int:
        return sum(kernel.size for kernel in self.layers)

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list: weights then bias, layer by layer."""
        return [array for kernel in self.layers for array in (kernel.weights, kernel.bias)]

    def with_parameters(self, params: list[np.ndarray]) -> "DenoiseNetModel":
        if len(params) != 2 * self.depth:
            raise ShapeError(f"expected {2 * self.depth} parameter arrays, got {len(params)}")
        layers = [ConvKernel(params[2 * i], params[2 * i + 1]) for i in range(self.depth)]
        return DenoiseNetModel(self.config, layers)

    def copy(self) -> "DenoiseNetModel":
        return DenoiseNetModel(self.config, [kernel.copy() for kernel in self.layers])

    def astype(self, dtype) -> "DenoiseNetModel":
        return DenoiseNetModel(self.config, [kernel.astype(dtype) for kernel in self.layers])

    def equals(self, other: "DenoiseNetModel") -> bool:
        """Bitwise equality of configuration and every parameter."""
        if self.config != other.config:
            return False
        return all(
            a.dtype == b.dtype and a.tobytes() == b.tobytes()
            for a, b in zip(self.parameters(), other.parameters())
        )


@dataclass
class NoiseDecomposition:
    """Per-layer single-channel noise components r_1..r_D, shaped like the output."""

    residuals: list[Tensor] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.residuals)

    def total(self, noisy: Tensor) -> Tensor:
        acc = noisy
        for r in self.residuals:
            acc = acc + r
        return acc


# =============================================================================
# Initialization
# =============================================================================

def init_model(config: ModelConfig, seed: int) -> DenoiseNetModel:
    """He-normal weights (std sqrt(2 / (9 * in_channels))), zero biases.

    The noise-component output row (channel 0) of every layer is scaled by
    0.1 so the fresh network starts close to the identity.
    """
    rng = CounterRNG(seed, STREAM_INIT)
    layers = []
    for out_c, in_c in config.layer_shapes():
        std = np.sqrt(2.0 / (9 * in_c))
        weights = (rng.normal(out_c * in_c * 9) * std).reshape(out_c, in_c, 3, 3)
        weights[0] *= NOISE_INIT_SCALE
        layers.append(ConvKernel(weights.astype(np.float32), np.zeros(out_c, dtype=np.float32)))
    return DenoiseNetModel(config, layers)


# =============================================================================
# Forward / backward
# =============================================================================

def _check_input(noisy: Tensor) -> None:
    if noisy.ndim != 4:
        raise ShapeError(f"network input must be BHW1, got shape {noisy.shape}")
    if noisy.shape[3] != 1:
        raise ShapeError(f"network input must have 1 channel, got shape {noisy.shape}")
    if noisy.shape[1] < 3 or noisy.shape[2] < 3:
        raise ShapeError(f"network input must be at least 3x3, got shape {noisy.shape}")


def _run(model: DenoiseNetModel, noisy: Tensor, keep_cache: bool):
    h = noisy
    acc = noisy
    residuals = []
    cache = []
    last = model.depth - 1
    for i, kernel in enumerate(model.layers):
        z = conv2d(h, kernel, "zero-same")
        r = z if i == last else z[..., :1]
        if keep_cache:
            cache.append((h, z))
        if i != last:
            h = relu(z[..., 1:])
        acc = acc + r
        residuals.append(r)
    return acc, residuals, cache


def forward(model: DenoiseNetModel, noisy: Tensor, capture: bool = False) -> tuple[Tensor, NoiseDecomposition | None]:
    """Run the network on a BHW1 batch normalized to [-0.5, 0.5]."""
    _check_input(noisy)
    denoised, residuals, _ = _run(model, noisy, keep_cache=False)
    return denoised, NoiseDecomposition(residuals) if capture else None


def backward(model: DenoiseNetModel, noisy: Tensor, target: Tensor, crop: int) -> tuple[float, list[ConvKernel]]:
    """Mean squared error over the central region and its exact gradients.

    Pixels within ``crop`` of the border carry no direct loss term; they
    still influence the loss through the convolution support.
    """
    _check_input(noisy)
    if target.shape != noisy.shape:
        raise ShapeError(f"target shape {target.shape} differs from input shape {noisy.shape}")
    if crop < 0:
        raise ConfigError(f"crop border must be >= 0, got {crop}")
    batch, height, width, _ = noisy.shape
    if 2 * crop >= height or 2 * crop >= width:
        raise ConfigError(f"crop border {crop} leaves no pixels of a {height}x{width} input")

    denoised, _, cache = _run(model, noisy, keep_cache=True)
    region = (slice(None), slice(crop, height - crop), slice(crop, width - crop), slice(None))
    diff = denoised[region] - target[region]
    count = diff.size
    loss = float(np.mean(np.square(diff, dtype=np.float64)))

    grad_y = np.zeros_like(denoised)
    grad_y[region] = diff * (2.0 / count)

    grads: list[ConvKernel | None] = [None] * model.depth
    grad_h = None
    last = model.depth - 1
    for i in range(last, -1, -1):
        h, z = cache[i]
        if i == last:
            grad_z = grad_y
        else:
            grad_z = np.concatenate([grad_y, relu_backward(z[..., 1:], grad_h)], axis=-1)
        grad_h, grad_w, grad_b = conv2d_backward(h, model.layers[i], grad_z, "zero-same", input_grad=i > 0)
        grads[i] = ConvKernel(grad_w, grad_b)
    return loss, grads


# =============================================================================
# Inference
# =============================================================================

def denoise_image(model: DenoiseNetModel, noisy: Tensor, border: int = INFERENCE_PAD) -> Tensor:
    """Denoise one HW or HW1 image: symmetric pad, forward, crop, clamp."""
    squeeze = noisy.ndim == 2
    image = noisy[..., None] if squeeze else noisy
    if image.ndim != 3 or image.shape[2] != 1:
        raise ShapeError(f"denoise_image expects an HW1 image, got shape {noisy.shape}")
    padded = symmetric_pad(image, border)
    denoised, _ = forward(model, padded[None].astype(model.dtype, copy=False))
    out = np.clip(crop_border(denoised[0], border), -0.5, 0.5)
    return out[..., 0] if squeeze else out


def denoise_batch(model: DenoiseNetModel, images: list[Tensor], border: int = INFERENCE_PAD) -> list[Tensor]:
    """Denoise independent images over the worker pool; order is preserved."""
    return map_ordered(lambda i: denoise_image(model, images[i], border), len(images))


# =============================================================================
# Serialization
# =============================================================================

def save_model(model: DenoiseNetModel, path: str | Path) -> None:
    """DNET v1: magic, u16 version, u16 depth, u16 F, then f32 weights, biases per layer."""
    config = model.config
    chunks = [HEADER.pack(MODEL_MAGIC, MODEL_FORMAT_VERSION, config.depth, config.feature_channels)]
    for kernel in model.layers:
        chunks.append(np.ascontiguousarray(kernel.weights, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(kernel.bias, dtype="<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))


def load_model(path: str | Path) -> DenoiseNetModel:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
    if len(data) < HEADER.size:
        raise TruncatedPayloadError(f"{path}: truncated payload in header")
    _, version, depth, features = HEADER.unpack_from(data)
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}, expected {MODEL_FORMAT_VERSION}")
    try:
        config = ModelConfig(depth, features)
    except ConfigError as exc:
        raise ModelFormatError(f"{path}: bad header: {exc}") from None

    offset = HEADER.size
    layers = []
    for index, (out_c, in_c) in enumerate(config.layer_shapes(), start=1):
        n_weights = out_c * in_c * 9
        end = offset + 4 * (n_weights + out_c)
        if end > len(data):
            raise TruncatedPayloadError(f"{path}: truncated payload in layer {index}", layer=index)
        flat = np.frombuffer(data, dtype="<f4", count=n_weights + out_c, offset=offset).astype(np.float32)
        layers.append(ConvKernel(flat[:n_weights].reshape(out_c, in_c, 3, 3), flat[n_weights:].copy()))
        offset = end
    if offset != len(data):
        raise ModelFormatError(f"{path}: {len(data) - offset} trailing bytes after layer {depth}")
    return DenoiseNetModel(config, layers)


def save_decomposition(decomposition: NoiseDecomposition, out_dir: str | Path) -> list[Path]:
    """One TNSR dump per layer plus ``index.csv`` (layer, file, shape)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    rows = []
    for i, residual in enumerate(decomposition.residuals, start=1):
        target = out_dir / f"residual_{i:02d}.tnsr"
        dump_tensor(np.asarray(residual, dtype=np.float32), target)
        written.append(target)
        rows.append((i, target.name, "x".join(str(n) for n in residual.shape)))
    index = out_dir / "index.csv"
    pd.DataFrame(rows, columns=["layer", "file", "shape"]).to_csv(index, index=False, lineterminator="\n")
    written.append(index)
    log.info("wrote %d residual dumps to %s", decomposition.depth, out_dir)
    return written
