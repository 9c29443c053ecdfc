"""Gradual-denoising diagnostics over a captured NoiseDecomposition.

The partial result after k layers is p_k = noisy + r_1 + ... + r_k, summed in
ascending layer order exactly as the forward pass does, so p_0 is the noisy
input and p_D is the network output bit for bit.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import matplotlib as mpl
import numpy as np
import pandas as pd
from PIL import Image

from . import plots
from .data import GrayImage, save_gray
from .errors import ConfigError, ShapeError
from .evaluate import rmse
from .model import INFERENCE_PAD, DenoiseNetModel, NoiseDecomposition, forward
from .tensor import crop_border, symmetric_pad

log = logging.getLogger(__name__)

LAYER_COLORMAP = "tab20"
DEEP_LAYER_COLORMAP = "turbo"
MAX_PALETTE_LAYERS = 256


@dataclass
class LayerTrace:
    noisy: GrayImage
    decomposition: NoiseDecomposition
    truth: GrayImage | None = None
    valid_border: int = 0
    residuals: list[GrayImage] = field(init=False)

    def __post_init__(self):
        self.residuals = [np.asarray(r).reshape(self.noisy.shape) for r in self.decomposition.residuals]
        if not self.residuals:
            raise ShapeError("trace needs at least one layer")
        if self.truth is not None and self.truth.shape != self.noisy.shape:
            raise ShapeError(f"truth shape {self.truth.shape} differs from noisy shape {self.noisy.shape}")

    @property
    def depth(self) -> int:
        return len(self.residuals)

    @cached_property
    def partials(self) -> list[GrayImage]:
        acc = self.noisy
        out = [acc]
        for r in self.residuals:
            acc = acc + r
            out.append(acc)
        return out

    def valid(self, image: np.ndarray) -> np.ndarray:
        return crop_border(image, self.valid_border)


def trace_image(model: DenoiseNetModel, noisy: GrayImage, truth: GrayImage | None = None,
                border: int = INFERENCE_PAD) -> LayerTrace:
    """Capture the decomposition through the symmetric-pad inference path."""
    if noisy.ndim != 2:
        raise ShapeError(f"trace_image expects an HW image, got shape {noisy.shape}")
    padded = symmetric_pad(noisy, border)[None, :, :, None].astype(model.dtype, copy=False)
    _, decomposition = forward(model, padded, capture=True)
    residuals = [crop_border(r[0], border)[..., 0] for r in decomposition.residuals]
    start = crop_border(padded[0], border)[..., 0]
    return LayerTrace(start, NoiseDecomposition(residuals), truth)


def partial_denoise(trace: LayerTrace, k: int) -> GrayImage:
    if not 0 <= k <= trace.depth:
        raise ConfigError(f"layer count k={k} outside 0..{trace.depth}")
    return trace.partials[k]


def layer_rmse_curve(trace: LayerTrace) -> np.ndarray:
    """RMSE(p_k, truth) for k = 0..D over the valid interior."""
    if trace.truth is None:
        raise ConfigError("layer_rmse_curve needs ground truth")
    truth = trace.valid(trace.truth)
    return np.array([rmse(trace.valid(p), truth) for p in trace.partials])


def monotone_fraction(curve: np.ndarray) -> float:
    """Share of consecutive steps where the curve does not increase."""
    steps = np.diff(np.asarray(curve, dtype=np.float64))
    if steps.size == 0:
        return 1.0
    return float(np.count_nonzero(steps <= 0) / steps.size)


def dominant_layer_map(trace: LayerTrace) -> np.ndarray:
    """1-based index of the layer with the largest |r_i| per pixel; ties go to the shallower layer."""
    magnitudes = np.abs(np.stack(trace.residuals))
    return np.argmax(magnitudes, axis=0).astype(np.int32) + 1


def layer_palette(depth: int) -> np.ndarray:
    """One RGB colour per layer, all distinct.

    Up to 20 layers use the qualitative map; deeper models sample a
    continuous map at ``depth`` points. The dominant-layer PNG is indexed,
    so at most 256 layers fit.
    """
    if not 1 <= depth <= MAX_PALETTE_LAYERS:
        raise ConfigError(f"dominant-layer map supports 1..{MAX_PALETTE_LAYERS} layers, got {depth}")
    qualitative = mpl.colormaps[LAYER_COLORMAP]
    if depth <= qualitative.N:
        colors = qualitative(np.arange(depth))[:, :3]
    else:
        colors = mpl.colormaps[DEEP_LAYER_COLORMAP](np.linspace(0.0, 1.0, depth))[:, :3]
    return np.rint(colors * 255).astype(np.uint8)


def display_scale(residual: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Min-max scale to 8 bits; returns (levels, offset, step) with value ~ offset + level * step."""
    lo, hi = float(residual.min()), float(residual.max())
    step = (hi - lo) / 255.0
    if step == 0.0:
        return np.zeros(residual.shape, dtype=np.uint8), lo, 0.0
    levels = np.rint((residual.astype(np.float64) - lo) / step)
    return np.clip(levels, 0, 255).astype(np.uint8), lo, step


def export_trace(trace: LayerTrace, out_dir: str | Path) -> list[Path]:
    """Residual and partial images, dominant-layer map and CSV sidecars.

    ``layers.csv`` carries, per layer, the display offset and step that
    invert the residual scaling plus the map colour of that layer.
    ``rmse.csv`` is written when the trace has ground truth.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create trace directory {out_dir}: {exc.strerror}") from exc

    written = []
    palette = layer_palette(trace.depth)
    rows = []
    for i, residual in enumerate(trace.residuals, start=1):
        levels, offset, step = display_scale(residual)
        target = out_dir / f"residual_{i:02d}.png"
        Image.fromarray(levels).save(target, format="PNG")
        written.append(target)
        rows.append((i, target.name, offset, step, *palette[i - 1].tolist()))
    for k, partial in enumerate(trace.partials):
        written.append(save_gray(np.clip(partial, -0.5, 0.5), out_dir / f"partial_{k:02d}.png"))

    layer_map = dominant_layer_map(trace)
    indexed = Image.fromarray((layer_map - 1).astype(np.uint8))
    indexed.putpalette(palette.reshape(-1).tolist())  # L -> P
    target = out_dir / "dominant_layer.png"
    indexed.save(target, format="PNG")
    written.append(target)

    sidecar = pd.DataFrame(rows, columns=["layer", "file", "offset", "step", "red", "green", "blue"])
    sidecar.to_csv(out_dir / "layers.csv", index=False, float_format="%.17g", lineterminator="\n")
    written.append(out_dir / "layers.csv")

    if trace.truth is not None:
        curve = layer_rmse_curve(trace)
        frame = pd.DataFrame({"layers": np.arange(trace.depth + 1), "rmse": curve})
        frame.to_csv(out_dir / "rmse.csv", index=False, float_format="%.17g", lineterminator="\n")
        written.append(out_dir / "rmse.csv")
        plots.curve_plot(curve, "layers applied", "RMSE", out_dir / "rmse.svg")
        log.info("RMSE %.5f -> %.5f over %d layers, %.0f%% of steps non-increasing",
                 curve[0], curve[-1], trace.depth, 100 * monotone_fraction(curve))
    return written
