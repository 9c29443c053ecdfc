"""Synthetic 8-bit grayscale datasets for desk-scale experiments.

Three kinds are available:

  shapes   piecewise-constant rectangles and ellipses over a linear gradient
  stripes  axis-aligned stripe textures (horizontal or vertical)
  disks    scattered disks of varying radius and intensity

Every image is quantized to the 256-level grid, like a decoded 8-bit file,
and is a pure function of (kind, seed, index, size).
"""

from pathlib import Path

import numpy as np

from .data import GrayImage, ManifestEntry, denormalize, normalize, save_gray, write_manifest
from .errors import ConfigError
from .rng import STREAM_SYNTH, CounterRNG

KINDS = ("shapes", "stripes", "disks")


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    return np.mgrid[0:size, 0:size].astype(np.float64)


def gradient(size: int, rng: CounterRNG) -> np.ndarray:
    """Linear ramp in a random direction, values on the [0, 255] scale."""
    yy, xx = _grid(size)
    angle = 2.0 * np.pi * rng.random()
    low, high = 40.0 + 60.0 * rng.random(), 150.0 + 60.0 * rng.random()
    t = (np.cos(angle) * xx + np.sin(angle) * yy) / size
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    return low + (high - low) * t


def rect(canvas: np.ndarray, y: int, x: int, h: int, w: int, value: float) -> None:
    size = canvas.shape[0]
    canvas[max(0, y):min(size, y + h), max(0, x):min(size, x + w)] = value


def ellipse(canvas: np.ndarray, cy: float, cx: float, ry: float, rx: float, value: float) -> None:
    yy, xx = _grid(canvas.shape[0])
    canvas[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = value


def shapes_image(size: int, rng: CounterRNG) -> np.ndarray:
    canvas = gradient(size, rng)
    for _ in range(3 + rng.integers(5)):
        value = 255.0 * rng.random()
        if rng.random() < 0.5:
            h, w = 4 + rng.integers(size // 2), 4 + rng.integers(size // 2)
            rect(canvas, rng.integers(size) - h // 2, rng.integers(size) - w // 2, h, w, value)
        else:
            ellipse(canvas, size * rng.random(), size * rng.random(),
                    3 + size / 4 * rng.random(), 3 + size / 4 * rng.random(), value)
    return canvas


def stripes_image(size: int, rng: CounterRNG) -> np.ndarray:
    yy, xx = _grid(size)
    axis = yy if rng.random() < 0.5 else xx
    period = 4 + rng.integers(9)
    phase = rng.integers(period)
    low = 30.0 + 80.0 * rng.random()
    high = low + 60.0 + 60.0 * rng.random()
    on = ((axis + phase) % period) < period / 2
    return np.where(on, high, low)


def disks_image(size: int, rng: CounterRNG) -> np.ndarray:
    canvas = np.full((size, size), 40.0 + 80.0 * rng.random())
    for _ in range(6 + rng.integers(10)):
        radius = 2 + (size / 6) * rng.random()
        ellipse(canvas, size * rng.random(), size * rng.random(), radius, radius, 255.0 * rng.random())
    return canvas


_BUILDERS = {"shapes": shapes_image, "stripes": stripes_image, "disks": disks_image}


def synth_image(kind: str, size: int, seed: int, index: int) -> GrayImage:
    if kind not in _BUILDERS:
        raise ConfigError(f"unknown synthetic kind {kind!r}, expected one of {', '.join(KINDS)}")
    # a fresh stream per image keeps images independent of how many came before
    rng = CounterRNG(seed * 1_000_003 + index, STREAM_SYNTH)
    levels = np.clip(np.rint(_BUILDERS[kind](size, rng)), 0, 255)
    return normalize(levels)


def make_dataset(kind: str, count: int, size: int, seed: int) -> list[GrayImage]:
    if count < 1 or size < 3:
        raise ConfigError(f"need count >= 1 and size >= 3, got count={count}, size={size}")
    return [synth_image(kind, size, seed, i) for i in range(count)]


def write_dataset(
    images: list[GrayImage], out_dir: str | Path, prefix: str, class_label: str | None = None
) -> list[ManifestEntry]:
    """Save ``<prefix>_NNNN.png`` files and return their manifest entries."""
    out_dir = Path(out_dir)
    entries = []
    for i, image in enumerate(images):
        path = save_gray(image, out_dir / f"{prefix}_{i:04d}.png")
        entries.append(ManifestEntry(path, class_label))
    return entries


def write_synthetic_dataset(kind: str, count: int, size: int, seed: int, out_dir: str | Path,
                            class_label: str | None = None) -> Path:
    """Generate, save and index one synthetic dataset; returns the manifest path."""
    images = make_dataset(kind, count, size, seed)
    entries = write_dataset(images, out_dir, kind, class_label)
    return write_manifest(entries, Path(out_dir) / "manifest.tsv")


def is_on_grid(image: GrayImage) -> bool:
    return bool(np.array_equal(normalize(denormalize(image)), image))
