"""Image ingestion, normalization, noise synthesis, patch sampling and splits.

Images are 2-D float32 arrays (H, W) of luma values scaled and shifted from
[0, 255] to [-0.5, 0.5]. Inputs are 8-bit PNG (grayscale or RGB) or binary
PGM ("P5"); RGB is reduced with the BT.601 luma weights before scaling.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, ImageFormatError, ShapeError
from .rng import STREAM_NOISE, STREAM_SPLIT, STREAM_TRAIN, CounterRNG

log = logging.getLogger(__name__)

GrayImage = np.ndarray

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SUPPORTED_SUFFIXES = {".png": "PNG", ".pgm": "PPM"}
DEFAULT_SPLIT = (0.6, 0.2, 0.2)


# =============================================================================
# Normalization and file I/O
# =============================================================================

def normalize(values: np.ndarray) -> GrayImage:
    """Map 8-bit values (or any [0, 255] floats) onto [-0.5, 0.5]."""
    return (np.asarray(values, dtype=np.float64) / 255.0 - 0.5).astype(np.float32)


def denormalize(image: GrayImage) -> np.ndarray:
    """Map [-0.5, 0.5] back to the nearest 8-bit level."""
    levels = np.rint((np.asarray(image, dtype=np.float64) + 0.5) * 255.0)
    return np.clip(levels, 0, 255).astype(np.uint8)


def load_gray(path: str | Path) -> GrayImage:
    path = Path(path)
    try:
        img = Image.open(path)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: unsupported container ({exc})") from exc
    with img:
        if img.format not in ("PNG", "PPM"):
            raise ImageFormatError(f"{path}: unsupported container {img.format}")
        if img.format == "PPM":
            with path.open("rb") as f:
                magic = f.read(2)
            if magic != b"P5":
                raise ImageFormatError(f"{path} must be a binary PGM P5 bitmap, got {magic!r}")
        if img.mode == "L":
            return normalize(np.asarray(img))
        if img.mode == "RGB":
            rgb = np.asarray(img, dtype=np.float64)
            luma = rgb[..., 0] * LUMA_WEIGHTS[0] + rgb[..., 1] * LUMA_WEIGHTS[1] + rgb[..., 2] * LUMA_WEIGHTS[2]
            return normalize(luma)
        if img.mode in ("I", "I;16", "I;16B", "F"):
            raise ImageFormatError(f"{path}: unsupported bit depth (mode {img.mode}), expected 8-bit")
        raise ImageFormatError(f"{path}: unsupported image mode {img.mode}, expected L or RGB")


def save_gray(image: GrayImage, path: str | Path) -> Path:
    """Write an 8-bit grayscale PNG or binary PGM, chosen by suffix."""
    path = Path(path)
    fmt = SUPPORTED_SUFFIXES.get(path.suffix.lower())
    if fmt is None:
        raise ImageFormatError(f"{path}: unsupported container suffix {path.suffix!r}")
    if image.ndim == 3:
        image = image[..., 0]
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(denormalize(image)).save(path, format=fmt)
    return path


def list_images(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in SUPPORTED_SUFFIXES)


# =============================================================================
# Noise
# =============================================================================

def add_gaussian_noise(image: GrayImage, sigma: float, seed: int) -> GrayImage:
    """Additive white Gaussian noise, sigma on the 8-bit scale; not clamped."""
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    noise = CounterRNG(seed, STREAM_NOISE).normal(image.size).reshape(image.shape)
    return (image + noise * (sigma / 255.0)).astype(np.float32)


def add_quantized_noise(image: GrayImage, sigma: float, seed: int) -> GrayImage:
    """Noise on the [0, 255] scale, clipped, rounded half-to-even, renormalized."""
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    noise = CounterRNG(seed, STREAM_NOISE).normal(image.size).reshape(image.shape)
    values = (np.asarray(image, dtype=np.float64) + 0.5) * 255.0 + sigma * noise
    return normalize(np.rint(np.clip(values, 0.0, 255.0)))


# =============================================================================
# Patches
# =============================================================================

def flip_lr(image: GrayImage) -> GrayImage:
    return image[:, ::-1].copy()


def sample_patch(image: GrayImage, size: int, rng: CounterRNG, flip: bool | None = None) -> GrayImage:
    """Uniform random crop, mirrored left-right with probability 1/2.

    Three draws are always consumed (row, column, coin) so a forced ``flip``
    does not shift the rest of the sequence.
    """
    height, width = image.shape[:2]
    if height < size or width < size:
        raise ShapeError(f"image {height}x{width} is smaller than patch size {size}")
    top = rng.integers(height - size + 1)
    left = rng.integers(width - size + 1)
    coin = rng.random() < 0.5
    patch = image[top:top + size, left:left + size]
    if (coin if flip is None else flip):
        return flip_lr(patch)
    return patch.copy()


def sample_training_batch(
    images: Sequence[GrayImage], batch_size: int, patch_size: int, sigma: float, rng: CounterRNG
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (clean, noisy) BHW1 minibatches; the noise is left unclamped."""
    patches = []
    for _ in range(batch_size):
        source = images[rng.integers(len(images))]
        patches.append(sample_patch(source, patch_size, rng))
    clean = np.stack(patches)[..., None]
    noise = rng.normal(clean.size).reshape(clean.shape) * (sigma / 255.0)
    return clean, (clean + noise).astype(np.float32)


def iter_training_batches(
    images: Sequence[GrayImage], batch_size: int, patch_size: int, sigma: float, seed: int
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless, seed-determined stream of (clean, noisy) minibatches."""
    rng = CounterRNG(seed, STREAM_TRAIN)
    while True:
        yield sample_training_batch(images, batch_size, patch_size, sigma, rng)


# =============================================================================
# Manifests and splits
# =============================================================================

@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    class_label: str | None = None

    @property
    def image_id(self) -> str:
        return self.path.stem


@dataclass
class LabeledImage:
    image_id: str
    class_label: str | None
    image: GrayImage


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    fractions: tuple[float, float, float] = DEFAULT_SPLIT

    def part(self, name: str) -> tuple[str, ...]:
        if name not in ("train", "val", "test"):
            raise KeyError(name)
        return getattr(self, name)


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse ``path`` or ``path<TAB>class`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        columns = line.split("\t")
        if len(columns) > 2:
            raise ConfigError(f"{path}:{lineno}: expected 'path' or 'path<TAB>class', got {len(columns)} columns")
        image_path = Path(columns[0].strip())
        if not image_path.is_absolute():
            image_path = path.parent / image_path
        label = columns[1].strip() if len(columns) == 2 and columns[1].strip() else None
        entries.append(ManifestEntry(image_path, label))
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for entry in entries:
        try:
            shown = entry.path.relative_to(path.parent)
        except ValueError:
            shown = entry.path
        lines.append(f"{shown.as_posix()}\t{entry.class_label}" if entry.class_label else shown.as_posix())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_dataset(manifest: str | Path, class_label: str | None = None) -> list[LabeledImage]:
    """Load every manifest image, optionally only those of one class."""
    dataset = []
    seen = set()
    for entry in load_manifest(manifest):
        if class_label is not None and entry.class_label != class_label:
            continue
        if entry.image_id in seen:
            raise ConfigError(f"{manifest}: duplicate image id {entry.image_id!r}")
        seen.add(entry.image_id)
        dataset.append(LabeledImage(entry.image_id, entry.class_label, load_gray(entry.path)))
    log.info("loaded %d images from %s", len(dataset), manifest)
    return dataset


def split_dataset(ids: Sequence[str], fractions: Sequence[float] = DEFAULT_SPLIT, seed: int = 0) -> DatasetSplit:
    """Deterministic shuffle, then contiguous train/val/test partition.

    Val and test sizes are floored; the remainder goes to train.
    """
    if not ids:
        raise ConfigError("cannot split an empty id list")
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative values summing to 1, got {tuple(fractions)}")
    n = len(ids)
    n_val = int(np.floor(n * fractions[1] + 1e-9))
    n_test = int(np.floor(n * fractions[2] + 1e-9))
    n_train = n - n_val - n_test
    order = CounterRNG(seed, STREAM_SPLIT).permutation(n)
    shuffled = [ids[i] for i in order]
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train:n_train + n_val]),
        test=tuple(shuffled[n_train + n_val:]),
        fractions=tuple(float(f) for f in fractions),
    )
