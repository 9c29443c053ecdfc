"""Dense tensors and the convolution/activation primitives.

A Tensor is a numpy array laid out batch-outermost, channels-innermost
(B, H, W, C), float32 unless a caller deliberately passes float64 (the
gradient checks do). Every function here is pure.

Summation order of conv2d: each output value is computed as one dot product
over the im2col column axis, ordered (in_channel, ky, kx) with kx fastest,
evaluated per sample by numpy's matmul; the bias is added after the dot
product. Weight and bias gradients are formed per sample and folded in
ascending batch order. Results are therefore bit-reproducible for a given
numpy/BLAS build and do not depend on the worker count.
"""

import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, TypeVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, TensorFormatError

Tensor = np.ndarray
Padding = Literal["zero-same", "valid"]

KERNEL_SIZE = 3
TENSOR_MAGIC = b"TNSR"

T = TypeVar("T")

_num_threads = 1
_pool: ThreadPoolExecutor | None = None
_pool_lock = threading.Lock()


# =============================================================================
# Worker pool
# =============================================================================

def set_num_threads(n: int) -> None:
    """Cap the per-sample worker pool. ``n=1`` runs everything inline."""
    global _num_threads, _pool
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    with _pool_lock:
        if n != _num_threads and _pool is not None:
            _pool.shutdown(wait=True)
            _pool = None
        _num_threads = n


def get_num_threads() -> int:
    return _num_threads


def _shared_pool() -> ThreadPoolExecutor:
    global _pool
    with _pool_lock:
        if _pool is None:
            _pool = ThreadPoolExecutor(max_workers=_num_threads, thread_name_prefix="denoisenet")
        return _pool


def map_ordered(fn: Callable[[int], T], count: int) -> list[T]:
    """Evaluate ``fn(i)`` for ``i < count``; results always come back in index order."""
    if _num_threads == 1 or count < 2:
        return [fn(i) for i in range(count)]
    return list(_shared_pool().map(fn, range(count)))


# =============================================================================
# Kernels
# =============================================================================

@dataclass
class ConvKernel:
    """3x3 convolution weights (out, in, 3, 3) and bias (out,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w, b = self.weights, self.bias
        if w.ndim != 4 or w.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
            raise ShapeError(f"kernel weights must be (out, in, 3, 3), got {w.shape}")
        if w.shape[0] < 1 or w.shape[1] < 1:
            raise ShapeError(f"kernel needs at least one input and output channel, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match weights {w.shape}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size

    def copy(self) -> "ConvKernel":
        return ConvKernel(self.weights.copy(), self.bias.copy())

    def astype(self, dtype) -> "ConvKernel":
        return ConvKernel(self.weights.astype(dtype), self.bias.astype(dtype))

    @classmethod
    def zeros(cls, out_channels: int, in_channels: int, dtype=np.float32) -> "ConvKernel":
        return cls(
            np.zeros((out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE), dtype=dtype),
            np.zeros(out_channels, dtype=dtype),
        )


def check_tensor(x: Tensor, name: str = "tensor") -> None:
    if not isinstance(x, np.ndarray):
        raise ShapeError(f"{name} must be a numpy array, got {type(x).__name__}")
    if not 1 <= x.ndim <= 4:
        raise ShapeError(f"{name} must have rank 1..4, got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty extent: {x.shape}")


def conv_output_shape(shape: tuple[int, ...], kernel: ConvKernel, padding: Padding) -> tuple[int, int, int, int]:
    if len(shape) != 4:
        raise ShapeError(f"conv2d input must be BHWC, got shape {shape}")
    batch, height, width, channels = shape
    if channels != kernel.in_channels:
        raise ShapeError(
            f"input shape {shape} has {channels} channels but kernel shape "
            f"{kernel.weights.shape} expects {kernel.in_channels}"
        )
    if padding == "zero-same":
        return batch, height, width, kernel.out_channels
    if padding == "valid":
        if height < KERNEL_SIZE or width < KERNEL_SIZE:
            raise ShapeError(f"valid convolution needs H, W >= 3, got input shape {shape}")
        return batch, height - 2, width - 2, kernel.out_channels
    raise ShapeError(f"unknown padding {padding!r}")


def _columns(sample: np.ndarray, padding: Padding) -> tuple[np.ndarray, tuple[int, ...]]:
    src = np.pad(sample, ((1, 1), (1, 1), (0, 0))) if padding == "zero-same" else sample
    windows = sliding_window_view(src, (KERNEL_SIZE, KERNEL_SIZE), axis=(0, 1))
    out_h, out_w = windows.shape[:2]
    return windows.reshape(out_h * out_w, -1), src.shape


# =============================================================================
# Convolution
# =============================================================================

def conv2d(x: Tensor, kernel: ConvKernel, padding: Padding = "zero-same") -> Tensor:
    """Stride-1 3x3 cross-correlation plus bias (no kernel flip)."""
    check_tensor(x, "conv2d input")
    batch, out_h, out_w, out_c = conv_output_shape(x.shape, kernel, padding)
    wmat = kernel.weights.reshape(out_c, -1)

    def one(n: int) -> np.ndarray:
        cols, _ = _columns(x[n], padding)
        return (cols @ wmat.T + kernel.bias).reshape(out_h, out_w, out_c)

    return np.stack(map_ordered(one, batch))


def conv2d_backward(
    x: Tensor,
    kernel: ConvKernel,
    grad_out: Tensor,
    padding: Padding = "zero-same",
    input_grad: bool = True,
) -> tuple[Tensor | None, np.ndarray, np.ndarray]:
    """Adjoints of :func:`conv2d` for input, weights and bias.

    With ``input_grad=False`` the input gradient is skipped and ``None`` is
    returned in its place (the first network layer never needs it).
    """
    check_tensor(x, "conv2d input")
    expected = conv_output_shape(x.shape, kernel, padding)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match conv2d output shape {expected}")
    batch, out_h, out_w, out_c = expected
    wmat = kernel.weights.reshape(out_c, -1)
    in_c = kernel.in_channels

    def one(n: int):
        cols, src_shape = _columns(x[n], padding)
        g = grad_out[n].reshape(out_h * out_w, out_c)
        gw = g.T @ cols
        gb = g.sum(axis=0)
        if not input_grad:
            return None, gw, gb
        dcols = (g @ wmat).reshape(out_h, out_w, in_c, KERNEL_SIZE, KERNEL_SIZE)
        dsrc = np.zeros(src_shape, dtype=dcols.dtype)
        for ky in range(KERNEL_SIZE):
            for kx in range(KERNEL_SIZE):
                dsrc[ky:ky + out_h, kx:kx + out_w, :] += dcols[:, :, :, ky, kx]
        if padding == "zero-same":
            dsrc = dsrc[1:-1, 1:-1, :]
        return dsrc, gw, gb

    parts = map_ordered(one, batch)
    grad_w = parts[0][1]
    grad_b = parts[0][2]
    for _, gw, gb in parts[1:]:
        grad_w = grad_w + gw
        grad_b = grad_b + gb
    grad_x = np.stack([p[0] for p in parts]) if input_grad else None
    return grad_x, grad_w.reshape(kernel.weights.shape), grad_b


# =============================================================================
# Activations and padding
# =============================================================================

def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    # gradient at exactly 0 is 0
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu_backward shapes differ: {x.shape} vs {grad_out.shape}")
    return np.where(x > 0, grad_out, np.zeros((), dtype=grad_out.dtype))


def symmetric_pad(image: Tensor, border: int) -> Tensor:
    """Edge-inclusive mirror padding of the two leading (spatial) axes.

    The pixel at distance d outside the image takes the value at distance
    d - 1 inside, so edge pixels repeat: ``[a, b, c]`` with border 1 becomes
    ``[a, a, b, c, c]``.
    """
    check_tensor(image, "image")
    if border < 0:
        raise ShapeError(f"pad border must be >= 0, got {border}")
    if image.ndim < 2:
        raise ShapeError(f"symmetric_pad needs an HW or HWC image, got shape {image.shape}")
    height, width = image.shape[:2]
    if height < border or width < border:
        raise ShapeError(f"pad border {border} exceeds image extent {height}x{width}")
    if border == 0:
        return image.copy()
    widths = [(border, border), (border, border)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, widths, mode="symmetric")


def crop_border(image: Tensor, border: int) -> Tensor:
    """Remove ``border`` pixels from each side of the two leading axes."""
    if border == 0:
        return image
    return image[border:-border, border:-border, ...]


# =============================================================================
# Raw tensor dumps ("TNSR")
# =============================================================================

def dump_tensor(x: Tensor, path: str | Path) -> None:
    """Write magic, u32 rank, u32 extents, then the f32 payload, little-endian."""
    check_tensor(x)
    header = TENSOR_MAGIC + struct.pack(f"<I{x.ndim}I", x.ndim, *x.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(x, dtype="<f4").tobytes())


def load_tensor(path: str | Path) -> Tensor:
    data = Path(path).read_bytes()
    if data[:4] != TENSOR_MAGIC:
        raise TensorFormatError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 8:
        raise TensorFormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", data, 4)
    if not 1 <= rank <= 4 or len(data) < 8 + 4 * rank:
        raise TensorFormatError(f"{path}: bad rank {rank}")
    shape = struct.unpack_from(f"<{rank}I", data, 8)
    payload = data[8 + 4 * rank:]
    count = int(np.prod(shape))
    if len(payload) != 4 * count:
        raise TensorFormatError(f"{path}: payload has {len(payload)} bytes, expected {4 * count}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
