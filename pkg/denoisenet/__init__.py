"""DenoiseNet: residual CNN denoising with per-layer noise decomposition."""

__version__ = "1.0.0"
