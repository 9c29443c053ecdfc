"""Exception hierarchy shared by every denoisenet module."""


class DenoiseNetError(Exception):
    """Base class for all errors raised by denoisenet."""


class ShapeError(DenoiseNetError, ValueError):
    """A tensor, kernel or image does not have the shape an operation needs."""


class ConfigError(DenoiseNetError, ValueError):
    """Invalid hyperparameters, paths or configuration/model mismatch."""


class ModelFormatError(DenoiseNetError, ValueError):
    """A DNET model file could not be decoded."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedPayloadError(ModelFormatError):
    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class TensorFormatError(DenoiseNetError, ValueError):
    """A raw TNSR tensor dump could not be decoded."""


class ImageFormatError(DenoiseNetError, ValueError):
    """Unsupported image container, mode or bit depth."""


class ScoreTableError(DenoiseNetError, ValueError):
    """A PSNR score table is ragged or lacks class labels."""


class TrainingDivergedError(DenoiseNetError, ArithmeticError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step}: loss={loss!r}")
        self.step = step
        self.loss = loss
