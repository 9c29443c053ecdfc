import numpy as np
import pytest

from denoisenet.model import DenoiseNetModel, ModelConfig, init_model
from denoisenet.rng import CounterRNG
from denoisenet.tensor import ConvKernel, set_num_threads


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow toy-training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def single_thread():
    set_num_threads(1)
    yield
    set_num_threads(1)


def zero_model(depth: int, features: int, dtype=np.float32) -> DenoiseNetModel:
    config = ModelConfig(depth, features)
    return DenoiseNetModel(config, [ConvKernel.zeros(o, i, dtype) for o, i in config.layer_shapes()])


def random_model(depth: int, features: int, seed: int, scale: float = 0.3) -> DenoiseNetModel:
    """float64 model with nonzero biases, for gradient and oracle checks."""
    model = init_model(ModelConfig(depth, features), seed).astype(np.float64)
    rng = CounterRNG(seed, 99)
    params = [p + scale * rng.normal(p.size).reshape(p.shape) * (p.ndim == 1) for p in model.parameters()]
    return model.with_parameters(params)


def brute_conv(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, padding: str = "zero-same") -> np.ndarray:
    """Direct loops in float64; cross-correlation, no kernel flip."""
    x = np.asarray(x, dtype=np.float64)
    if padding == "zero-same":
        x = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    batch, height, width, in_c = x.shape
    out_c = weights.shape[0]
    out = np.zeros((batch, height - 2, width - 2, out_c))
    for n in range(batch):
        for y in range(height - 2):
            for xx in range(width - 2):
                for o in range(out_c):
                    acc = float(bias[o])
                    for c in range(in_c):
                        for ky in range(3):
                            for kx in range(3):
                                acc += float(weights[o, c, ky, kx]) * x[n, y + ky, xx + kx, c]
                    out[n, y, xx, o] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
