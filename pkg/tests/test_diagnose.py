import numpy as np
import pandas as pd
import pytest
from PIL import Image

from conftest import zero_model
from denoisenet.diagnose import (
    LayerTrace,
    display_scale,
    dominant_layer_map,
    export_trace,
    layer_palette,
    layer_rmse_curve,
    monotone_fraction,
    partial_denoise,
    trace_image,
)
from denoisenet.errors import ConfigError
from denoisenet.evaluate import rmse
from denoisenet.model import ModelConfig, NoiseDecomposition, forward, init_model
from denoisenet.tensor import crop_border, symmetric_pad


@pytest.fixture
def noisy():
    return np.random.default_rng(3).uniform(-0.4, 0.4, (24, 26)).astype(np.float32)


@pytest.fixture
def model():
    return init_model(ModelConfig(4, 3), 2)


def test_endpoints_are_bit_exact(model, noisy):
    trace = trace_image(model, noisy)
    assert np.array_equal(partial_denoise(trace, 0), noisy)
    padded = symmetric_pad(noisy, 21)[None, :, :, None]
    denoised, _ = forward(model, padded)
    assert np.array_equal(partial_denoise(trace, trace.depth), crop_border(denoised[0], 21)[..., 0])


def test_partials_telescope(model, noisy):
    trace = trace_image(model, noisy)
    for k in range(1, trace.depth + 1):
        assert np.array_equal(trace.partials[k], trace.partials[k - 1] + trace.residuals[k - 1])


def test_k_out_of_range(model, noisy):
    trace = trace_image(model, noisy)
    with pytest.raises(ConfigError):
        partial_denoise(trace, trace.depth + 1)
    with pytest.raises(ConfigError):
        partial_denoise(trace, -1)


def test_rmse_curve(model, noisy):
    truth = np.zeros_like(noisy)
    curve = layer_rmse_curve(trace_image(model, noisy, truth))
    assert len(curve) == 5
    assert curve[0] == rmse(noisy, truth)
    with pytest.raises(ConfigError, match="truth"):
        layer_rmse_curve(trace_image(model, noisy))


def test_zero_model_curve_is_constant(noisy):
    curve = layer_rmse_curve(trace_image(zero_model(3, 2), noisy, noisy))
    assert curve.tolist() == [0.0] * 4


def test_monotone_fraction():
    assert monotone_fraction([3.0, 2.0, 2.0, 2.5]) == pytest.approx(2 / 3)
    assert monotone_fraction([1.0]) == 1.0


def test_single_layer_map_is_ones(noisy):
    trace = trace_image(init_model(ModelConfig(1, 4), 0), noisy)
    assert np.all(dominant_layer_map(trace) == 1)


def test_hand_built_dominant_layer():
    residuals = [np.full((2, 2), 0.1) for _ in range(4)]
    residuals[2] = residuals[2].copy()
    residuals[2][0, 0] = -0.9
    trace = LayerTrace(np.zeros((2, 2)), NoiseDecomposition(residuals))
    layer_map = dominant_layer_map(trace)
    assert layer_map[0, 0] == 3
    assert layer_map[1, 1] == 1


def test_dominant_layer_matches_scan():
    rng = np.random.default_rng(8)
    for _ in range(10):
        residuals = [np.round(rng.standard_normal((5, 6)), 1) for _ in range(4)]
        layer_map = dominant_layer_map(LayerTrace(np.zeros((5, 6)), NoiseDecomposition(residuals)))
        for y in range(5):
            for x in range(6):
                magnitudes = [abs(r[y, x]) for r in residuals]
                assert layer_map[y, x] == magnitudes.index(max(magnitudes)) + 1


def test_display_scale_constant():
    levels, offset, step = display_scale(np.full((3, 3), 0.2))
    assert not levels.any() and offset == pytest.approx(0.2) and step == 0.0


@pytest.mark.parametrize("depth", [1, 5, 20, 21, 24, 40, 63])
def test_layer_colours_are_distinct(depth):
    palette = layer_palette(depth)
    assert palette.shape == (depth, 3) and palette.dtype == np.uint8
    assert len({tuple(rgb) for rgb in palette.tolist()}) == depth


@pytest.mark.parametrize("depth", [0, 257])
def test_layer_palette_rejects_unindexable_depth(depth):
    with pytest.raises(ConfigError, match="256"):
        layer_palette(depth)


def test_export_file_contract(tmp_path, model, noisy):
    trace = trace_image(model, noisy, np.zeros_like(noisy))
    export_trace(trace, tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert len([n for n in names if n.startswith("residual_")]) == 4
    assert len([n for n in names if n.startswith("partial_")]) == 5
    assert "dominant_layer.png" in names
    assert [n for n in names if n.endswith(".csv")] == ["layers.csv", "rmse.csv"]
    assert Image.open(tmp_path / "dominant_layer.png").mode == "P"


def test_sidecar_inverts_display_scaling(tmp_path, model, noisy):
    trace = trace_image(model, noisy)
    export_trace(trace, tmp_path)
    sidecar = pd.read_csv(tmp_path / "layers.csv")
    assert sidecar["layer"].tolist() == [1, 2, 3, 4]
    for row in sidecar.itertuples():
        levels = np.asarray(Image.open(tmp_path / row.file), dtype=np.float64)
        restored = row.offset + levels * row.step
        assert np.max(np.abs(restored - trace.residuals[row.layer - 1])) <= row.step / 2 + 1e-6


def test_export_is_deterministic(tmp_path, model, noisy):
    first = export_trace(trace_image(model, noisy, np.zeros_like(noisy)), tmp_path / "a")
    second = export_trace(trace_image(model, noisy, np.zeros_like(noisy)), tmp_path / "b")
    for a, b in zip(first, second):
        assert a.name == b.name
        assert a.read_bytes() == b.read_bytes()
