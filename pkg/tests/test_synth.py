import numpy as np
import pytest

from denoisenet.data import load_dataset
from denoisenet.errors import ConfigError
from denoisenet.synth import KINDS, is_on_grid, make_dataset, synth_image, write_synthetic_dataset


@pytest.mark.parametrize("kind", KINDS)
def test_images_are_8bit_and_deterministic(kind):
    image = synth_image(kind, 32, 1, 0)
    assert image.shape == (32, 32)
    assert image.dtype == np.float32
    assert is_on_grid(image)
    assert image.min() >= -0.5 and image.max() <= 0.5
    assert np.array_equal(image, synth_image(kind, 32, 1, 0))
    assert not np.array_equal(image, synth_image(kind, 32, 1, 1))


def test_image_independent_of_count():
    assert np.array_equal(make_dataset("disks", 5, 16, 2)[3], make_dataset("disks", 9, 16, 2)[3])


def test_images_have_structure():
    for kind in KINDS:
        assert np.std(synth_image(kind, 64, 3, 0)) > 0.02


def test_unknown_kind_and_bad_sizes():
    with pytest.raises(ConfigError):
        synth_image("clouds", 8, 0, 0)
    with pytest.raises(ConfigError):
        make_dataset("shapes", 0, 8, 0)


def test_write_dataset(tmp_path):
    manifest = write_synthetic_dataset("stripes", 4, 16, 0, tmp_path, "stripes")
    assert manifest == tmp_path / "manifest.tsv"
    dataset = load_dataset(manifest)
    assert [item.image_id for item in dataset] == [f"stripes_{i:04d}" for i in range(4)]
    assert {item.class_label for item in dataset} == {"stripes"}
    for item, image in zip(dataset, make_dataset("stripes", 4, 16, 0)):
        assert np.array_equal(item.image, image)
