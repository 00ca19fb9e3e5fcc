import numpy as np
import pytest

from cellgrade import data, png


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """120-image synthetic dataset shared by fast integration tests."""
    root = tmp_path_factory.mktemp("synth_small")
    data.synth_generate(root, 120, 0.5, 48, seed=99)
    return root


def write_png(path, pixels: np.ndarray) -> None:
    path.write_bytes(png.encode_rgb8(pixels.astype(np.uint8)))


@pytest.fixture
def solid_png(tmp_path):
    """Factory for single-color PNG files."""

    def make(name, rgb, size=(6, 6)):
        h, w = size
        pixels = np.zeros((h, w, 3), dtype=np.uint8)
        pixels[:] = rgb
        p = tmp_path / name
        write_png(p, pixels)
        return p

    return make
