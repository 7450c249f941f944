import os

import numpy as np
import pytest

from noisydeblur.fileio import write_png
from noisydeblur.synthesis import build_dataset, make_scene


def voronoi_texture(size: int, seed: int, points: int = 40, levels: int = 4):
    """Piecewise-constant cell texture; strong edges, dense spectrum."""
    rng = np.random.default_rng(seed)
    pts = rng.random((points, 2)) * size
    vals = rng.integers(0, levels, points) / (levels - 1)
    yy, xx = np.mgrid[0:size, 0:size]
    d = (yy[..., None] - pts[:, 0]) ** 2 + (xx[..., None] - pts[:, 1]) ** 2
    return vals[np.argmin(d, axis=-1)]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Eight 32x32 samples with a manifest, shared across tests."""
    root = tmp_path_factory.mktemp("tiny")
    sharp_dir = root / "sharp_src"
    sharp_dir.mkdir()
    for i in range(8):
        write_png(sharp_dir / f"{i:02d}.png", make_scene(32, [500, i]))
    out = root / "ds"
    build_dataset(sharp_dir, out, count=8, seed=11, size=32, l_min=3, l_max=4)
    return os.path.join(out, "manifest.csv")


DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
