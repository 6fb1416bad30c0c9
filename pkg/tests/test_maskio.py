import numpy as np
import pytest

from stylegallery.clustering import ClusterMask
from stylegallery.errors import InvalidArgumentError
from stylegallery.maskio import (
    image_from_bytes,
    image_to_png_bytes,
    load_image,
    load_mask,
    save_image,
    save_mask,
)


def test_mask_round_trip_16bit(tmp_path):
    labels = np.arange(300 * 2).reshape(20, 30) % 300  # labels beyond uint8
    labels, n = np.unique(labels, return_inverse=True)[1].reshape(20, 30), 300
    mask = ClusterMask(image_id="big", labels=labels, n_clusters=n, provenance="auto")
    png = tmp_path / "mask.png"
    save_mask(mask, png, config={"k_max": 10})
    loaded, meta = load_mask(png)
    np.testing.assert_array_equal(loaded.labels, mask.labels)
    assert loaded.n_clusters == 300
    assert meta["config"]["k_max"] == 10
    assert meta["grid_shape"] == [20, 30]


def test_mask_sidecar_required(tmp_path):
    labels = np.zeros((4, 4), dtype=int)
    mask = ClusterMask(image_id="x", labels=labels, n_clusters=1)
    png = tmp_path / "m.png"
    save_mask(mask, png)
    png.with_suffix(".json").unlink()
    with pytest.raises(InvalidArgumentError):
        load_mask(png)


def test_image_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    px = rng.random((32, 32, 3))
    path = tmp_path / "img.png"
    save_image(px, path)
    rec = load_image(path)
    assert rec.id == "img"
    assert np.abs(rec.pixels - px).max() <= 1.0 / 255.0 + 1e-9


def test_image_bytes_round_trip():
    px = np.random.default_rng(1).random((16, 16, 3))
    rec = image_from_bytes(image_to_png_bytes(px), image_id="mem")
    assert rec.pixels.shape == (16, 16, 3)


def test_undecodable_bytes_rejected():
    with pytest.raises(InvalidArgumentError):
        image_from_bytes(b"garbage", image_id="bad")
