import numpy as np
import pytest

import voxsynth.autodiff as ad
from voxsynth import imageio


def test_pfm_round_trip_exact_float32(tmp_path):
    rng = ad.make_rng(1)
    depth = rng.uniform(1.0, 3.0, size=(9, 7)).astype(np.float32).astype(np.float64)
    path = tmp_path / "d.pfm"
    imageio.save_pfm(path, depth)
    np.testing.assert_array_equal(imageio.load_pfm(path), depth)
    # header carries the little-endian scale marker
    head = path.read_bytes()[:20]
    assert head.startswith(b"Pf\n7 9\n-1.0\n")


def test_pgm_quantization_and_round_trip(tmp_path):
    vals = np.array([[0.0, 1.0], [0.5, 0.25]])
    path = tmp_path / "m.pgm"
    imageio.save_pgm(path, vals)
    back = imageio.load_pgm(path)
    assert back[0, 0] == 0.0 and back[0, 1] == 1.0
    assert abs(back[1, 0] - 0.5) <= 1 / 255
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert raw[-4:] == bytes([0, 255, 128, 64])


def test_ppm_round_trip_channel_orders(tmp_path):
    rng = ad.make_rng(2)
    img_hwc = rng.random((5, 4, 3))
    p1 = tmp_path / "a.ppm"
    p2 = tmp_path / "b.ppm"
    imageio.save_ppm(p1, img_hwc)
    imageio.save_ppm(p2, np.moveaxis(img_hwc, -1, 0))  # (3, H, W) accepted too
    assert p1.read_bytes() == p2.read_bytes()
    back = imageio.load_ppm(p1)
    assert back.shape == (5, 4, 3)
    assert np.max(np.abs(back - img_hwc)) <= 0.5 / 255 + 1e-12


def test_writers_deterministic(tmp_path):
    data = np.linspace(0, 1, 12).reshape(3, 4)
    a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
    imageio.save_pgm(a, data)
    imageio.save_pgm(b, data)
    assert a.read_bytes() == b.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "x.pgm"
    path.write_bytes(b"P4\n2 2\n255\n....")
    with pytest.raises(imageio.ImageFormatError, match="magic"):
        imageio.load_pgm(path)
    with pytest.raises(imageio.ImageFormatError, match="magic"):
        imageio.load_pfm(path)
