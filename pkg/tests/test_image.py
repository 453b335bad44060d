import numpy as np
import pytest

from glassesim.errors import DomainError
from glassesim.image import (LinearImage, RawImage, bayer_channel_masks,
                             read_pfm, read_png16, srgb_decode, srgb_encode,
                             write_pfm, write_png16, write_preview_png)


def test_linear_image_validation():
    with pytest.raises(DomainError):
        LinearImage(np.full((4, 4), -0.1))
    with pytest.raises(DomainError):
        LinearImage(np.full((4, 4), np.nan))
    with pytest.raises(DomainError):
        LinearImage(np.zeros((4, 4, 2)))
    img = LinearImage(np.zeros((4, 6, 3)))
    assert (img.height, img.width, img.channels) == (4, 6, 3)


def test_luminance_weights():
    v = np.zeros((2, 2, 3))
    v[..., 1] = 1.0
    assert np.allclose(LinearImage(v).luminance(), 0.7152)


def test_raw_image_validation():
    with pytest.raises(DomainError):
        RawImage(np.zeros((3, 4)))
    with pytest.raises(DomainError):
        RawImage(np.full((4, 4), 1.5))
    with pytest.raises(DomainError):
        RawImage(np.zeros((4, 4)), bayer_pattern="RGBG")


def test_bayer_masks_partition():
    for pattern in ("RGGB", "BGGR", "GRBG", "GBRG"):
        masks = bayer_channel_masks(pattern, (6, 6))
        total = masks["R"].astype(int) + masks["G"].astype(int) + masks["B"].astype(int)
        assert np.all(total == 1)
        assert masks["G"].sum() == 18  # green covers half the sites
    rggb = bayer_channel_masks("RGGB", (4, 4))
    assert rggb["R"][0, 0] and rggb["G"][0, 1] and rggb["G"][1, 0] and rggb["B"][1, 1]


def test_srgb_round_trip():
    x = np.linspace(0.0, 1.0, 101)
    assert np.allclose(srgb_decode(srgb_encode(x)), x, atol=1e-12)
    assert srgb_encode(np.array([0.0]))[0] == 0.0
    assert srgb_encode(np.array([1.0]))[0] == pytest.approx(1.0)


def test_png16_round_trip_linear(tmp_path):
    rng = np.random.default_rng(0)
    img = LinearImage(rng.random((16, 20, 3)))
    path = tmp_path / "img.png"
    write_png16(path, img)
    back = read_png16(path)
    assert isinstance(back, LinearImage)
    assert np.max(np.abs(back.values - img.values)) <= 0.5 / 65535 + 1e-9


def test_png16_round_trip_raw(tmp_path):
    rng = np.random.default_rng(1)
    raw = RawImage(rng.random((16, 16)), bayer_pattern="GRBG", bit_depth=12)
    path = tmp_path / "raw.png"
    write_png16(path, raw)
    back = read_png16(path)
    assert isinstance(back, RawImage)
    assert back.bayer_pattern == "GRBG"
    assert back.bit_depth == 12
    assert np.max(np.abs(back.values - raw.values)) <= 0.5 / 65535 + 1e-9


def test_preview_png(tmp_path):
    img = LinearImage(np.full((8, 8, 3), 0.5))
    path = tmp_path / "p.png"
    write_preview_png(path, img)
    assert path.exists()
    back = read_png16(path)  # 8-bit path
    want = srgb_encode(np.array(0.5))
    assert back.values[0, 0, 0] == pytest.approx(float(want), abs=1 / 255)


def test_pfm_round_trip(tmp_path):
    depth = np.array([[1.0, 2.5], [np.inf, 0.25]], dtype=np.float32)
    path = tmp_path / "d.pfm"
    write_pfm(path, depth)
    back = read_pfm(path)
    assert np.array_equal(back, depth)
    with pytest.raises(DomainError):
        write_pfm(tmp_path / "bad.pfm", np.zeros((2, 2, 3)))
