"""Tests for the baseline pixel decoder, PSNR/SSIM and raster export."""

import io
import math
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from rstcrypt.bitstream import parse
from rstcrypt.cipher import encrypt
from rstcrypt.config import get_settings
from rstcrypt.errors import DimensionMismatch
from rstcrypt.pixels import RasterImage, _idct_islow, _range_limit, decode_pixels, export, psnr, quality, ssim
from rstcrypt.schemas import EncryptionRecipe

from conftest import SUBSAMPLING_420, SUBSAMPLING_444, synthetic_rgb


def _pillow(data: bytes) -> np.ndarray:
    arr = np.asarray(Image.open(io.BytesIO(data))).astype(np.int16)
    return arr if arr.ndim == 3 else arr[:, :, None]


def test_flat_image_decodes_uniform(flat_gray_jpeg: bytes) -> None:
    img = decode_pixels(parse(flat_gray_jpeg))
    assert (img.width, img.height, img.channels) == (16, 16, 1)
    assert np.unique(img.samples).tolist() == [128]


def test_gray_matches_pillow(gray_jpeg: bytes) -> None:
    img = decode_pixels(parse(gray_jpeg))
    diff = np.abs(img.samples.astype(np.int16) - _pillow(gray_jpeg))
    assert diff.max() <= 1


@pytest.mark.parametrize("fixture", ["color_jpeg", "jpeg_444", "odd_jpeg"])
def test_color_fixtures_match_pillow(fixture: str, request) -> None:
    data = request.getfixturevalue(fixture)
    diff = np.abs(decode_pixels(parse(data)).samples.astype(np.int16) - _pillow(data))
    assert diff.max() <= 1


@pytest.mark.parametrize("seed", range(20))
def test_generated_color_images_match_pillow(make_jpeg, seed: int) -> None:
    width = 40 + 8 * (seed % 6) + seed % 5
    height = 24 + 8 * (seed % 4) + seed % 3
    subsampling = SUBSAMPLING_444 if seed % 4 == 3 else SUBSAMPLING_420
    data = make_jpeg(width, height, seed=seed, subsampling=subsampling)
    diff = np.abs(decode_pixels(parse(data)).samples.astype(np.int16) - _pillow(data))
    assert diff.max() <= 1


def test_float_idct_stays_close(color_jpeg: bytes) -> None:
    jpeg = parse(color_jpeg)
    exact = decode_pixels(jpeg, idct="float").samples.astype(np.int16)
    integer = decode_pixels(jpeg, idct="islow").samples.astype(np.int16)
    diff = np.abs(exact - integer)
    assert diff.max() <= 4
    assert diff.mean() < 1.0


def test_idct_method_setting(color_jpeg: bytes) -> None:
    jpeg = parse(color_jpeg)
    Path("rstcrypt.toml").write_text('idct_method = "float"\n')
    get_settings.cache_clear()
    assert decode_pixels(jpeg) == decode_pixels(jpeg, idct="float")


def test_islow_dc_only_block() -> None:
    natural = np.zeros((1, 1, 8, 8), dtype=np.int64)
    natural[..., 0, 0] = 80
    assert np.unique(_idct_islow(natural)).tolist() == [138]


def test_range_limit_clamps_and_wraps() -> None:
    x = np.array([-1, 0, 127, 200, 511, 512, -128, -129, -300, 1024])
    assert _range_limit(x).tolist() == [127, 128, 255, 255, 255, 0, 0, 0, 0, 128]


def test_decoder_ignores_restart_markers(color_jpeg: bytes, at_ri) -> None:
    assert decode_pixels(at_ri(color_jpeg, 2)) == decode_pixels(parse(color_jpeg))


def test_decodes_encrypted_file(color_jpeg: bytes, at_ri, keys) -> None:
    jpeg = at_ri(color_jpeg, 2)
    enc = encrypt(jpeg, EncryptionRecipe(ri=2, k1=keys[0], k2=keys[1]))
    img = decode_pixels(enc)
    assert (img.width, img.height, img.channels) == (96, 64, 3)
    assert img != decode_pixels(jpeg)


def test_psnr_values() -> None:
    black = RasterImage.from_array(np.zeros((8, 8, 3), dtype=np.uint8))
    white = RasterImage.from_array(np.full((8, 8, 3), 255, dtype=np.uint8))
    assert psnr(black, black) == math.inf
    assert psnr(black, white) == pytest.approx(0.0)

    a = RasterImage.from_array(synthetic_rgb(32, 32, 1))
    b = RasterImage.from_array(synthetic_rgb(32, 32, 2))
    assert psnr(a, b) == pytest.approx(psnr(b, a))


def test_metrics_reject_shape_mismatch() -> None:
    a = RasterImage.from_array(np.zeros((8, 8, 3), dtype=np.uint8))
    b = RasterImage.from_array(np.zeros((8, 9, 3), dtype=np.uint8))
    with pytest.raises(DimensionMismatch):
        psnr(a, b)
    with pytest.raises(DimensionMismatch):
        ssim(a, b)


def test_ssim_values() -> None:
    arr = synthetic_rgb(48, 40, 4)
    a = RasterImage.from_array(arr)
    assert ssim(a, a) == 1.0
    assert ssim(a, RasterImage.from_array(255 - arr)) < 0.0

    noisy = np.clip(arr.astype(np.int16) + np.random.default_rng(0).integers(-20, 21, arr.shape), 0, 255)
    b = RasterImage.from_array(noisy.astype(np.uint8))
    s = ssim(a, b)
    assert 0.0 < s < 1.0
    assert s == pytest.approx(ssim(b, a))

    score = quality(a, b)
    assert score.ssim == pytest.approx(s)
    assert score.psnr_db > 0


def test_raster_validation() -> None:
    with pytest.raises(ValueError):
        RasterImage(width=2, height=2, channels=2, samples=np.zeros((2, 2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        RasterImage(width=3, height=2, channels=1, samples=np.zeros((2, 2, 1), dtype=np.uint8))


@pytest.mark.parametrize("fmt", ["png", "pgm", "ppm"])
def test_export_formats(tmp_path, fmt: str) -> None:
    img = RasterImage.from_array(synthetic_rgb(24, 16, 9))
    path = export(img, tmp_path / "nested" / f"out.{fmt}", fmt)
    back = Image.open(path)
    assert back.size == (24, 16)
    assert back.mode == ("L" if fmt == "pgm" else "RGB")
    if fmt != "pgm":
        assert np.array_equal(np.asarray(back), img.samples)


def test_export_gray_to_ppm(tmp_path) -> None:
    img = RasterImage.from_array(np.full((4, 4), 77, dtype=np.uint8))
    back = np.asarray(Image.open(export(img, tmp_path / "g.ppm", "ppm")))
    assert back.shape == (4, 4, 3)
    assert (back == 77).all()
