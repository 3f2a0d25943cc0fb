"""Pytest configuration and shared fixtures.

Test JPEGs are made on the fly by Pillow's libjpeg (baseline, quality 80,
standard Huffman tables) from deterministic synthetic images, so no binary
fixtures live in the repository.
"""

import io
from typing import Callable

import numpy as np
import pytest
from PIL import Image

from rstcrypt.bitstream import parse
from rstcrypt.config import get_settings
from rstcrypt.entropy import build_tables, restructure
from rstcrypt.schemas import SegmentedJpeg

SUBSAMPLING_420 = 2
SUBSAMPLING_444 = 0


def synthetic_rgb(width: int, height: int, seed: int = 0) -> np.ndarray:
    """Smooth gradients, a sharp-edged disc and mild noise: enough texture for every byte class."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.stack(
        [
            128 + 90 * np.sin(x / 9 + seed) * np.cos(y / 13),
            100 + 0.8 * x + 60 * np.cos((x + y) / 17),
            180 - 0.9 * y + 40 * np.sin(x * y / 400),
        ],
        axis=-1,
    )
    disc = (x - width * 0.6) ** 2 + (y - height * 0.4) ** 2 < (min(width, height) * 0.25) ** 2
    img[disc] = [230, 40, 60]
    img += rng.normal(0, 6, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def encode_jpeg(arr: np.ndarray, quality: int = 80, subsampling: int = SUBSAMPLING_420, **kwargs) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="JPEG", quality=quality, subsampling=subsampling, optimize=False, **kwargs)
    return buf.getvalue()


@pytest.fixture(autouse=True)
def _fresh_settings(monkeypatch: pytest.MonkeyPatch, tmp_path_factory: pytest.TempPathFactory):
    """Run every test away from any rstcrypt.toml and with uncached settings."""
    monkeypatch.chdir(tmp_path_factory.mktemp("cwd"))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def make_jpeg() -> Callable[..., bytes]:
    """Factory: make_jpeg(width, height, seed=0, subsampling=2, gray=False) -> JPEG bytes."""

    def _make(width: int, height: int, seed: int = 0, subsampling: int = SUBSAMPLING_420, gray: bool = False) -> bytes:
        arr = synthetic_rgb(width, height, seed)
        if gray:
            arr = np.asarray(Image.fromarray(arr).convert("L"))
        return encode_jpeg(arr, subsampling=subsampling)

    return _make


@pytest.fixture
def at_ri() -> Callable[[bytes, int], SegmentedJpeg]:
    """Factory: parse JPEG bytes and restructure them to a restart interval."""

    def _at(data: bytes, ri: int) -> SegmentedJpeg:
        jpeg = parse(data)
        return restructure(jpeg, build_tables(jpeg), ri)

    return _at


@pytest.fixture
def color_jpeg(make_jpeg) -> bytes:
    """96x64, 4:2:0: 6x4 = 24 MCUs."""
    return make_jpeg(96, 64)


@pytest.fixture
def odd_jpeg(make_jpeg) -> bytes:
    """100x70, 4:2:0: 7x5 = 35 MCUs, partial MCUs on both edges."""
    return make_jpeg(100, 70, seed=3)


@pytest.fixture
def jpeg_444(make_jpeg) -> bytes:
    """64x48, 4:4:4: 8x6 = 48 MCUs of one block per component."""
    return make_jpeg(64, 48, seed=5, subsampling=SUBSAMPLING_444)


@pytest.fixture
def gray_jpeg(make_jpeg) -> bytes:
    """40x24 grayscale: 5x3 = 15 single-block MCUs."""
    return make_jpeg(40, 24, seed=7, gray=True)


@pytest.fixture
def flat_gray_jpeg() -> bytes:
    """16x16 mid-gray: DC only, no AC coefficients."""
    return encode_jpeg(np.full((16, 16), 128, dtype=np.uint8))


@pytest.fixture
def keys() -> tuple[bytes, bytes]:
    return bytes(range(48)), bytes(range(100, 148))
