"""
Pixel decoding and image-quality metrics.

The decoder exists for analysis only: it reuses the entropy walk, dequantizes,
runs libjpeg's integer "islow" IDCT (or an exact floating-point one), upsamples
4:2:0 chroma with the triangular filter libjpeg uses by default, and converts
JFIF YCbCr to RGB in libjpeg's fixed point. With the integer IDCT the output
agrees with libjpeg-based decoders such as Pillow's.

Metrics:
- PSNR over all RGB samples jointly; inf for identical images.
- SSIM on luma (0.299 R + 0.587 G + 0.114 B) with a uniform sliding window.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from PIL import Image
from scipy.fft import idctn

from rstcrypt.config import IdctMethod, get_settings
from rstcrypt.entropy import ZIGZAG, CodingTables, build_tables, walk_scan
from rstcrypt.errors import DimensionMismatch
from rstcrypt.schemas import QualityScore, SegmentedJpeg

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit image, samples shaped (height, width, channels)."""

    width: int
    height: int
    channels: int
    samples: np.ndarray

    def __post_init__(self) -> None:
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.samples.shape != (self.height, self.width, self.channels):
            raise ValueError(
                f"samples shape {self.samples.shape} != {(self.height, self.width, self.channels)}"
            )
        if self.samples.dtype != np.uint8:
            raise ValueError("samples must be uint8")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RasterImage":
        a = np.asarray(arr, dtype=np.uint8)
        if a.ndim == 2:
            a = a[:, :, None]
        return cls(width=a.shape[1], height=a.shape[0], channels=a.shape[2], samples=a)

    @classmethod
    def from_pil(cls, image: Image.Image) -> "RasterImage":
        if image.mode not in ("L", "RGB"):
            image = image.convert("RGB")
        return cls.from_array(np.asarray(image))

    def to_pil(self) -> Image.Image:
        if self.channels == 1:
            return Image.fromarray(np.ascontiguousarray(self.samples[:, :, 0]))
        return Image.fromarray(self.samples)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RasterImage) and np.array_equal(self.samples, other.samples)


# --- Decoder ---

# 13-bit fixed-point constants of the islow IDCT, and the 16-bit colour factors.
_CONST_BITS = 13
_PASS1_BITS = 2
_FIX = {
    "0_298631336": 2446,
    "0_390180644": 3196,
    "0_541196100": 4433,
    "0_765366865": 6270,
    "0_899976223": 7373,
    "1_175875602": 9633,
    "1_501321110": 12299,
    "1_847759065": 15137,
    "1_961570560": 16069,
    "2_053119869": 16819,
    "2_562915447": 20995,
    "3_072711026": 25172,
}
_CR_R, _CB_G, _CR_G, _CB_B = 91881, 22554, 46802, 116130


def _descale(x: np.ndarray, n: int) -> np.ndarray:
    return (x + (1 << (n - 1))) >> n


def _islow_1d(c: list[np.ndarray]) -> list[np.ndarray]:
    """One 8-point pass of the integer IDCT; `c` holds the inputs by frequency."""
    z1 = (c[2] + c[6]) * _FIX["0_541196100"]
    tmp2 = z1 - c[6] * _FIX["1_847759065"]
    tmp3 = z1 + c[2] * _FIX["0_765366865"]
    tmp0 = (c[0] + c[4]) * (1 << _CONST_BITS)
    tmp1 = (c[0] - c[4]) * (1 << _CONST_BITS)
    t10, t13 = tmp0 + tmp3, tmp0 - tmp3
    t11, t12 = tmp1 + tmp2, tmp1 - tmp2

    o0, o1, o2, o3 = c[7], c[5], c[3], c[1]
    z1, z2, z3, z4 = o0 + o3, o1 + o2, o0 + o2, o1 + o3
    z5 = (z3 + z4) * _FIX["1_175875602"]
    o0 = o0 * _FIX["0_298631336"]
    o1 = o1 * _FIX["2_053119869"]
    o2 = o2 * _FIX["3_072711026"]
    o3 = o3 * _FIX["1_501321110"]
    z1 = z1 * -_FIX["0_899976223"]
    z2 = z2 * -_FIX["2_562915447"]
    z3 = z3 * -_FIX["1_961570560"] + z5
    z4 = z4 * -_FIX["0_390180644"] + z5
    o0 = o0 + z1 + z3
    o1 = o1 + z2 + z4
    o2 = o2 + z2 + z3
    o3 = o3 + z1 + z4
    return [t10 + o3, t11 + o2, t12 + o1, t13 + o0, t13 - o0, t12 - o1, t11 - o2, t10 - o3]


def _range_limit(x: np.ndarray) -> np.ndarray:
    """
    libjpeg's post-IDCT sample limiter on the level-unshifted value `x`.

    Only the low 10 bits are looked at: moderate overshoot clamps to 0 or 255,
    wild values wrap the way libjpeg's table does.
    """
    m = x & 1023
    return np.select([m < 128, m < 512, m < 896], [m + 128, 255, 0], m - 896)


def _idct_islow(natural: np.ndarray) -> np.ndarray:
    """Integer IDCT of (..., 8, 8) dequantized blocks (rows = vertical frequency)."""
    cols = _islow_1d([natural[..., k, :] for k in range(8)])
    ws = np.stack([_descale(v, _CONST_BITS - _PASS1_BITS) for v in cols], axis=-2)
    rows = _islow_1d([ws[..., :, k] for k in range(8)])
    out = np.stack([_descale(v, _CONST_BITS + _PASS1_BITS + 3) for v in rows], axis=-1)
    return _range_limit(out)


def _idct_float(natural: np.ndarray) -> np.ndarray:
    blocks = idctn(natural.astype(np.float64), axes=(-2, -1), norm="ortho")
    return np.clip(np.floor(blocks + 128.0 + 0.5), 0, 255).astype(np.int64)


def _component_plane(coeffs: np.ndarray, quant: np.ndarray, method: IdctMethod = "islow") -> np.ndarray:
    """Dequantize, IDCT and level-shift one component's (rows, cols, 64) coefficients."""
    rows, cols, _ = coeffs.shape
    # coefficients are held in 16 bits, as libjpeg's JCOEF
    wrapped = coeffs.astype(np.int16).astype(np.int64)
    natural = np.zeros(coeffs.shape, dtype=np.int64)
    natural[..., ZIGZAG] = wrapped * quant.astype(np.int64)
    natural = natural.reshape(rows, cols, 8, 8)
    samples = _idct_islow(natural) if method == "islow" else _idct_float(natural)
    return samples.astype(np.int32).transpose(0, 2, 1, 3).reshape(rows * 8, cols * 8)


def _fancy_upsample_h2v2(plane: np.ndarray) -> np.ndarray:
    """
    Triangular 2x2 upsampling, bit-compatible with libjpeg's h2v2 fancy filter.

    Nearer input samples weigh 3/4, farther 1/4, in each direction; edges replicate.
    """
    h, w = plane.shape
    rows = np.pad(plane, ((1, 1), (0, 0)), mode="edge")
    colsum = np.empty((2 * h, w), dtype=np.int32)
    colsum[0::2] = 3 * plane + rows[:-2]
    colsum[1::2] = 3 * plane + rows[2:]

    cols = np.pad(colsum, ((0, 0), (1, 1)), mode="edge")
    out = np.empty((2 * h, 2 * w), dtype=np.int32)
    out[:, 0::2] = (3 * colsum + cols[:, :-2] + 8) >> 4
    out[:, 1::2] = (3 * colsum + cols[:, 2:] + 7) >> 4
    return out


def _ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    """JFIF YCbCr to RGB in libjpeg's 16-bit fixed point, rounded once per channel."""
    t = (y.astype(np.int64) << 16) + (1 << 15)
    u = cb.astype(np.int64) - 128
    v = cr.astype(np.int64) - 128
    rgb = np.stack(
        [
            (t + _CR_R * v) >> 16,
            (t - _CB_G * u - _CR_G * v) >> 16,
            (t + _CB_B * u) >> 16,
        ],
        axis=-1,
    )
    return np.clip(rgb, 0, 255).astype(np.uint8)


def _planes(tables: CodingTables, coefficients: list[np.ndarray], method: IdctMethod) -> list[np.ndarray]:
    frame = tables.frame
    planes = []
    for ci, comp in enumerate(tables.components):
        plane = _component_plane(coefficients[ci], tables.quant_tables[comp.quant_id], method)
        ch = -(-frame.height * comp.v // frame.v_max)
        cw = -(-frame.width * comp.h // frame.h_max)
        plane = plane[:ch, :cw]
        if (comp.h, comp.v) != (frame.h_max, frame.v_max):
            plane = _fancy_upsample_h2v2(plane)
        planes.append(plane[: frame.height, : frame.width])
    return planes


def decode_pixels(
    jpeg: SegmentedJpeg, tables: Optional[CodingTables] = None, *, idct: Optional[IdctMethod] = None
) -> RasterImage:
    """
    Decode a baseline JPEG to 8-bit RGB (or luma for grayscale files).

    `idct` defaults to the `idct_method` setting: "islow" reproduces libjpeg's
    integer decoder sample for sample, "float" uses an exact orthonormal IDCT.
    """
    tables = tables or build_tables(jpeg)
    method = idct or get_settings().idct_method
    _, decoded = walk_scan(jpeg, tables)
    planes = _planes(tables, decoded.coefficients(tables), method)

    if len(planes) == 1:
        samples = planes[0].astype(np.uint8)[:, :, None]
    else:
        samples = _ycbcr_to_rgb(*planes)
    frame = tables.frame
    logger.debug("decoded %dx%d, %d component(s)", frame.width, frame.height, len(planes))
    return RasterImage(width=frame.width, height=frame.height, channels=samples.shape[2], samples=samples)


# --- Metrics ---

def _check_same_shape(a: RasterImage, b: RasterImage) -> None:
    if a.samples.shape != b.samples.shape:
        raise DimensionMismatch(f"image shapes differ: {a.samples.shape} vs {b.samples.shape}")


def psnr(a: RasterImage, b: RasterImage) -> float:
    """10 log10(255^2 / MSE) over every sample; inf when the images are equal."""
    _check_same_shape(a, b)
    diff = a.samples.astype(np.float64) - b.samples.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(255.0 * 255.0 / mse))


def luma(img: RasterImage) -> np.ndarray:
    s = img.samples.astype(np.float64)
    if img.channels == 1:
        return s[:, :, 0]
    return 0.299 * s[:, :, 0] + 0.587 * s[:, :, 1] + 0.114 * s[:, :, 2]


def _window_means(x: np.ndarray, w: int) -> np.ndarray:
    """Mean of every w x w window fully inside `x` (summed-area table)."""
    s = np.zeros((x.shape[0] + 1, x.shape[1] + 1), dtype=np.float64)
    s[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    total = s[w:, w:] - s[:-w, w:] - s[w:, :-w] + s[:-w, :-w]
    return total / (w * w)


def ssim(
    a: RasterImage,
    b: RasterImage,
    *,
    window: Optional[int] = None,
    k1: Optional[float] = None,
    k2: Optional[float] = None,
) -> float:
    """Mean SSIM over all window positions, on luma, L = 255."""
    _check_same_shape(a, b)
    if np.array_equal(a.samples, b.samples):
        return 1.0
    settings = get_settings()
    w = window or settings.ssim_window
    c1 = ((k1 if k1 is not None else settings.ssim_k1) * 255.0) ** 2
    c2 = ((k2 if k2 is not None else settings.ssim_k2) * 255.0) ** 2

    x, y = luma(a), luma(b)
    w = max(1, min(w, x.shape[0], x.shape[1]))
    mx, my = _window_means(x, w), _window_means(y, w)
    vx = _window_means(x * x, w) - mx * mx
    vy = _window_means(y * y, w) - my * my
    cxy = _window_means(x * y, w) - mx * my

    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


def quality(a: RasterImage, b: RasterImage) -> QualityScore:
    return QualityScore(psnr_db=psnr(a, b), ssim=ssim(a, b))


# --- Export ---

ExportFormat = Literal["png", "pgm", "ppm"]


def export(img: RasterImage, path: Path, fmt: ExportFormat = "png") -> Path:
    """
    Write `img` as PNG, PGM (luma) or PPM (RGB).

    PGM of an RGB image stores its rounded luma; PPM of a grayscale image
    repeats the channel.
    """
    pil = img.to_pil()
    if fmt == "pgm":
        pil = pil.convert("L")
    elif fmt == "ppm":
        pil = pil.convert("RGB")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG" if fmt == "png" else "PPM")
    return path
