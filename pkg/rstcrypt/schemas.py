"""
Container and report models (Pydantic).

This module defines the typed contracts shared across rstcrypt:

- The JPEG container as parsed by `rstcrypt.bitstream` (markers, segments,
  the entropy-coded scan) so that every stage passes around one validated,
  immutable value instead of loose byte strings.
- The encryption recipe (restart interval, region, the two 384-bit keys).
- The JSON reports written by `rstcrypt.storage` and the CLI.

Design goals:
- Immutability: containers are frozen; transformations return new values.
- Round-trip safety: nothing here decodes or rewrites payload bytes.
- Stable reports: every report carries `schema_version`, and field names are
  part of the documented on-disk format.
"""

import math
from enum import Enum, IntEnum
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

SCHEMA_VERSION = "1"

KEY_BYTES = 48
KEY_HEX_CHARS = 2 * KEY_BYTES

# --- Markers ---

# Second byte of each marker the pipeline cares about.
SOI = 0xD8
EOI = 0xD9
SOS = 0xDA
DQT = 0xDB
DRI = 0xDD
DHT = 0xC4
SOF0 = 0xC0
DAC = 0xCC
COM = 0xFE
RST0 = 0xD0
RST7 = 0xD7
APP0 = 0xE0
APP15 = 0xEF
TEM = 0x01

# Start-of-frame codes other than SOF0 (DHT=C4, JPG=C8, DAC=CC are not frames).
OTHER_SOF = frozenset({0xC1, 0xC2, 0xC3, 0xC5, 0xC6, 0xC7, 0xC9, 0xCA, 0xCB, 0xCD, 0xCE, 0xCF})


class MarkerKind(str, Enum):
    SOI = "SOI"
    EOI = "EOI"
    SOS = "SOS"
    DHT = "DHT"
    DQT = "DQT"
    SOF0 = "SOF0"
    DRI = "DRI"
    RST = "RST"
    APP = "APP"
    COM = "COM"
    OTHER = "OTHER"


_KIND_BY_CODE = {
    SOI: MarkerKind.SOI,
    EOI: MarkerKind.EOI,
    SOS: MarkerKind.SOS,
    DHT: MarkerKind.DHT,
    DQT: MarkerKind.DQT,
    SOF0: MarkerKind.SOF0,
    DRI: MarkerKind.DRI,
    COM: MarkerKind.COM,
}


class MarkerCode(BaseModel):
    """
    A two-byte marker FFxx, stored as its second byte.

    FF00 is byte stuffing and FFFF is a fill byte; neither is a marker.
    """

    model_config = ConfigDict(frozen=True)

    code: int = Field(..., ge=0x01, le=0xFE, description="Second byte of the marker")

    @property
    def tag(self) -> int:
        return 0xFF00 | self.code

    @property
    def kind(self) -> MarkerKind:
        if RST0 <= self.code <= RST7:
            return MarkerKind.RST
        if APP0 <= self.code <= APP15:
            return MarkerKind.APP
        return _KIND_BY_CODE.get(self.code, MarkerKind.OTHER)

    @property
    def rst_index(self) -> Optional[int]:
        return self.code - RST0 if self.kind is MarkerKind.RST else None

    @property
    def has_length(self) -> bool:
        """Standalone markers (SOI, EOI, RSTn, TEM) carry no length field."""
        return not (self.code in (SOI, EOI, TEM) or RST0 <= self.code <= RST7)

    def to_bytes(self) -> bytes:
        return bytes((0xFF, self.code))

    def __str__(self) -> str:
        if self.kind is MarkerKind.RST:
            return f"RST{self.rst_index}"
        if self.kind is MarkerKind.APP:
            return f"APP{self.code - APP0}"
        if self.kind is MarkerKind.OTHER:
            return f"FF{self.code:02X}"
        return self.kind.value


class Segment(BaseModel):
    """
    One marker plus its payload.

    `payload` excludes the two length bytes; it is None for standalone markers.
    """

    model_config = ConfigDict(frozen=True)

    marker: MarkerCode
    payload: Optional[bytes] = None

    @model_validator(mode="after")
    def _payload_matches_marker(self) -> "Segment":
        if self.marker.has_length and self.payload is None:
            raise ValueError(f"{self.marker} requires a payload")
        if not self.marker.has_length and self.payload is not None:
            raise ValueError(f"{self.marker} is a standalone marker")
        if self.payload is not None and len(self.payload) + 2 > 0xFFFF:
            raise ValueError(f"{self.marker} payload too long: {len(self.payload)}")
        return self

    def to_bytes(self) -> bytes:
        if self.payload is None:
            return self.marker.to_bytes()
        n = len(self.payload) + 2
        return self.marker.to_bytes() + bytes((n >> 8, n & 0xFF)) + self.payload


class SegmentedJpeg(BaseModel):
    """
    A parsed baseline JPEG.

    - pre_scan: SOI through SOS inclusive
    - scan: entropy-coded bytes, verbatim (stuffed zeros and RSTn markers included)
    - post_scan: EOI and anything the container allows after the scan
    - restart_interval: the DRI value, or 0 when there is no DRI segment
    """

    model_config = ConfigDict(frozen=True)

    pre_scan: tuple[Segment, ...]
    scan: bytes
    post_scan: tuple[Segment, ...]
    restart_interval: int = Field(default=0, ge=0, le=0xFFFF)

    @model_validator(mode="after")
    def _restart_interval_matches_dri(self) -> "SegmentedJpeg":
        dri = [s for s in self.pre_scan if s.marker.code == DRI]
        expected = 0
        if dri:
            payload = dri[-1].payload or b""
            if len(payload) != 2:
                raise ValueError(f"DRI payload must be 2 bytes, got {len(payload)}")
            expected = (payload[0] << 8) | payload[1]
        if expected != self.restart_interval:
            raise ValueError(
                f"restart_interval={self.restart_interval} disagrees with DRI value {expected}"
            )
        return self

    def segments(self, code: int) -> list[Segment]:
        """All pre-scan segments with the given marker code, in file order."""
        return [s for s in self.pre_scan if s.marker.code == code]

    def __repr__(self) -> str:
        names = ",".join(str(s.marker) for s in self.pre_scan)
        return f"SegmentedJpeg([{names}], scan={len(self.scan)}B, ri={self.restart_interval})"


# --- Encryption recipe ---

class RegionSpec(BaseModel):
    """
    Which extended blocks are encrypted.

    - all: every block
    - blocks: explicit extended-block indices
    - rect: MCU rectangle (x0, y0, x1, y1), half-open; a block is selected when
      any of its MCUs falls inside
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["all", "blocks", "rect"] = "all"
    blocks: tuple[int, ...] = ()
    rect: Optional[tuple[int, int, int, int]] = None

    @model_validator(mode="after")
    def _check_shape(self) -> "RegionSpec":
        if self.kind == "blocks":
            if not self.blocks:
                raise ValueError("region 'blocks' needs at least one block index")
            if min(self.blocks) < 0:
                raise ValueError("block indices must be non-negative")
        if self.kind == "rect":
            if self.rect is None:
                raise ValueError("region 'rect' needs x0,y0,x1,y1")
            x0, y0, x1, y1 = self.rect
            if x0 < 0 or y0 < 0 or x1 <= x0 or y1 <= y0:
                raise ValueError(f"empty or negative rectangle: {self.rect}")
        return self

    @classmethod
    def parse(cls, text: Optional[str]) -> "RegionSpec":
        """
        Parse CLI syntax: "" / "all", "blocks:1,4,7", or "x0,y0,x1,y1".
        """
        if text is None or not text.strip() or text.strip().lower() == "all":
            return cls()
        t = text.strip()
        if t.lower().startswith("blocks:"):
            return cls(kind="blocks", blocks=tuple(int(p) for p in t[7:].split(",") if p.strip()))
        parts = [int(p) for p in t.split(",")]
        if len(parts) != 4:
            raise ValueError(f"region must be x0,y0,x1,y1 in MCU units, got {text!r}")
        return cls(kind="rect", rect=(parts[0], parts[1], parts[2], parts[3]))


class EncryptionRecipe(BaseModel):
    """
    Restart interval, region, and the two independent 384-bit keys.

    k1 seeds the additional-bit keystream; k2 seeds the block permutation.
    `permute=False` reproduces the earlier XOR-only method for comparisons.
    """

    model_config = ConfigDict(frozen=True)

    ri: int = Field(..., ge=1, le=0xFFFF)
    region: RegionSpec = Field(default_factory=RegionSpec)
    k1: bytes = Field(..., repr=False)
    k2: bytes = Field(..., repr=False)
    permute: bool = True

    @field_validator("k1", "k2", mode="before")
    @classmethod
    def _decode_hex(cls, v: object) -> object:
        if isinstance(v, str):
            v = v.strip()
            if len(v) != KEY_HEX_CHARS:
                raise ValueError(f"key must be {KEY_HEX_CHARS} hex characters, got {len(v)}")
            return bytes.fromhex(v)
        return v

    @field_validator("k1", "k2")
    @classmethod
    def _check_length(cls, v: bytes) -> bytes:
        if len(v) != KEY_BYTES:
            raise ValueError(f"key must be {KEY_BYTES} bytes, got {len(v)}")
        return v

    @field_serializer("k1", "k2")
    def _encode_hex(self, v: bytes) -> str:
        return v.hex()


class RecipeFile(BaseModel):
    """On-disk recipe: keys are referenced (hex literal or key-file path), never embedded raw."""

    ri: int = Field(..., ge=1, le=0xFFFF)
    region: RegionSpec = Field(default_factory=RegionSpec)
    key_refs: dict[Literal["k1", "k2"], str]
    permute: bool = True


# --- Byte classes ---

class BytePattern(IntEnum):
    """Per-byte class of the entropy-coded scan."""

    P1 = 1  # Huffman-code bits only
    P2 = 2  # additional bits only
    P3 = 3  # both, every Huffman-code bit is 1
    P4 = 4  # both, some Huffman-code bit is 0: the only encryptable class
    P5 = 5  # stuffed 00 after FF
    MARKER = 6
    PADDING = 7  # carries fill bits before a restart marker or the end of scan


# --- Reports ---

class QualityScore(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    psnr_db: float = Field(..., description="inf for identical images")
    ssim: float = Field(..., ge=-1.0, le=1.0)


class BoxplotStats(BaseModel):
    """Percentiles, Tukey whiskers (1.5 IQR), outliers and mean of one sample."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    n: int = Field(..., ge=0)
    mean: float
    p25: float
    p50: float
    p75: float
    whisker_low: float
    whisker_high: float
    outliers: list[float] = Field(default_factory=list)


class KeySpaceReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    width: int
    height: int
    ri: int
    T: int = Field(..., ge=0, description="Number of Pattern-4 bytes")
    block_count: int = Field(..., ge=0)
    s_enc_min_bits: int
    s_enc_max_bits: int
    s_bp_log2: float
    s_min_bits: float
    s_max_bits: float

    @property
    def exceeds_256_bits(self) -> bool:
        return self.s_min_bits > 256

    @model_validator(mode="after")
    def _totals_consistent(self) -> "KeySpaceReport":
        if not math.isclose(self.s_min_bits, self.T + self.s_bp_log2, rel_tol=0, abs_tol=1e-9):
            raise ValueError("s_min_bits must equal T + s_bp_log2")
        return self


class ChannelHistogram(BaseModel):
    channel: Literal["R", "G", "B"]
    counts: list[int] = Field(..., min_length=256, max_length=256)


class HistogramSimilarity(BaseModel):
    """Similarity between two 256-bin histograms; intersection is the primary score."""

    a: str
    b: str
    intersection: float
    pearson: float
    chi_square: float


class HistogramReport(BaseModel):
    """
    Channel histograms of one decoded image.

    Intersection is the headline score. The Pearson means are reported next to
    it because the histogram-correlation claims are phrased in terms of them.
    """

    schema_version: str = SCHEMA_VERSION
    pixel_count: int
    channels: list[ChannelHistogram]
    pairwise: list[HistogramSimilarity]
    mean_inter_channel_similarity: float
    mean_inter_channel_pearson: float
    to_reference: list[HistogramSimilarity] = Field(default_factory=list)
    similarity_to_reference: Optional[float] = None
    pearson_to_reference: Optional[float] = None


class SensitivityReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    schema_version: str = SCHEMA_VERSION
    image: str
    ri: int
    trials: int
    flip_targets: list[Literal["k1", "k2"]]
    control: BoxplotStats
    case1: BoxplotStats
    independent: BoxplotStats
    case2: BoxplotStats
    ks_statistic: float
    ks_pvalue: float
    case1_matches_independent: bool
    control_exact: bool
    case2_threshold: float
    case2_below_threshold: bool


class ScanMapExport(BaseModel):
    """JSON view of a ScanMap for debugging. Field names are stable."""

    schema_version: str = SCHEMA_VERSION
    scan_length: int
    restart_interval: int
    mcu_count: int
    units_per_mcu: int
    pattern_counts: dict[str, int]
    byte_patterns: list[int]
    mcu_bit_spans: list[tuple[int, int]]
    mcu_blocks: list[int]
    nonzero_counts: list[list[int]]
    ac_nonzero_counts: list[list[int]]


class NzcaReport(BaseModel):
    """Non-zero AC counts of the luma blocks, row-major over the block grid."""

    schema_version: str = SCHEMA_VERSION
    width_blocks: int
    height_blocks: int
    counts: list[list[int]]

    @model_validator(mode="after")
    def _grid_shape(self) -> "NzcaReport":
        if len(self.counts) != self.height_blocks or any(len(r) != self.width_blocks for r in self.counts):
            raise ValueError("counts must be height_blocks rows of width_blocks values")
        return self


class ImageEvaluation(BaseModel):
    """One (image, restart interval) run of the evaluation battery."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    schema_version: str = SCHEMA_VERSION
    image: str
    ri: int
    width: int
    height: int
    restructured_size: int
    encrypted_size: int
    size_preserved: bool
    round_trip: bool
    reference_decode_ok: Optional[bool] = None
    key_space: KeySpaceReport
    protection: QualityScore
    nzca_equivariant: bool
    nzca_ablation_leaks: bool
    histogram: Optional[HistogramReport] = None
    ablation_histogram: Optional[HistogramReport] = None
    failures: list[str] = Field(default_factory=list)


class IntervalSummary(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    ri: int
    psnr: BoxplotStats
    ssim: BoxplotStats
    inter_channel_similarity: Optional[BoxplotStats] = None
    similarity_to_original: Optional[BoxplotStats] = None


class EvaluationSummary(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    schema_version: str = SCHEMA_VERSION
    images: list[str]
    restart_intervals: list[int]
    intervals: list[IntervalSummary]
    histogram_trend_images: int = Field(
        ..., description="Images whose histogram intersections move monotonically with RI"
    )
    histogram_trend_images_pearson: int = Field(
        default=0, description="Same, measured with Pearson correlation"
    )
    all_passed: bool
    failures: list[str] = Field(default_factory=list)


class ErrorReport(BaseModel):
    error: str
    message: str
    path: Optional[str] = None
