"""
JPEG container parsing and serialization.

This module splits a baseline JPEG file into:

- the header segments from SOI through SOS,
- the entropy-coded scan, kept byte-for-byte (stuffed 00 bytes and embedded
  RSTn markers stay where the encoder put them),
- the trailing segments from the end of the scan through EOI.

`serialize(parse(data)) == data` holds for every file `parse` accepts. Nothing
here looks inside APPn/COM payloads; the frame header is read only to know how
many MCUs the scan must contain.

Supported input is deliberately narrow: one SOF0 frame, one Huffman-coded scan,
at most one DRI, nothing after EOI. Everything else raises a typed error rather
than being guessed at.
"""

import logging
import math
from dataclasses import dataclass

from rstcrypt.errors import (
    InconsistentMarkers,
    MalformedMarker,
    MultipleScans,
    NoRestartMarkers,
    TrailingData,
    UnsupportedCoding,
)
from rstcrypt.schemas import (
    DAC,
    DRI,
    EOI,
    OTHER_SOF,
    RST0,
    RST7,
    SOF0,
    SOI,
    SOS,
    MarkerCode,
    Segment,
    SegmentedJpeg,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrameComponent:
    component_id: int
    h: int
    v: int
    quant_id: int


@dataclass(frozen=True)
class FrameHeader:
    """The parts of SOF0 the pipeline needs."""

    precision: int
    height: int
    width: int
    components: tuple[FrameComponent, ...]

    @property
    def h_max(self) -> int:
        return max(c.h for c in self.components)

    @property
    def v_max(self) -> int:
        return max(c.v for c in self.components)

    @property
    def interleaved(self) -> bool:
        return len(self.components) > 1

    @property
    def mcu_cols(self) -> int:
        if not self.interleaved:
            return math.ceil(self.width / 8)
        return math.ceil(self.width / (8 * self.h_max))

    @property
    def mcu_rows(self) -> int:
        if not self.interleaved:
            return math.ceil(self.height / 8)
        return math.ceil(self.height / (8 * self.v_max))

    @property
    def mcu_count(self) -> int:
        return self.mcu_cols * self.mcu_rows


@dataclass(frozen=True)
class ExtendedBlock:
    """Scan bytes strictly between two restart markers: `scan[start:end]`."""

    index: int
    start: int
    end: int

    @property
    def size(self) -> int:
        return self.end - self.start


# --- Parsing ---

def parse(data: bytes) -> SegmentedJpeg:
    """
    Parse a complete baseline JPEG file.

    Raises:
        MalformedMarker: missing SOI/EOI, a truncated segment, a bad marker byte.
        TrailingData: bytes after EOI.
        UnsupportedCoding: progressive/lossless/extended frames, arithmetic coding.
        MultipleScans: a second SOS.
    """
    data = bytes(data)
    if len(data) < 4 or data[0] != 0xFF or data[1] != SOI:
        raise MalformedMarker("file does not start with SOI")

    pre_scan: list[Segment] = [Segment(marker=MarkerCode(code=SOI))]
    pos = 2
    seen_sof = False
    seen_dri = False

    while True:
        segment, pos = _read_segment(data, pos)
        code = segment.marker.code
        pre_scan.append(segment)

        if code in OTHER_SOF:
            raise UnsupportedCoding(f"only baseline SOF0 is supported, found {segment.marker}")
        if code == DAC:
            raise UnsupportedCoding("arithmetic coding is not supported")
        if code == SOF0:
            if seen_sof:
                raise UnsupportedCoding("more than one frame header")
            seen_sof = True
        if code == DRI:
            if seen_dri:
                raise UnsupportedCoding("more than one DRI segment")
            seen_dri = True
        if code in (EOI, SOI):
            raise MalformedMarker(f"unexpected {segment.marker} before the scan")
        if code == SOS:
            break

    if not seen_sof:
        raise MalformedMarker("SOS without a preceding SOF0")

    scan_end = _find_scan_end(data, pos)
    scan = data[pos:scan_end]

    post_scan: list[Segment] = []
    pos = scan_end
    while True:
        segment, pos = _read_segment(data, pos)
        code = segment.marker.code
        if code == SOS:
            raise MultipleScans("file contains more than one scan")
        post_scan.append(segment)
        if code == EOI:
            break
    if pos != len(data):
        raise TrailingData(f"{len(data) - pos} bytes after EOI")

    restart_interval = 0
    for s in pre_scan:
        if s.marker.code == DRI:
            payload = s.payload or b""
            if len(payload) != 2:
                raise MalformedMarker("DRI payload must be 2 bytes")
            restart_interval = (payload[0] << 8) | payload[1]

    jpeg = SegmentedJpeg(
        pre_scan=tuple(pre_scan),
        scan=scan,
        post_scan=tuple(post_scan),
        restart_interval=restart_interval,
    )
    logger.debug("parsed %r", jpeg)
    return jpeg


def _read_segment(data: bytes, pos: int) -> tuple[Segment, int]:
    """Read one marker (and its length-prefixed payload) at `pos`."""
    if pos + 2 > len(data):
        raise MalformedMarker(f"file ends at offset {pos} without EOI")
    if data[pos] != 0xFF:
        raise MalformedMarker(f"expected a marker at offset {pos}, found {data[pos]:02X}")
    code = data[pos + 1]
    if code in (0x00, 0xFF):
        raise MalformedMarker(f"invalid marker FF{code:02X} at offset {pos}")
    marker = MarkerCode(code=code)
    pos += 2
    if not marker.has_length:
        return Segment(marker=marker), pos

    if pos + 2 > len(data):
        raise MalformedMarker(f"{marker} at offset {pos - 2} has no length field")
    length = (data[pos] << 8) | data[pos + 1]
    if length < 2 or pos + length > len(data):
        raise MalformedMarker(f"{marker} at offset {pos - 2} is truncated")
    return Segment(marker=marker, payload=data[pos + 2 : pos + length]), pos + length


def _find_scan_end(data: bytes, pos: int) -> int:
    """
    Offset of the first marker that terminates the scan.

    FF00 (stuffing) and FFD0..FFD7 (restart) belong to the scan.
    """
    n = len(data)
    i = pos
    while True:
        i = data.find(b"\xff", i)
        if i < 0 or i + 1 >= n:
            raise MalformedMarker("scan is not terminated by a marker")
        nxt = data[i + 1]
        if nxt == 0x00 or RST0 <= nxt <= RST7:
            i += 2
            continue
        if nxt == 0xFF:
            raise MalformedMarker(f"fill bytes inside the scan at offset {i}")
        return i


# --- Serialization ---

def serialize(jpeg: SegmentedJpeg) -> bytes:
    """Concatenate segments and scan back into a file."""
    if not jpeg.pre_scan or jpeg.pre_scan[0].marker.code != SOI:
        raise AssertionError("pre_scan must start with SOI")
    if jpeg.pre_scan[-1].marker.code != SOS:
        raise AssertionError("pre_scan must end with SOS")
    if not jpeg.post_scan or jpeg.post_scan[-1].marker.code != EOI:
        raise AssertionError("post_scan must end with EOI")
    parts = [s.to_bytes() for s in jpeg.pre_scan]
    parts.append(jpeg.scan)
    parts.extend(s.to_bytes() for s in jpeg.post_scan)
    return b"".join(parts)


# --- Frame header ---

def frame_header(jpeg: SegmentedJpeg) -> FrameHeader:
    """Decode the SOF0 segment."""
    sofs = jpeg.segments(SOF0)
    if len(sofs) != 1:
        raise MalformedMarker("expected exactly one SOF0 segment")
    p = sofs[0].payload or b""
    if len(p) < 6:
        raise MalformedMarker("SOF0 segment is truncated")
    precision, height, width, nf = p[0], (p[1] << 8) | p[2], (p[3] << 8) | p[4], p[5]
    if precision != 8:
        raise UnsupportedCoding(f"sample precision {precision} is not baseline")
    if height == 0 or width == 0:
        raise UnsupportedCoding("zero image dimension (DNL) is not supported")
    if len(p) != 6 + 3 * nf:
        raise MalformedMarker("SOF0 length disagrees with its component count")
    comps = []
    for k in range(nf):
        cid, hv, tq = p[6 + 3 * k], p[7 + 3 * k], p[8 + 3 * k]
        comps.append(FrameComponent(component_id=cid, h=hv >> 4, v=hv & 0x0F, quant_id=tq))
    return FrameHeader(precision=precision, height=height, width=width, components=tuple(comps))


# --- Extended blocks ---

def split_extended_blocks(jpeg: SegmentedJpeg) -> list[ExtendedBlock]:
    """
    Byte spans of the scan between consecutive RST markers.

    Spans are ordered and disjoint; together with the 2-byte markers between
    them they tile the whole scan.

    Raises:
        NoRestartMarkers: the file has no DRI (restart interval 0).
        InconsistentMarkers: RSTn not cycling 0..7, or a block count other than
            ceil(MCU count / restart interval).
    """
    ri = jpeg.restart_interval
    if ri == 0:
        raise NoRestartMarkers("restart interval is 0; restructure the file first")

    scan = jpeg.scan
    blocks: list[ExtendedBlock] = []
    start = 0
    i = 0
    n = len(scan)
    while True:
        i = scan.find(b"\xff", i)
        if i < 0:
            break
        if i + 1 >= n:
            raise InconsistentMarkers("scan ends inside a marker")
        nxt = scan[i + 1]
        if nxt == 0x00:
            i += 2
            continue
        expected = len(blocks) % 8
        if nxt - RST0 != expected:
            raise InconsistentMarkers(
                f"found RST{nxt - RST0} where RST{expected} was expected (block {len(blocks)})"
            )
        blocks.append(ExtendedBlock(index=len(blocks), start=start, end=i))
        start = i + 2
        i += 2
    blocks.append(ExtendedBlock(index=len(blocks), start=start, end=n))

    expected_blocks = math.ceil(frame_header(jpeg).mcu_count / ri)
    if len(blocks) != expected_blocks:
        raise InconsistentMarkers(
            f"{len(blocks)} extended blocks, but {expected_blocks} expected for RI={ri}"
        )
    return blocks


def rst_marker(index: int) -> bytes:
    """The RSTn marker that follows extended block `index`."""
    return bytes((0xFF, RST0 + index % 8))


def join_extended_blocks(scan: bytes, blocks: list[ExtendedBlock], order: list[int]) -> bytes:
    """
    Rebuild a scan from its blocks in a new order, renumbering RSTn cyclically.

    `order[p]` is the index of the block placed at position p.
    """
    parts: list[bytes] = []
    for p, q in enumerate(order):
        b = blocks[q]
        parts.append(scan[b.start : b.end])
        if p < len(order) - 1:
            parts.append(rst_marker(p))
    return b"".join(parts)
