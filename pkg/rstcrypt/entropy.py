"""
Entropy layer: Huffman tables, bit-exact scan walking, and restructuring.

The scan walk decodes every MCU and, at the same time, labels every bit of the
scan with the role it plays:

    HuffmanCode | AdditionalBit | PaddingBit | StuffedZero | Marker

From those labels each scan byte gets one class:

    P1  Huffman-code bits only
    P2  additional bits only
    P3  both, and every Huffman-code bit is 1
    P4  both, and at least one Huffman-code bit is 0
    P5  the 00 stuffed after an FF data byte
    MARKER, PADDING (a byte holding fill bits before RSTn or the end of scan)

A P4 byte can never become FF whatever its additional bits are set to, which is
why only P4 additional bits are ever encrypted.

The walk also records the symbol stream (`DecodedScan`), which re-encodes to the
original scan bytes exactly and is what `restructure` uses to move restart
markers without touching any coefficient.
"""

import logging
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from rstcrypt.bitstream import (
    ExtendedBlock,
    FrameHeader,
    frame_header,
    split_extended_blocks,
)
from rstcrypt.errors import (
    HuffmanDecodeFailure,
    InvalidHuffmanSpec,
    MalformedMarker,
    MarkerDesyncError,
    MissingHuffmanCode,
    TruncatedScan,
    UnsupportedCoding,
)
from rstcrypt.schemas import (
    DHT,
    DQT,
    DRI,
    RST0,
    RST7,
    SOS,
    BytePattern,
    MarkerCode,
    ScanMapExport,
    Segment,
    SegmentedJpeg,
)

logger = logging.getLogger(__name__)

# ZIGZAG[k] is the row-major index of the k-th coefficient in zigzag order.
ZIGZAG = np.array([
    0, 1, 8, 16, 9, 2, 3, 10,
    17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
], dtype=np.intp)

EOB = 0x00
ZRL = 0xF0


class BitRole(IntEnum):
    HUFFMAN_CODE = 0
    ADDITIONAL_BIT = 1
    PADDING_BIT = 2
    STUFFED_ZERO = 3
    MARKER = 4


_UNLABELED = 0xFF


# --- Huffman tables ---

@dataclass(frozen=True)
class HuffmanTable:
    """
    A canonical Huffman table (JPEG Annex C) with decode and encode views.

    `maxcode[l]`, `mincode[l]` and `valptr[l]` follow the Annex F decoder for
    code length l in 1..16; maxcode is -1 where no code has that length.
    """

    table_class: int  # 0 = DC, 1 = AC
    table_id: int
    counts: tuple[int, ...]
    symbols: tuple[int, ...]
    maxcode: tuple[int, ...] = field(repr=False)
    mincode: tuple[int, ...] = field(repr=False)
    valptr: tuple[int, ...] = field(repr=False)
    codes: dict[int, tuple[int, int]] = field(repr=False)

    @classmethod
    def build(cls, table_class: int, table_id: int, counts: list[int], symbols: list[int]) -> "HuffmanTable":
        """
        Generate canonical codes from BITS/HUFFVAL.

        Raises:
            InvalidHuffmanSpec: more symbols than the counts allow, or code
                space overflow (including an all-ones code).
        """
        if len(counts) != 16:
            raise InvalidHuffmanSpec("BITS must have 16 entries")
        if sum(counts) != len(symbols) or len(symbols) > 256:
            raise InvalidHuffmanSpec(f"counts sum to {sum(counts)} but {len(symbols)} symbols given")

        maxcode = [-1] * 17
        mincode = [0] * 17
        valptr = [0] * 17
        codes: dict[int, tuple[int, int]] = {}
        code = 0
        k = 0
        for length in range(1, 17):
            n = counts[length - 1]
            if n:
                valptr[length] = k
                mincode[length] = code
                for _ in range(n):
                    codes.setdefault(symbols[k], (code, length))
                    code += 1
                    k += 1
                maxcode[length] = code - 1
                # Same check as libjpeg: the all-ones code of any length is reserved.
                if code >= (1 << length):
                    raise InvalidHuffmanSpec(
                        f"table {table_class}/{table_id}: code space overflow at length {length}"
                    )
            code <<= 1

        return cls(
            table_class=table_class,
            table_id=table_id,
            counts=tuple(counts),
            symbols=tuple(symbols),
            maxcode=tuple(maxcode),
            mincode=tuple(mincode),
            valptr=tuple(valptr),
            codes=codes,
        )

    @property
    def empty(self) -> bool:
        return not self.symbols

    def encode(self, symbol: int) -> tuple[int, int]:
        """(code, length) for `symbol`."""
        try:
            return self.codes[symbol]
        except KeyError:
            kind = "DC" if self.table_class == 0 else "AC"
            raise MissingHuffmanCode(
                f"{kind} table {self.table_id} has no code for symbol {symbol:#04x}"
            ) from None


@dataclass(frozen=True)
class ComponentSpec:
    component_id: int
    h: int
    v: int
    quant_id: int
    dc_table: int
    ac_table: int


@dataclass(frozen=True)
class CodingTables:
    """
    Everything needed to decode the scan: Huffman and quantization tables plus
    the scan's component layout.

    `units` lists, for one MCU, the data units in coding order as
    (component index, block row offset, block column offset).
    """

    frame: FrameHeader
    dc_tables: dict[int, HuffmanTable]
    ac_tables: dict[int, HuffmanTable]
    quant_tables: dict[int, np.ndarray]
    components: tuple[ComponentSpec, ...]
    units: tuple[tuple[int, int, int], ...]

    @property
    def mcu_cols(self) -> int:
        return self.frame.mcu_cols

    @property
    def mcu_rows(self) -> int:
        return self.frame.mcu_rows

    @property
    def mcu_count(self) -> int:
        return self.frame.mcu_count

    @property
    def units_per_mcu(self) -> int:
        return len(self.units)

    @property
    def interleaved(self) -> bool:
        return len(self.components) > 1

    def block_grid(self, ci: int) -> tuple[int, int]:
        """(rows, cols) of 8x8 blocks coded for component `ci`."""
        c = self.components[ci]
        if self.interleaved:
            return self.mcu_rows * c.v, self.mcu_cols * c.h
        return self.mcu_rows, self.mcu_cols

    def block_position(self, mcu: int, unit: int) -> tuple[int, int, int]:
        """(component index, block row, block column) of a data unit."""
        ci, dy, dx = self.units[unit]
        if not self.interleaved:
            return ci, mcu // self.mcu_cols, mcu % self.mcu_cols
        c = self.components[ci]
        return ci, (mcu // self.mcu_cols) * c.v + dy, (mcu % self.mcu_cols) * c.h + dx

    def luma_units(self) -> list[int]:
        """Indices within an MCU of the first component's data units."""
        return [u for u, (ci, _, _) in enumerate(self.units) if ci == 0]


def _parse_dht(payload: bytes) -> list[HuffmanTable]:
    tables = []
    pos = 0
    while pos < len(payload):
        if pos + 17 > len(payload):
            raise InvalidHuffmanSpec("DHT segment is truncated")
        tc, th = payload[pos] >> 4, payload[pos] & 0x0F
        if tc > 1 or th > 3:
            raise InvalidHuffmanSpec(f"bad DHT class/id {tc}/{th}")
        counts = list(payload[pos + 1 : pos + 17])
        total = sum(counts)
        if pos + 17 + total > len(payload):
            raise InvalidHuffmanSpec("DHT symbol list is truncated")
        symbols = list(payload[pos + 17 : pos + 17 + total])
        tables.append(HuffmanTable.build(tc, th, counts, symbols))
        pos += 17 + total
    return tables


def _parse_dqt(payload: bytes) -> dict[int, np.ndarray]:
    """Quantization tables, kept in zigzag order as stored."""
    tables: dict[int, np.ndarray] = {}
    pos = 0
    while pos < len(payload):
        pq, tq = payload[pos] >> 4, payload[pos] & 0x0F
        size = 128 if pq else 64
        if tq > 3 or pos + 1 + size > len(payload):
            raise MalformedMarker("DQT segment is truncated or malformed")
        raw = payload[pos + 1 : pos + 1 + size]
        if pq:
            values = np.array(struct.unpack(">64H", raw), dtype=np.int32)
        else:
            values = np.frombuffer(raw, dtype=np.uint8).astype(np.int32)
        tables[tq] = values
        pos += 1 + size
    return tables


def _supported_sampling(frame: FrameHeader) -> bool:
    factors = [(c.h, c.v) for c in frame.components]
    if len(factors) == 1:
        return True
    if len(factors) == 3:
        return factors in ([(2, 2), (1, 1), (1, 1)], [(1, 1), (1, 1), (1, 1)])
    return False


def build_tables(jpeg: SegmentedJpeg) -> CodingTables:
    """
    Collect DHT/DQT/SOF0/SOS into decode tables.

    Tables are resolved in file order, so a later DHT for the same class/id
    replaces an earlier one.

    Raises:
        InvalidHuffmanSpec: malformed or overflowing DHT.
        UnsupportedCoding: sampling layout or scan parameters outside baseline
            4:2:0 / 4:4:4 / grayscale.
        MalformedMarker: missing tables or a malformed SOS.
    """
    frame = frame_header(jpeg)
    if not _supported_sampling(frame):
        layout = ",".join(f"{c.h}x{c.v}" for c in frame.components)
        raise UnsupportedCoding(f"sampling layout {layout} is not supported")

    dc_tables: dict[int, HuffmanTable] = {}
    ac_tables: dict[int, HuffmanTable] = {}
    quant_tables: dict[int, np.ndarray] = {}
    for seg in jpeg.pre_scan:
        if seg.marker.code == DHT:
            for t in _parse_dht(seg.payload or b""):
                (dc_tables if t.table_class == 0 else ac_tables)[t.table_id] = t
        elif seg.marker.code == DQT:
            quant_tables.update(_parse_dqt(seg.payload or b""))

    sos = jpeg.pre_scan[-1]
    if sos.marker.code != SOS:
        raise MalformedMarker("pre_scan does not end with SOS")
    p = sos.payload or b""
    if not p:
        raise MalformedMarker("empty SOS segment")
    ns = p[0]
    if len(p) != 4 + 2 * ns:
        raise MalformedMarker("SOS length disagrees with its component count")
    ss, se, ahal = p[1 + 2 * ns], p[2 + 2 * ns], p[3 + 2 * ns]
    if (ss, se, ahal) != (0, 63, 0):
        raise UnsupportedCoding("scan is not a baseline sequential scan")
    if ns != len(frame.components):
        raise UnsupportedCoding("only a single scan covering every component is supported")

    by_id = {c.component_id: c for c in frame.components}
    components = []
    for k in range(ns):
        cid, tdta = p[1 + 2 * k], p[2 + 2 * k]
        if cid not in by_id:
            raise MalformedMarker(f"SOS references unknown component {cid}")
        fc = by_id[cid]
        spec = ComponentSpec(
            component_id=cid, h=fc.h, v=fc.v, quant_id=fc.quant_id,
            dc_table=tdta >> 4, ac_table=tdta & 0x0F,
        )
        if spec.dc_table not in dc_tables or spec.ac_table not in ac_tables:
            raise InvalidHuffmanSpec(f"component {cid} references a missing Huffman table")
        if spec.quant_id not in quant_tables:
            raise MalformedMarker(f"component {cid} references missing quantization table {spec.quant_id}")
        components.append(spec)

    if ns == 1:
        units = ((0, 0, 0),)
    else:
        units = tuple(
            (ci, dy, dx)
            for ci, c in enumerate(components)
            for dy in range(c.v)
            for dx in range(c.h)
        )

    return CodingTables(
        frame=frame,
        dc_tables=dc_tables,
        ac_tables=ac_tables,
        quant_tables=quant_tables,
        components=tuple(components),
        units=units,
    )


# --- Scan walk ---

@dataclass(slots=True)
class DataUnit:
    """Symbols of one 8x8 block: DC category and difference, then (run/size, value) pairs."""

    component: int
    dc_size: int
    dc_diff: int
    ac: tuple[tuple[int, int], ...]


@dataclass(frozen=True, eq=False)
class DecodedScan:
    """The symbol stream of a scan, in coding order."""

    units: tuple[DataUnit, ...]
    units_per_mcu: int
    mcu_count: int
    restart_interval: int

    def mcu(self, m: int) -> tuple[DataUnit, ...]:
        return self.units[m * self.units_per_mcu : (m + 1) * self.units_per_mcu]

    def dc_values(self) -> np.ndarray:
        """Absolute quantized DC per data unit, with prediction reset at every restart."""
        out = np.zeros(len(self.units), dtype=np.int64)
        pred: dict[int, int] = {}
        for i, u in enumerate(self.units):
            m = i // self.units_per_mcu
            if self.restart_interval and m % self.restart_interval == 0 and i % self.units_per_mcu == 0:
                pred = {}
            value = pred.get(u.component, 0) + u.dc_diff
            pred[u.component] = value
            out[i] = value
        return out

    def with_restart_interval(self, new_ri: int) -> "DecodedScan":
        """Same coefficients, DC differences recomputed for a new restart interval."""
        values = self.dc_values()
        units = []
        pred: dict[int, int] = {}
        for i, u in enumerate(self.units):
            m = i // self.units_per_mcu
            if new_ri and m % new_ri == 0 and i % self.units_per_mcu == 0:
                pred = {}
            diff = int(values[i]) - pred.get(u.component, 0)
            pred[u.component] = int(values[i])
            units.append(DataUnit(u.component, _magnitude_category(diff), diff, u.ac))
        return DecodedScan(
            units=tuple(units),
            units_per_mcu=self.units_per_mcu,
            mcu_count=self.mcu_count,
            restart_interval=new_ri,
        )

    def coefficients(self, tables: CodingTables) -> list[np.ndarray]:
        """
        Quantized coefficients per component, zigzag order.

        Returns one array per scan component shaped (rows, cols, 64) over that
        component's block grid.
        """
        grids = [np.zeros(tables.block_grid(ci) + (64,), dtype=np.int32) for ci in range(len(tables.components))]
        dc = self.dc_values()
        for i, u in enumerate(self.units):
            ci, by, bx = tables.block_position(i // self.units_per_mcu, i % self.units_per_mcu)
            block = grids[ci][by, bx]
            block[0] = dc[i]
            k = 1
            for symbol, value in u.ac:
                if symbol == EOB:
                    break
                if symbol == ZRL:
                    k += 16
                    continue
                k += symbol >> 4
                block[k] = value
                k += 1
        return grids


@dataclass(frozen=True, eq=False)
class ScanMap:
    """
    Bit-exact annotation of a scan.

    - bit_roles: one BitRole per scan bit (8 per byte, MSB first)
    - byte_patterns: one BytePattern per scan byte
    - byte_blocks: extended-block index per byte, -1 on RST marker bytes
    - mcu_spans: (first bit, one past last bit) of each MCU, as scan bit offsets
    - mcu_blocks: extended-block index of each MCU
    - coeff_counts: non-zero quantized coefficients per data unit, DC included
    - ac_counts: non-zero AC coefficients per data unit (fixed by the symbol stream)
    """

    bit_roles: np.ndarray
    byte_patterns: np.ndarray
    byte_blocks: np.ndarray
    mcu_spans: np.ndarray
    mcu_blocks: np.ndarray
    coeff_counts: np.ndarray
    ac_counts: np.ndarray
    restart_interval: int

    @property
    def mcu_count(self) -> int:
        return int(self.mcu_spans.shape[0])

    @property
    def units_per_mcu(self) -> int:
        return int(self.coeff_counts.shape[1])

    def pattern_counts(self) -> dict[str, int]:
        counts = np.bincount(self.byte_patterns, minlength=8)
        return {p.name: int(counts[p.value]) for p in BytePattern}

    def to_export(self) -> ScanMapExport:
        return ScanMapExport(
            scan_length=int(self.byte_patterns.size),
            restart_interval=self.restart_interval,
            mcu_count=self.mcu_count,
            units_per_mcu=self.units_per_mcu,
            pattern_counts=self.pattern_counts(),
            byte_patterns=self.byte_patterns.tolist(),
            mcu_bit_spans=[(int(a), int(b)) for a, b in self.mcu_spans],
            mcu_blocks=self.mcu_blocks.tolist(),
            nonzero_counts=self.coeff_counts.tolist(),
            ac_nonzero_counts=self.ac_counts.tolist(),
        )


class _OutOfBits(Exception):
    pass


class _BitReader:
    """
    Reads the data bits of one extended block and labels each bit it hands out.

    `positions` lists the scan offsets of the block's data bytes (stuffed zeros
    excluded), so bit k of the block lives in scan byte positions[k >> 3].
    """

    __slots__ = ("scan", "positions", "roles", "bitpos", "nbits")

    def __init__(self, scan: bytes, positions: list[int], roles: bytearray) -> None:
        self.scan = scan
        self.positions = positions
        self.roles = roles
        self.bitpos = 0
        self.nbits = 8 * len(positions)

    def scan_bit(self) -> int:
        """Scan bit offset of the next bit to be read."""
        return self.positions[self.bitpos >> 3] * 8 + (self.bitpos & 7)

    def read_bit(self, role: int) -> int:
        if self.bitpos >= self.nbits:
            raise _OutOfBits
        byte_i = self.positions[self.bitpos >> 3]
        k = self.bitpos & 7
        self.roles[byte_i * 8 + k] = role
        self.bitpos += 1
        return (self.scan[byte_i] >> (7 - k)) & 1

    def receive_extend(self, size: int) -> int:
        """Read `size` additional bits and map them to a signed coefficient."""
        v = 0
        for _ in range(size):
            v = (v << 1) | self.read_bit(BitRole.ADDITIONAL_BIT)
        if size and v < (1 << (size - 1)):
            v -= (1 << size) - 1
        return v

    def decode(self, table: HuffmanTable) -> int:
        if table.empty:
            raise InvalidHuffmanSpec(f"Huffman table {table.table_class}/{table.table_id} has no codes")
        code = 0
        maxcode, mincode, valptr = table.maxcode, table.mincode, table.valptr
        for length in range(1, 17):
            code = (code << 1) | self.read_bit(BitRole.HUFFMAN_CODE)
            if code <= maxcode[length]:
                return table.symbols[valptr[length] + code - mincode[length]]
        raise HuffmanDecodeFailure(f"no code matches near scan bit {self.scan_bit() if self.bitpos < self.nbits else -1}")

    def pad(self) -> int:
        """Label the rest of the block as fill bits; return how many there were."""
        remaining = self.nbits - self.bitpos
        while self.bitpos < self.nbits:
            self.read_bit(BitRole.PADDING_BIT)
        return remaining


def _data_positions(scan: bytes, start: int, end: int, roles: bytearray) -> list[int]:
    """Offsets of data bytes in scan[start:end]; stuffed zeros are labeled and skipped."""
    positions = []
    i = start
    stuffed = bytes([BitRole.STUFFED_ZERO]) * 8
    while i < end:
        positions.append(i)
        if scan[i] == 0xFF:
            if i + 1 >= end or scan[i + 1] != 0x00:
                raise MarkerDesyncError(f"unstuffed FF at scan offset {i}")
            roles[(i + 1) * 8 : (i + 2) * 8] = stuffed
            i += 2
        else:
            i += 1
    return positions


def _decode_unit(reader: _BitReader, tables: CodingTables, ci: int) -> DataUnit:
    comp = tables.components[ci]
    dc_table = tables.dc_tables[comp.dc_table]
    ac_table = tables.ac_tables[comp.ac_table]

    dc_size = reader.decode(dc_table)
    if dc_size > 11:
        raise HuffmanDecodeFailure(f"DC magnitude category {dc_size} exceeds baseline range")
    dc_diff = reader.receive_extend(dc_size)

    ac: list[tuple[int, int]] = []
    k = 1
    while k < 64:
        rs = reader.decode(ac_table)
        run, size = rs >> 4, rs & 0x0F
        if size == 0:
            if run == 15:
                ac.append((ZRL, 0))
                k += 16
                continue
            ac.append((EOB, 0))
            break
        k += run
        if k > 63:
            raise HuffmanDecodeFailure("AC run past the end of the block")
        ac.append((rs, reader.receive_extend(size)))
        k += 1
    if k > 64:
        raise HuffmanDecodeFailure("zero run past the end of the block")
    return DataUnit(component=ci, dc_size=dc_size, dc_diff=dc_diff, ac=tuple(ac))


def _blocks_for_walk(jpeg: SegmentedJpeg) -> list[ExtendedBlock]:
    if jpeg.restart_interval:
        return split_extended_blocks(jpeg)
    scan = jpeg.scan
    i = scan.find(b"\xff")
    while i >= 0 and i + 1 < len(scan):
        if RST0 <= scan[i + 1] <= RST7:
            raise MarkerDesyncError("restart marker in a scan without DRI")
        i = scan.find(b"\xff", i + 2)
    return [ExtendedBlock(index=0, start=0, end=len(scan))]


def walk_scan(jpeg: SegmentedJpeg, tables: CodingTables) -> tuple[ScanMap, DecodedScan]:
    """
    Decode the scan and label every bit.

    DC prediction restarts from 0 after each RSTn. Each extended block must end
    with fewer than 8 fill bits before its marker.

    Raises:
        HuffmanDecodeFailure: no code matches, or a run overflows a block.
        TruncatedScan: the scan ends before the last MCU is complete.
        MarkerDesyncError: a restart marker arrives mid-MCU, or data is left over.
        InvalidHuffmanSpec: a referenced table has no codes.
    """
    scan = jpeg.scan
    n = len(scan)
    ri = jpeg.restart_interval
    mcu_total = tables.mcu_count
    upm = tables.units_per_mcu
    if n == 0:
        raise TruncatedScan("scan is empty")

    roles = bytearray([_UNLABELED]) * (8 * n)
    byte_blocks = np.full(n, -1, dtype=np.int32)
    blocks = _blocks_for_walk(jpeg)

    marker_bits = bytes([BitRole.MARKER]) * 16
    for b in blocks[:-1]:
        roles[b.end * 8 : (b.end + 2) * 8] = marker_bits

    mcu_spans = np.zeros((mcu_total, 2), dtype=np.int64)
    mcu_blocks = np.zeros(mcu_total, dtype=np.int32)
    units: list[DataUnit] = []
    per_block = ri if ri else mcu_total
    last = len(blocks) - 1

    m = 0
    for b in blocks:
        byte_blocks[b.start : b.end] = b.index
        positions = _data_positions(scan, b.start, b.end, roles)
        reader = _BitReader(scan, positions, roles)
        count = min(per_block, mcu_total - m)
        try:
            for _ in range(count):
                mcu_spans[m, 0] = reader.scan_bit()
                for ci, _, _ in tables.units:
                    units.append(_decode_unit(reader, tables, ci))
                prev = reader.bitpos - 1
                mcu_spans[m, 1] = positions[prev >> 3] * 8 + (prev & 7) + 1
                mcu_blocks[m] = b.index
                m += 1
        except (_OutOfBits, IndexError):
            if b.index == last:
                raise TruncatedScan(f"scan ends inside MCU {m}") from None
            raise MarkerDesyncError(f"RST{b.index % 8} reached inside MCU {m}") from None

        leftover = reader.pad()
        if leftover >= 8:
            raise MarkerDesyncError(
                f"{leftover} unused bits at the end of extended block {b.index}"
            )

    if roles.find(_UNLABELED) >= 0:
        raise MarkerDesyncError("scan bytes outside any MCU")

    role_arr = np.frombuffer(bytes(roles), dtype=np.uint8)
    patterns = _classify_bytes(scan, role_arr)

    decoded = DecodedScan(units=tuple(units), units_per_mcu=upm, mcu_count=mcu_total, restart_interval=ri)
    coeff_counts, ac_counts = _nonzero_counts(decoded)

    scan_map = ScanMap(
        bit_roles=role_arr,
        byte_patterns=patterns,
        byte_blocks=byte_blocks,
        mcu_spans=mcu_spans,
        mcu_blocks=mcu_blocks,
        coeff_counts=coeff_counts,
        ac_counts=ac_counts,
        restart_interval=ri,
    )
    logger.debug("walked %d MCUs in %d blocks: %s", mcu_total, len(blocks), scan_map.pattern_counts())
    return scan_map, decoded


def _classify_bytes(scan: bytes, roles: np.ndarray) -> np.ndarray:
    r = roles.reshape(-1, 8)
    bits = np.unpackbits(np.frombuffer(scan, dtype=np.uint8)).reshape(-1, 8)
    is_hc = r == BitRole.HUFFMAN_CODE
    is_ab = r == BitRole.ADDITIONAL_BIT

    has_pad = (r == BitRole.PADDING_BIT).any(axis=1)
    mixed = is_hc.any(axis=1) & is_ab.any(axis=1) & ~has_pad
    hc_zero = (is_hc & (bits == 0)).any(axis=1)

    out = np.zeros(r.shape[0], dtype=np.uint8)
    out[is_hc.all(axis=1)] = BytePattern.P1
    out[is_ab.all(axis=1)] = BytePattern.P2
    out[mixed & ~hc_zero] = BytePattern.P3
    out[mixed & hc_zero] = BytePattern.P4
    out[(r == BitRole.STUFFED_ZERO).all(axis=1)] = BytePattern.P5
    out[(r == BitRole.MARKER).all(axis=1)] = BytePattern.MARKER
    out[has_pad] = BytePattern.PADDING
    if (out == 0).any():
        raise MarkerDesyncError("scan byte without a class")
    return out


def _nonzero_counts(decoded: DecodedScan) -> tuple[np.ndarray, np.ndarray]:
    upm = decoded.units_per_mcu
    dc = decoded.dc_values()
    ac = np.array(
        [sum(1 for sym, _ in u.ac if sym not in (EOB, ZRL)) for u in decoded.units],
        dtype=np.int32,
    )
    total = ac + (dc != 0).astype(np.int32)
    return total.reshape(-1, upm), ac.reshape(-1, upm)


def count_pattern4(scan_map: ScanMap, region: Optional[set[int]] = None) -> int:
    """Number of P4 bytes, optionally only inside the given extended blocks."""
    mask = scan_map.byte_patterns == BytePattern.P4
    if region is not None:
        mask &= np.isin(scan_map.byte_blocks, np.fromiter(region, dtype=np.int32))
    return int(mask.sum())


# --- Re-encoding ---

def _magnitude_category(value: int) -> int:
    return abs(value).bit_length()


def _additional_bits(value: int, size: int) -> int:
    return value if value >= 0 else value + (1 << size) - 1


class _BitWriter:
    """Packs bits MSB-first, stuffs 00 after every FF, pads with 1-bits."""

    def __init__(self) -> None:
        self.out = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, value: int, length: int) -> None:
        self.acc = (self.acc << length) | (value & ((1 << length) - 1))
        self.nbits += length
        while self.nbits >= 8:
            self.nbits -= 8
            byte = (self.acc >> self.nbits) & 0xFF
            self.out.append(byte)
            if byte == 0xFF:
                self.out.append(0x00)
        self.acc &= (1 << self.nbits) - 1

    def pad(self) -> None:
        if self.nbits:
            fill = 8 - self.nbits
            self.write((1 << fill) - 1, fill)

    def marker(self, index: int) -> None:
        self.pad()
        self.out += bytes((0xFF, RST0 + index % 8))


def encode_scan(decoded: DecodedScan, tables: CodingTables) -> bytes:
    """
    Huffman-code a symbol stream, inserting RSTn every `restart_interval` MCUs.

    Raises:
        MissingHuffmanCode: a symbol has no code in its table.
    """
    w = _BitWriter()
    ri = decoded.restart_interval
    for m in range(decoded.mcu_count):
        if ri and m and m % ri == 0:
            w.marker(m // ri - 1)
        for u in decoded.mcu(m):
            comp = tables.components[u.component]
            dc_table = tables.dc_tables[comp.dc_table]
            ac_table = tables.ac_tables[comp.ac_table]
            w.write(*dc_table.encode(u.dc_size))
            if u.dc_size:
                w.write(_additional_bits(u.dc_diff, u.dc_size), u.dc_size)
            for symbol, value in u.ac:
                w.write(*ac_table.encode(symbol))
                size = symbol & 0x0F
                if size:
                    w.write(_additional_bits(value, size), size)
    w.pad()
    return bytes(w.out)


def restructure(jpeg: SegmentedJpeg, tables: CodingTables, new_ri: int) -> SegmentedJpeg:
    """
    Re-encode the scan with RSTn markers every `new_ri` MCUs.

    Coefficients are untouched; only DC differences at interval starts change.
    The DRI segment is replaced, or inserted right before SOS.
    """
    if not 1 <= new_ri <= 0xFFFF:
        raise ValueError(f"restart interval must be in [1, 65535], got {new_ri}")
    _, decoded = walk_scan(jpeg, tables)
    scan = encode_scan(decoded.with_restart_interval(new_ri), tables)

    dri = Segment(marker=MarkerCode(code=DRI), payload=struct.pack(">H", new_ri))
    pre = [s for s in jpeg.pre_scan]
    idx = next((i for i, s in enumerate(pre) if s.marker.code == DRI), None)
    if idx is None:
        pre.insert(len(pre) - 1, dri)
    else:
        pre[idx] = dri

    out = SegmentedJpeg(
        pre_scan=tuple(pre),
        scan=scan,
        post_scan=jpeg.post_scan,
        restart_interval=new_ri,
    )
    logger.info(
        "restructured to RI=%d: %d MCUs, %d blocks, scan %d -> %d bytes",
        new_ri, decoded.mcu_count, math.ceil(decoded.mcu_count / new_ri), len(jpeg.scan), len(scan),
    )
    return out
