"""
Bitstream encryption with restart markers.

Encryption runs in two passes over a scan whose restart interval already
matches the recipe:

1) XOR: every additional bit inside a P4 byte of a selected extended block is
   XORed with the next bit of the K1 keystream, in scan order.
2) Permute: the selected extended blocks are shuffled with a Fisher-Yates
   permutation driven by the K2 keystream; RSTn indices are rewritten so they
   still cycle 0..7.

Huffman-code bits, stuffed zeros, padding and markers are never changed, so the
output has the same length as the input, decodes with any baseline decoder, and
keeps each block's symbol stream. Decryption undoes the permutation first and
then reapplies the same XOR.

Keystreams come from HMAC_DRBG (SHA-256) seeded with the 48-byte key as entropy
input and empty nonce/personalization.
"""

import hashlib
import hmac
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np

from rstcrypt.bitstream import ExtendedBlock, frame_header, join_extended_blocks, split_extended_blocks
from rstcrypt.config import get_settings
from rstcrypt.entropy import BitRole, ScanMap, build_tables, walk_scan
from rstcrypt.errors import BadKeyLength, EmptyRegion, RecipeMismatch
from rstcrypt.schemas import KEY_BYTES, BytePattern, EncryptionRecipe, RegionSpec, SegmentedJpeg

logger = logging.getLogger(__name__)

RESEED_INTERVAL = 1 << 48


# --- DRBG ---

class HmacDrbg:
    """
    HMAC_DRBG as specified in NIST SP 800-90A (no prediction resistance).
    """

    def __init__(
        self,
        entropy: bytes,
        nonce: bytes = b"",
        personalization: bytes = b"",
        digest: Callable = hashlib.sha256,
    ) -> None:
        self.digest = digest
        self.outlen = digest().digest_size
        if len(entropy) <= self.outlen // 2:
            raise BadKeyLength("not enough entropy input for HMAC_DRBG")
        self.K = b"\x00" * self.outlen
        self.V = b"\x01" * self.outlen
        self._update(entropy + nonce + personalization)
        self.reseed_counter = 1

    def reseed(self, entropy: bytes, additional: bytes = b"") -> None:
        self._update(entropy + additional)
        self.reseed_counter = 1

    def generate(self, n: int, additional: bytes = b"") -> bytes:
        if self.reseed_counter > RESEED_INTERVAL:
            raise RuntimeError("HMAC_DRBG reseed required")
        if additional:
            self._update(additional)
        out = bytearray()
        while len(out) < n:
            self.V = hmac.digest(self.K, self.V, self.digest)
            out += self.V
        self._update(additional)
        self.reseed_counter += 1
        return bytes(out[:n])

    def _update(self, data: bytes) -> None:
        self.K = hmac.digest(self.K, self.V + b"\x00" + data, self.digest)
        self.V = hmac.digest(self.K, self.V, self.digest)
        if data:
            self.K = hmac.digest(self.K, self.V + b"\x01" + data, self.digest)
            self.V = hmac.digest(self.K, self.V, self.digest)


class BitSource(Protocol):
    def take_bits(self, n: int) -> np.ndarray: ...

    def randbelow(self, n: int) -> int: ...


class Keystream:
    """
    Deterministic bit source for one key.

    Bits are handed out MSB-first from successive generate requests of
    `request_bytes` bytes. Single consumer only.
    """

    def __init__(self, key: bytes, request_bytes: Optional[int] = None) -> None:
        if len(key) != KEY_BYTES:
            raise BadKeyLength(f"key must be {KEY_BYTES} bytes, got {len(key)}")
        self.request_bytes = request_bytes or get_settings().keystream_request_bytes
        self._drbg = HmacDrbg(key)
        self._bits = np.zeros(0, dtype=np.uint8)
        self.position = 0

    def _fill(self, needed: int) -> None:
        available = self._bits.size - self.position
        if available >= needed:
            return
        chunks = [self._bits[self.position :]]
        while available < needed:
            raw = self._drbg.generate(self.request_bytes)
            chunks.append(np.unpackbits(np.frombuffer(raw, dtype=np.uint8)))
            available += 8 * self.request_bytes
        self._bits = np.concatenate(chunks)
        self.position = 0

    def take_bits(self, n: int) -> np.ndarray:
        """The next `n` keystream bits as a uint8 array of 0/1."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint8)
        self._fill(n)
        out = self._bits[self.position : self.position + n]
        self.position += n
        return out

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        if n == 1:
            return 0
        k = (n - 1).bit_length()
        weights = 1 << np.arange(k - 1, -1, -1, dtype=np.int64)
        while True:
            v = int(self.take_bits(k).astype(np.int64) @ weights)
            if v < n:
                return v


KeystreamFactory = Callable[[bytes], BitSource]


def keystream_new(key: bytes, request_bytes: Optional[int] = None) -> Keystream:
    """Instantiate the keystream for a 48-byte key."""
    return Keystream(key, request_bytes=request_bytes)


# --- Permutation ---

@dataclass(frozen=True)
class BlockPermutation:
    """`mapping[p] = q`: the block placed at position p is original block q."""

    mapping: tuple[int, ...]

    def __post_init__(self) -> None:
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise ValueError("mapping is not a bijection")

    def __len__(self) -> int:
        return len(self.mapping)

    @property
    def is_identity(self) -> bool:
        return all(p == q for p, q in enumerate(self.mapping))

    def inverse(self) -> "BlockPermutation":
        inv = [0] * len(self.mapping)
        for p, q in enumerate(self.mapping):
            inv[q] = p
        return BlockPermutation(tuple(inv))

    def apply(self, items: list) -> list:
        return [items[q] for q in self.mapping]


def derive_permutation(
    k2: bytes, n: int, *, keystream_factory: KeystreamFactory = keystream_new
) -> BlockPermutation:
    """Fisher-Yates shuffle of range(n) driven by the K2 keystream."""
    if n < 1:
        raise ValueError("permutation needs at least one block")
    ks = keystream_factory(k2)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = ks.randbelow(i + 1)
        order[i], order[j] = order[j], order[i]
    return BlockPermutation(tuple(order))


# --- Region ---

def select_blocks(jpeg: SegmentedJpeg, region: RegionSpec) -> list[int]:
    """
    Extended-block indices covered by `region`, sorted.

    Raises:
        EmptyRegion: nothing selected.
        RecipeMismatch: a block index beyond the last block.
    """
    frame = frame_header(jpeg)
    ri = jpeg.restart_interval
    n_blocks = math.ceil(frame.mcu_count / ri)

    if region.kind == "all":
        selected = set(range(n_blocks))
    elif region.kind == "blocks":
        bad = [b for b in region.blocks if b >= n_blocks]
        if bad:
            raise RecipeMismatch(f"block indices {bad} out of range (file has {n_blocks} blocks)")
        selected = set(region.blocks)
    else:
        x0, y0, x1, y1 = region.rect  # type: ignore[misc]
        x1, y1 = min(x1, frame.mcu_cols), min(y1, frame.mcu_rows)
        selected = {
            (y * frame.mcu_cols + x) // ri
            for y in range(y0, y1)
            for x in range(x0, x1)
        }
    if not selected:
        raise EmptyRegion(f"region {region.model_dump()} selects no extended block")
    return sorted(selected)


def block_order(
    jpeg: SegmentedJpeg,
    recipe: EncryptionRecipe,
    *,
    keystream_factory: KeystreamFactory = keystream_new,
) -> BlockPermutation:
    """
    Whole-scan block permutation produced by `recipe`.

    Identity outside the region and on a trailing block shorter than RI.
    """
    frame = frame_header(jpeg)
    n_blocks = math.ceil(frame.mcu_count / recipe.ri)
    order = list(range(n_blocks))
    if not recipe.permute:
        return BlockPermutation(tuple(order))

    movable = select_blocks(jpeg, recipe.region)
    if frame.mcu_count % recipe.ri:
        movable = [b for b in movable if b != n_blocks - 1]
    if len(movable) > 1:
        local = derive_permutation(recipe.k2, len(movable), keystream_factory=keystream_factory)
        for p, q in enumerate(local.mapping):
            order[movable[p]] = movable[q]
    return BlockPermutation(tuple(order))


# --- Encrypt / decrypt ---

def _check_recipe(jpeg: SegmentedJpeg, recipe: EncryptionRecipe) -> None:
    if jpeg.restart_interval != recipe.ri:
        raise RecipeMismatch(
            f"file has restart interval {jpeg.restart_interval}, recipe expects {recipe.ri}; "
            "restructure first"
        )


def _xor_mask(scan_map: ScanMap, selected: list[int]) -> np.ndarray:
    """Scan bit positions to XOR: additional bits of P4 bytes inside `selected` blocks."""
    in_region = np.isin(scan_map.byte_blocks, np.asarray(selected, dtype=np.int32))
    p4 = (scan_map.byte_patterns == BytePattern.P4) & in_region
    roles = scan_map.bit_roles.reshape(-1, 8)
    return ((roles == BitRole.ADDITIONAL_BIT) & p4[:, None]).reshape(-1)


def _apply_xor(
    jpeg: SegmentedJpeg,
    recipe: EncryptionRecipe,
    keystream_factory: KeystreamFactory,
) -> tuple[bytes, int]:
    tables = build_tables(jpeg)
    scan_map, _ = walk_scan(jpeg, tables)
    selected = select_blocks(jpeg, recipe.region)
    mask = _xor_mask(scan_map, selected)
    n_bits = int(mask.sum())

    bits = np.unpackbits(np.frombuffer(jpeg.scan, dtype=np.uint8))
    bits[mask] ^= keystream_factory(recipe.k1).take_bits(n_bits)
    return np.packbits(bits).tobytes(), n_bits


def _reorder(jpeg: SegmentedJpeg, scan: bytes, order: BlockPermutation) -> bytes:
    if order.is_identity:
        return scan
    blocks: list[ExtendedBlock] = split_extended_blocks(jpeg.model_copy(update={"scan": scan}))
    return join_extended_blocks(scan, blocks, list(order.mapping))


def encrypt(
    jpeg: SegmentedJpeg,
    recipe: EncryptionRecipe,
    *,
    keystream_factory: KeystreamFactory = keystream_new,
) -> SegmentedJpeg:
    """
    XOR then permute.

    Raises:
        RecipeMismatch: restart interval differs from the recipe, or a block
            index is out of range.
        EmptyRegion: the region selects nothing.
    """
    _check_recipe(jpeg, recipe)
    xored, n_bits = _apply_xor(jpeg, recipe, keystream_factory)
    order = block_order(jpeg, recipe, keystream_factory=keystream_factory)
    scan = _reorder(jpeg, xored, order)

    moved = sum(1 for p, q in enumerate(order.mapping) if p != q)
    logger.info("encrypted: %d additional bits XORed, %d of %d blocks moved", n_bits, moved, len(order))
    return jpeg.model_copy(update={"scan": scan})


def decrypt(
    jpeg: SegmentedJpeg,
    recipe: EncryptionRecipe,
    *,
    keystream_factory: KeystreamFactory = keystream_new,
) -> SegmentedJpeg:
    """
    Inverse permutation, then the same XOR.

    There is no integrity check: a wrong key or region yields a valid but
    garbled image.
    """
    _check_recipe(jpeg, recipe)
    order = block_order(jpeg, recipe, keystream_factory=keystream_factory)
    restored = jpeg.model_copy(update={"scan": _reorder(jpeg, jpeg.scan, order.inverse())})
    scan, n_bits = _apply_xor(restored, recipe, keystream_factory)
    logger.info("decrypted: %d additional bits restored", n_bits)
    return restored.model_copy(update={"scan": scan})
