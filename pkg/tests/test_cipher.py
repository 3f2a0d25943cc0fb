"""Tests for the DRBG keystream, block permutation, and encrypt/decrypt."""

import hashlib
import io
from collections import Counter

import numpy as np
import pytest
from PIL import Image
from scipy import stats

from rstcrypt.bitstream import serialize, split_extended_blocks
from rstcrypt.cipher import (
    BlockPermutation,
    HmacDrbg,
    Keystream,
    block_order,
    decrypt,
    derive_permutation,
    encrypt,
    select_blocks,
)
from rstcrypt.entropy import build_tables, walk_scan
from rstcrypt.errors import BadKeyLength, EmptyRegion, RecipeMismatch
from rstcrypt.pixels import RasterImage, ssim
from rstcrypt.schemas import BytePattern, EncryptionRecipe, RegionSpec
from rstcrypt.utils import flip_bit

# NIST CAVP HMAC_DRBG SHA-256, no prediction resistance, no additional input.
KAT_ENTROPY = "06032cd5eed33f39265f49ecb142c511da9aff2af71203bffaf34a9ca5bd9c0d"
KAT_NONCE = "0e66f71edc43e42a45ad3c6fc6cdc4df"
KAT_RESEED = "01920a4e669ed3a85ae8a33b35a74ad7fb2a6bb4cf395ce00334a9c9a5a5d552"
KAT_OUTPUT = (
    "76fc79fe9b50beccc991a11b5635783a83536add03c157fb30645e611c2898bb"
    "2b1bc215000209208cd506cb28da2a51bdb03826aaf2bd2335d576d519160842"
    "e7158ad0949d1a9ec3e66ea1b1a064b005de914eac2e9d4f2d72a8616a802254"
    "22918250ff66a41bd2f864a6a38cc5b6499dc43f7f2bd09e1e0f8f5885935124"
)


class _ZeroStream:
    """Keystream stand-in: all-zero bits and a Fisher-Yates that never swaps."""

    def take_bits(self, n: int) -> np.ndarray:
        return np.zeros(n, dtype=np.uint8)

    def randbelow(self, n: int) -> int:
        return n - 1


def _recipe(keys, ri: int, region: str = "all", permute: bool = True) -> EncryptionRecipe:
    k1, k2 = keys
    return EncryptionRecipe(ri=ri, region=RegionSpec.parse(region), k1=k1, k2=k2, permute=permute)


def _pil(jpeg) -> np.ndarray:
    image = Image.open(io.BytesIO(serialize(jpeg)))
    image.load()
    return np.asarray(image)


def test_hmac_drbg_known_answer() -> None:
    drbg = HmacDrbg(bytes.fromhex(KAT_ENTROPY), nonce=bytes.fromhex(KAT_NONCE))
    drbg.reseed(bytes.fromhex(KAT_RESEED))
    drbg.generate(128)
    assert drbg.generate(128).hex() == KAT_OUTPUT


def test_hmac_drbg_rejects_short_entropy() -> None:
    with pytest.raises(BadKeyLength):
        HmacDrbg(b"\x00" * 16)


def test_keystream_is_deterministic(keys) -> None:
    a = Keystream(keys[0]).take_bits(5000)
    b = Keystream(keys[0]).take_bits(5000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, Keystream(keys[1]).take_bits(5000))


def test_take_sizes_do_not_change_bits(keys) -> None:
    whole = Keystream(keys[0], request_bytes=7).take_bits(20000)
    ks = Keystream(keys[0], request_bytes=7)
    parts = np.concatenate([ks.take_bits(n) for n in (1, 13, 999, 18987)])
    assert np.array_equal(whole, parts)


def test_request_size_changes_the_stream(keys) -> None:
    # each generate request updates the DRBG state, so the request size is part of the key schedule
    a = Keystream(keys[0], request_bytes=1024).take_bits(8 * 64)
    b = Keystream(keys[0], request_bytes=32).take_bits(8 * 64)
    assert np.array_equal(a[:256], b[:256])
    assert not np.array_equal(a[256:], b[256:])


def test_keystream_rejects_bad_key_length() -> None:
    with pytest.raises(BadKeyLength, match="48"):
        Keystream(b"\x01" * 47)


def test_one_bit_key_change_decorrelates(keys) -> None:
    a = Keystream(keys[0]).take_bits(1024)
    b = Keystream(flip_bit(keys[0], 200)).take_bits(1024)
    assert 412 <= int((a != b).sum()) <= 612


def test_keystream_balance(keys) -> None:
    ones = Keystream(keys[1]).take_bits(1_000_000).mean()
    assert 0.49 < ones < 0.51


def test_randbelow_range(keys) -> None:
    ks = Keystream(keys[0])
    draws = [ks.randbelow(5) for _ in range(500)]
    assert set(draws) == {0, 1, 2, 3, 4}
    assert ks.randbelow(1) == 0
    with pytest.raises(ValueError):
        ks.randbelow(0)


def test_permutation_basics(keys) -> None:
    assert derive_permutation(keys[1], 1).mapping == (0,)
    perm = derive_permutation(keys[1], 192)
    assert sorted(perm.mapping) == list(range(192))
    assert perm == derive_permutation(keys[1], 192)
    assert not perm.is_identity
    assert perm.inverse().apply(perm.apply(list(range(192)))) == list(range(192))


def test_permutation_rejects_non_bijection() -> None:
    with pytest.raises(ValueError):
        BlockPermutation((0, 0, 1))


def test_permutation_is_uniform() -> None:
    counts = Counter(
        derive_permutation(hashlib.sha384(i.to_bytes(4, "big")).digest(), 4).mapping for i in range(2400)
    )
    assert len(counts) == 24
    observed = [counts[p] for p in sorted(counts)]
    assert stats.chisquare(observed).pvalue > 0.001


@pytest.mark.parametrize("ri", [1, 2, 4, 5])
@pytest.mark.parametrize("region", ["all", "blocks:0,2", "1,1,4,3"])
def test_round_trip(color_jpeg: bytes, at_ri, keys, ri: int, region: str) -> None:
    jpeg = at_ri(color_jpeg, ri)
    recipe = _recipe(keys, ri, region)
    enc = encrypt(jpeg, recipe)
    assert enc.scan != jpeg.scan
    assert serialize(decrypt(enc, recipe)) == serialize(jpeg)


def test_encryption_preserves_size_and_header(color_jpeg: bytes, at_ri, keys) -> None:
    jpeg = at_ri(color_jpeg, 2)
    enc = encrypt(jpeg, _recipe(keys, 2))
    assert len(serialize(enc)) == len(serialize(jpeg))
    assert enc.pre_scan == jpeg.pre_scan
    assert enc.post_scan == jpeg.post_scan
    assert _pil(enc).shape == (64, 96, 3)


@pytest.mark.parametrize("fixture", ["odd_jpeg", "jpeg_444", "gray_jpeg"])
def test_round_trip_other_layouts(fixture: str, request, at_ri, keys) -> None:
    jpeg = at_ri(request.getfixturevalue(fixture), 3)
    recipe = _recipe(keys, 3)
    enc = encrypt(jpeg, recipe)
    _pil(enc)
    assert decrypt(enc, recipe).scan == jpeg.scan


def test_zero_keystream_is_identity(color_jpeg: bytes, at_ri, keys) -> None:
    jpeg = at_ri(color_jpeg, 2)
    enc = encrypt(jpeg, _recipe(keys, 2), keystream_factory=lambda key: _ZeroStream())
    assert enc.scan == jpeg.scan


def test_symbols_and_counts_follow_blocks(color_jpeg: bytes, at_ri, keys) -> None:
    ri = 4
    jpeg = at_ri(color_jpeg, ri)
    recipe = _recipe(keys, ri)
    enc = encrypt(jpeg, recipe)
    tables = build_tables(jpeg)
    before, _ = walk_scan(jpeg, tables)
    after, _ = walk_scan(enc, tables)
    order = block_order(jpeg, recipe)
    assert not order.is_identity
    for p, q in enumerate(order.mapping):
        assert np.array_equal(after.ac_counts[p * ri : (p + 1) * ri], before.ac_counts[q * ri : (q + 1) * ri])
    assert after.pattern_counts() == before.pattern_counts()


def test_xor_only_keeps_block_order(color_jpeg: bytes, at_ri, keys) -> None:
    jpeg = at_ri(color_jpeg, 4)
    recipe = _recipe(keys, 4, permute=False)
    assert block_order(jpeg, recipe).is_identity
    enc = encrypt(jpeg, recipe)
    before = split_extended_blocks(jpeg)
    after = split_extended_blocks(enc)
    assert [(b.start, b.end) for b in before] == [(b.start, b.end) for b in after]
    assert decrypt(enc, recipe).scan == jpeg.scan


def test_trailing_short_block_stays(odd_jpeg: bytes, at_ri, keys) -> None:
    # 35 MCUs at RI=4: block 8 holds 3 MCUs
    jpeg = at_ri(odd_jpeg, 4)
    order = block_order(jpeg, _recipe(keys, 4))
    assert order.mapping[8] == 8


def test_select_blocks_rect(jpeg_444: bytes, at_ri) -> None:
    jpeg = at_ri(jpeg_444, 2)
    # 8x6 MCUs, two per block: rows 0..2, columns 0..3
    assert select_blocks(jpeg, RegionSpec.parse("0,0,4,3")) == [0, 1, 4, 5, 8, 9]
    assert select_blocks(jpeg, RegionSpec.parse("blocks:7,3")) == [3, 7]
    assert len(select_blocks(jpeg, RegionSpec())) == 24


def test_region_errors(jpeg_444: bytes, at_ri) -> None:
    jpeg = at_ri(jpeg_444, 2)
    with pytest.raises(EmptyRegion):
        select_blocks(jpeg, RegionSpec.parse("10,10,12,12"))
    with pytest.raises(RecipeMismatch, match="out of range"):
        select_blocks(jpeg, RegionSpec.parse("blocks:24"))


def test_restart_interval_mismatch(color_jpeg: bytes, at_ri, keys) -> None:
    jpeg = at_ri(color_jpeg, 2)
    with pytest.raises(RecipeMismatch, match="restructure"):
        encrypt(jpeg, _recipe(keys, 4))
    with pytest.raises(RecipeMismatch):
        decrypt(jpeg, _recipe(keys, 4))


def test_partial_region_leaves_outside_pixels(jpeg_444: bytes, at_ri, keys) -> None:
    jpeg = at_ri(jpeg_444, 2)
    enc = encrypt(jpeg, _recipe(keys, 2, "0,0,4,3"))
    before, after = _pil(jpeg), _pil(enc)
    assert np.array_equal(before[:, 32:], after[:, 32:])
    assert np.array_equal(before[24:], after[24:])
    assert not np.array_equal(before[:24, :32], after[:24, :32])


def test_wrong_key_does_not_decrypt(color_jpeg: bytes, at_ri, keys) -> None:
    jpeg = at_ri(color_jpeg, 1)
    enc = encrypt(jpeg, _recipe(keys, 1))
    wrong = _recipe((flip_bit(keys[0], 3), flip_bit(keys[1], 3)), 1)
    garbled = decrypt(enc, wrong)
    assert garbled.scan != jpeg.scan
    score = ssim(RasterImage.from_array(_pil(jpeg)), RasterImage.from_array(_pil(garbled)))
    assert score < 0.9


def test_encryption_never_creates_or_removes_ff(color_jpeg: bytes, at_ri) -> None:
    jpeg = at_ri(color_jpeg, 2)
    scan_map, _ = walk_scan(jpeg, build_tables(jpeg))
    plain = np.frombuffer(jpeg.scan, dtype=np.uint8)
    p4 = scan_map.byte_patterns == BytePattern.P4
    stuffed = jpeg.scan.count(b"\xff\x00")

    for i in range(40):
        k1 = hashlib.sha384(b"k1" + i.to_bytes(2, "big")).digest()
        k2 = hashlib.sha384(b"k2" + i.to_bytes(2, "big")).digest()

        xored = np.frombuffer(encrypt(jpeg, EncryptionRecipe(ri=2, k1=k1, k2=k2, permute=False)).scan, dtype=np.uint8)
        assert xored.size == plain.size
        assert np.array_equal(xored == 0xFF, plain == 0xFF)
        assert not (xored[p4] == 0xFF).any()
        assert np.array_equal(xored[~p4], plain[~p4])

        full = encrypt(jpeg, EncryptionRecipe(ri=2, k1=k1, k2=k2)).scan
        assert full.count(b"\xff\x00") == stuffed
        assert full.count(b"\xff") == jpeg.scan.count(b"\xff")
