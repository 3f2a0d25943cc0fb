"""
Ciphertext-only evaluation.

- key_space: bits of keystream actually used plus log2 of the block-permutation count
- nzca: non-zero-coefficient sketch read straight from the entropy symbols
- histogram_report: per-channel 256-bin histograms and their similarities
- sensitivity_experiment: SSIM distributions under one-bit key changes
- evaluate_image / summarize: the full battery for one file and for a corpus
"""

import logging
import math
import shlex
import shutil
import subprocess
from dataclasses import dataclass, field
from itertools import combinations
from typing import Literal, Optional, Sequence

import numpy as np
from PIL import Image, ImageOps
from scipy.stats import ks_2samp

from rstcrypt.bitstream import parse, serialize
from rstcrypt.cipher import BlockPermutation, block_order, decrypt, encrypt
from rstcrypt.config import get_settings
from rstcrypt.entropy import build_tables, count_pattern4, restructure, walk_scan
from rstcrypt.errors import ChannelMismatch
from rstcrypt.pixels import RasterImage, decode_pixels, quality, ssim
from rstcrypt.schemas import (
    ChannelHistogram,
    EncryptionRecipe,
    EvaluationSummary,
    HistogramReport,
    HistogramSimilarity,
    ImageEvaluation,
    IntervalSummary,
    KeySpaceReport,
    NzcaReport,
    QualityScore,
    SegmentedJpeg,
    SensitivityReport,
)
from rstcrypt.utils import boxplot_stats, experiment_keys, flip_bit

logger = logging.getLogger(__name__)

_EXACT_FACTORIAL_LIMIT = 20


# --- Key space ---

def log2_factorial(n: int) -> float:
    if n < 0:
        raise ValueError("n must be non-negative")
    if n <= _EXACT_FACTORIAL_LIMIT:
        return math.log2(math.factorial(n))
    return math.lgamma(n + 1) / math.log(2)


def key_space(M: int, N: int, r: int, T: int, *, mcu_count: Optional[int] = None) -> KeySpaceReport:
    """
    Key space of one encrypted file.

    Encryption keys span between T and 7T bits (one to seven additional bits per
    P4 byte); the permutation adds log2(n!) with
    n = floor(ceil(M/16) * ceil(N/16) / r). Pass `mcu_count` for layouts whose
    MCU is not 16x16; the 16x16 minimum only applies to the formula without it,
    so frames smaller than one 4:2:0 MCU are fine when the count is given.
    """
    if mcu_count is None and (M < 16 or N < 16):
        raise ValueError(f"image must be at least 16x16, got {M}x{N}")
    if r < 1 or T < 0:
        raise ValueError("r must be >= 1 and T >= 0")
    mcus = mcu_count if mcu_count is not None else math.ceil(M / 16) * math.ceil(N / 16)
    n = mcus // r
    bp = log2_factorial(n)
    return KeySpaceReport(
        width=M,
        height=N,
        ri=r,
        T=T,
        block_count=n,
        s_enc_min_bits=T,
        s_enc_max_bits=7 * T,
        s_bp_log2=bp,
        s_min_bits=T + bp,
        s_max_bits=7 * T + bp,
    )


def key_space_for_jpeg(jpeg: SegmentedJpeg, ri: int) -> KeySpaceReport:
    """Count P4 bytes after restructuring to `ri` and report the key space."""
    tables = build_tables(jpeg)
    if jpeg.restart_interval != ri:
        jpeg = restructure(jpeg, tables, ri)
    scan_map, _ = walk_scan(jpeg, tables)
    frame = tables.frame
    return key_space(frame.width, frame.height, ri, count_pattern4(scan_map), mcu_count=frame.mcu_count)


# --- NZCA ---

@dataclass(frozen=True, eq=False)
class SketchImage:
    """
    Non-zero AC coefficient counts of every luma block.

    `tiles[m]` holds the counts of MCU m's luma blocks in coding order; the
    block grid is cropped to ceil(H/8) x ceil(W/8).
    """

    tiles: np.ndarray
    mcu_cols: int
    mcu_rows: int
    tile_v: int
    tile_h: int
    height_blocks: int
    width_blocks: int

    @property
    def counts(self) -> np.ndarray:
        grid = (
            self.tiles.reshape(self.mcu_rows, self.mcu_cols, self.tile_v, self.tile_h)
            .transpose(0, 2, 1, 3)
            .reshape(self.mcu_rows * self.tile_v, self.mcu_cols * self.tile_h)
        )
        return grid[: self.height_blocks, : self.width_blocks]

    def to_gray(self) -> np.ndarray:
        return _render(self.counts)

    def per_mcu(self) -> np.ndarray:
        """Coarser rendering: mean count of each MCU's luma blocks."""
        return _render(self.tiles.mean(axis=1).reshape(self.mcu_rows, self.mcu_cols))

    def equalized(self) -> np.ndarray:
        return np.asarray(ImageOps.equalize(Image.fromarray(self.to_gray())))

    def to_raster(self, rendering: str = "blocks") -> RasterImage:
        renders = {"blocks": self.to_gray, "mcu": self.per_mcu, "equalized": self.equalized}
        return RasterImage.from_array(renders[rendering]())

    def to_report(self) -> NzcaReport:
        return NzcaReport(
            width_blocks=self.width_blocks,
            height_blocks=self.height_blocks,
            counts=self.counts.tolist(),
        )

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SketchImage) and np.array_equal(self.counts, other.counts)


def _render(counts: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(counts * 255.0 / 64.0 + 0.5), 0, 255).astype(np.uint8)


def nzca(jpeg: SegmentedJpeg) -> SketchImage:
    """Sketch from entropy symbols only; works on encrypted files unchanged."""
    tables = build_tables(jpeg)
    scan_map, _ = walk_scan(jpeg, tables)
    frame = tables.frame
    luma_units = tables.luma_units()
    y = tables.components[0]
    tile_v, tile_h = (y.v, y.h) if tables.interleaved else (1, 1)
    return SketchImage(
        tiles=scan_map.ac_counts[:, luma_units].astype(np.int32),
        mcu_cols=tables.mcu_cols,
        mcu_rows=tables.mcu_rows,
        tile_v=tile_v,
        tile_h=tile_h,
        height_blocks=math.ceil(frame.height / 8),
        width_blocks=math.ceil(frame.width / 8),
    )


def permute_sketch(sketch: SketchImage, order: BlockPermutation, ri: int) -> SketchImage:
    """Move MCU tiles the way `order` moves extended blocks of `ri` MCUs."""
    m = np.arange(sketch.tiles.shape[0])
    mapping = np.asarray(order.mapping)
    source = mapping[m // ri] * ri + m % ri
    return SketchImage(
        tiles=sketch.tiles[source],
        mcu_cols=sketch.mcu_cols,
        mcu_rows=sketch.mcu_rows,
        tile_v=sketch.tile_v,
        tile_h=sketch.tile_h,
        height_blocks=sketch.height_blocks,
        width_blocks=sketch.width_blocks,
    )


# --- Histograms ---

_CHANNELS = ("R", "G", "B")


def _similarity(name_a: str, a: np.ndarray, name_b: str, b: np.ndarray) -> HistogramSimilarity:
    p = a / a.sum()
    q = b / b.sum()
    intersection = float(np.minimum(p, q).sum())

    dp, dq = p - p.mean(), q - q.mean()
    denom = math.sqrt(float((dp * dp).sum()) * float((dq * dq).sum()))
    if denom == 0.0:
        pearson = 1.0 if np.array_equal(p, q) else 0.0
    else:
        pearson = float((dp * dq).sum() / denom)

    s = p + q
    nz = s > 0
    chi = float((((p - q) ** 2)[nz] / s[nz]).sum())
    return HistogramSimilarity(a=name_a, b=name_b, intersection=intersection, pearson=pearson, chi_square=chi)


def _channel_counts(img: RasterImage) -> list[np.ndarray]:
    if img.channels != 3:
        raise ChannelMismatch(f"histogram analysis needs 3 channels, got {img.channels}")
    return [np.bincount(img.samples[:, :, c].ravel(), minlength=256) for c in range(3)]


def histogram_report(img: RasterImage, reference: Optional[RasterImage] = None) -> HistogramReport:
    """
    Per-channel histograms, R/G/B pairwise similarity, and similarity to `reference`.

    Histogram intersection of normalized bins is the headline score; Pearson
    correlation of the same bins is averaged alongside.
    """
    counts = _channel_counts(img)
    pairwise = [
        _similarity(_CHANNELS[i], counts[i], _CHANNELS[j], counts[j])
        for i, j in combinations(range(3), 2)
    ]
    report = HistogramReport(
        pixel_count=img.width * img.height,
        channels=[ChannelHistogram(channel=_CHANNELS[c], counts=counts[c].tolist()) for c in range(3)],
        pairwise=pairwise,
        mean_inter_channel_similarity=float(np.mean([s.intersection for s in pairwise])),
        mean_inter_channel_pearson=float(np.mean([s.pearson for s in pairwise])),
    )
    if reference is not None:
        ref_counts = _channel_counts(reference)
        to_ref = [
            _similarity(_CHANNELS[c], counts[c], f"ref.{_CHANNELS[c]}", ref_counts[c]) for c in range(3)
        ]
        report.to_reference = to_ref
        report.similarity_to_reference = float(np.mean([s.intersection for s in to_ref]))
        report.pearson_to_reference = float(np.mean([s.pearson for s in to_ref]))
    return report


# --- Visual protection and key sensitivity ---

def visual_protection(original: RasterImage, encrypted: RasterImage) -> QualityScore:
    return quality(original, encrypted)


def sensitivity_experiment(
    x: SegmentedJpeg,
    recipe: EncryptionRecipe,
    trials: int,
    *,
    seed: int = 0,
    flip_targets: Sequence[str] = ("k1", "k2"),
    image: str = "",
    case2_threshold: Optional[float] = None,
) -> SensitivityReport:
    """
    SSIM distributions for one-bit key changes.

    - control: correct-key decryption vs the original
    - case1: encryption under k vs encryption under k with one bit flipped
    - independent: encryption under k vs encryption under an unrelated key pair
    - case2: decryption with the flipped key vs the original
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not flip_targets or any(t not in ("k1", "k2") for t in flip_targets):
        raise ValueError(f"flip targets must be k1 and/or k2, got {list(flip_targets)}")
    threshold = case2_threshold if case2_threshold is not None else get_settings().case2_ssim_threshold

    tables = build_tables(x)
    if x.restart_interval != recipe.ri:
        x = restructure(x, tables, recipe.ri)
    plain = decode_pixels(x, tables)
    enc = encrypt(x, recipe)
    enc_pixels = decode_pixels(enc, tables)
    control = ssim(plain, decode_pixels(decrypt(enc, recipe), tables))

    rng = np.random.default_rng(seed)
    case1, independent, case2 = [], [], []
    for _ in range(trials):
        target = str(rng.choice(list(flip_targets)))
        position = int(rng.integers(0, 8 * len(recipe.k1)))
        flipped = recipe.model_copy(update={target: flip_bit(getattr(recipe, target), position)})
        k1, k2 = experiment_keys(rng)
        other = recipe.model_copy(update={"k1": k1, "k2": k2})

        case1.append(ssim(enc_pixels, decode_pixels(encrypt(x, flipped), tables)))
        independent.append(ssim(enc_pixels, decode_pixels(encrypt(x, other), tables)))
        case2.append(ssim(plain, decode_pixels(decrypt(enc, flipped), tables)))

    ks = ks_2samp(case1, independent)
    case2_stats = boxplot_stats(case2)
    logger.info(
        "sensitivity %s: case1 median %.4f, independent median %.4f, case2 median %.4f, KS p=%.3f",
        image or "<image>", np.median(case1), np.median(independent), case2_stats.p50, ks.pvalue,
    )
    return SensitivityReport(
        image=image,
        ri=recipe.ri,
        trials=trials,
        flip_targets=list(flip_targets),
        control=boxplot_stats([control]),
        case1=boxplot_stats(case1),
        independent=boxplot_stats(independent),
        case2=case2_stats,
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        case1_matches_independent=bool(ks.pvalue >= 0.05),
        control_exact=control == 1.0,
        case2_threshold=threshold,
        case2_below_threshold=case2_stats.p50 < threshold,
    )


# --- Evaluation battery ---

def reference_decode_ok(data: bytes, command: Optional[str] = None) -> Optional[bool]:
    """
    Decode `data` with an external libjpeg decoder (djpeg by default).

    Returns True for a clean decode and False when the decoder fails, exits
    non-zero or prints anything to stderr: libjpeg reports "Corrupt JPEG data"
    warnings there and djpeg exits with status 2 after one. Returns None when
    the decoder is not installed.
    """
    argv = shlex.split(command or get_settings().reference_decoder_command)
    exe = shutil.which(argv[0]) if argv else None
    if exe is None:
        logger.warning("reference decoder %r not found; conformance check skipped", argv[0] if argv else "")
        return None
    try:
        result = subprocess.run([exe, *argv[1:]], input=data, capture_output=True, timeout=120)
    except (OSError, subprocess.TimeoutExpired) as e:
        logger.warning("reference decoder could not run: %s", e)
        return None
    message = result.stderr.decode("utf-8", "replace").strip()
    if result.returncode != 0 or message:
        logger.warning("reference decoder rejected the file (exit %d): %s", result.returncode, message)
        return False
    return True


@dataclass
class EvaluationArtifacts:
    """Everything `evaluate_image` produces besides its report."""

    restructured: bytes
    encrypted: bytes
    ablation: bytes
    sketches: dict[str, SketchImage] = field(default_factory=dict)
    histograms: dict[str, HistogramReport] = field(default_factory=dict)


def evaluate_image(
    data: bytes,
    name: str,
    ri: int,
    k1: bytes,
    k2: bytes,
    *,
    reference_decoder: bool = True,
) -> tuple[ImageEvaluation, EvaluationArtifacts]:
    """
    Restructure to `ri`, encrypt, and run every check on one file.

    Verification failures are collected in `failures`; format errors propagate.
    """
    x = parse(data)
    tables = build_tables(x)
    if x.restart_interval != ri:
        x = restructure(x, tables, ri)
    plain_bytes = serialize(x)
    recipe = EncryptionRecipe(ri=ri, k1=k1, k2=k2)
    ablation_recipe = recipe.model_copy(update={"permute": False})

    enc = encrypt(x, recipe)
    enc_bytes = serialize(enc)
    abl = encrypt(x, ablation_recipe)
    round_trip = serialize(decrypt(enc, recipe)) == plain_bytes
    size_preserved = len(enc_bytes) == len(plain_bytes)
    ref_ok = reference_decode_ok(enc_bytes) if reference_decoder else None

    scan_map, _ = walk_scan(x, tables)
    frame = tables.frame
    ks = key_space(frame.width, frame.height, ri, count_pattern4(scan_map), mcu_count=frame.mcu_count)

    plain = decode_pixels(x, tables)
    enc_pixels = decode_pixels(enc, tables)

    sk_plain, sk_enc, sk_abl = nzca(x), nzca(enc), nzca(abl)
    equivariant = sk_enc == permute_sketch(sk_plain, block_order(x, recipe), ri)
    leaks = sk_abl == sk_plain

    hist = abl_hist = None
    if plain.channels == 3:
        hist = histogram_report(enc_pixels, plain)
        abl_hist = histogram_report(decode_pixels(abl, tables), plain)

    failures = []
    if not size_preserved:
        failures.append(f"{name} RI={ri}: file size changed")
    if not round_trip:
        failures.append(f"{name} RI={ri}: decryption is not bit-identical")
    if ref_ok is False:
        failures.append(f"{name} RI={ri}: reference decoder rejected the ciphertext")
    if not equivariant:
        failures.append(f"{name} RI={ri}: NZCA sketch is not the permuted original")

    evaluation = ImageEvaluation(
        image=name,
        ri=ri,
        width=frame.width,
        height=frame.height,
        restructured_size=len(plain_bytes),
        encrypted_size=len(enc_bytes),
        size_preserved=size_preserved,
        round_trip=round_trip,
        reference_decode_ok=ref_ok,
        key_space=ks,
        protection=visual_protection(plain, enc_pixels),
        nzca_equivariant=equivariant,
        nzca_ablation_leaks=leaks,
        histogram=hist,
        ablation_histogram=abl_hist,
        failures=failures,
    )
    artifacts = EvaluationArtifacts(
        restructured=plain_bytes,
        encrypted=enc_bytes,
        ablation=serialize(abl),
        sketches={"original": sk_plain, "encrypted": sk_enc, "ablation": sk_abl},
        histograms={k: v for k, v in (("encrypted", hist), ("ablation", abl_hist)) if v is not None},
    )
    logger.info(
        "%s RI=%d: T=%d, PSNR %.2f dB, SSIM %.4f, %d failure(s)",
        name, ri, ks.T, evaluation.protection.psnr_db, evaluation.protection.ssim, len(failures),
    )
    return evaluation, artifacts


def evaluation_keys(seed: int, name: str) -> tuple[bytes, bytes]:
    """Per-image experiment keys, independent of processing order."""
    return experiment_keys(np.random.default_rng([seed, *name.encode("utf-8")]))


def _histogram_trend(evals: list[ImageEvaluation], metric: Literal["intersection", "pearson"] = "intersection") -> bool:
    """Smaller RI gives more similar channels and less similarity to the original."""
    ordered = sorted((e for e in evals if e.histogram is not None), key=lambda e: e.ri)
    if len(ordered) < 2:
        return False
    if metric == "pearson":
        inter = [e.histogram.mean_inter_channel_pearson for e in ordered]  # type: ignore[union-attr]
        to_ref = [e.histogram.pearson_to_reference for e in ordered]  # type: ignore[union-attr]
    else:
        inter = [e.histogram.mean_inter_channel_similarity for e in ordered]  # type: ignore[union-attr]
        to_ref = [e.histogram.similarity_to_reference for e in ordered]  # type: ignore[union-attr]
    if any(v is None for v in to_ref):
        return False
    return all(a >= b for a, b in zip(inter, inter[1:])) and all(a <= b for a, b in zip(to_ref, to_ref[1:]))


def summarize(evals: list[ImageEvaluation], restart_intervals: list[int], errors: Sequence[str] = ()) -> EvaluationSummary:
    """Boxplot statistics per RI across images."""
    intervals = []
    for ri in restart_intervals:
        group = [e for e in evals if e.ri == ri]
        hist = [e.histogram for e in group if e.histogram is not None]
        intervals.append(
            IntervalSummary(
                ri=ri,
                psnr=boxplot_stats([e.protection.psnr_db for e in group]),
                ssim=boxplot_stats([e.protection.ssim for e in group]),
                inter_channel_similarity=boxplot_stats([h.mean_inter_channel_similarity for h in hist]) if hist else None,
                similarity_to_original=boxplot_stats([h.similarity_to_reference or 0.0 for h in hist]) if hist else None,
            )
        )

    images = sorted({e.image for e in evals})
    per_image = {img: [e for e in evals if e.image == img] for img in images}
    trend = sum(1 for group in per_image.values() if _histogram_trend(group))
    trend_pearson = sum(1 for group in per_image.values() if _histogram_trend(group, "pearson"))
    failures = [f for e in evals for f in e.failures] + list(errors)
    return EvaluationSummary(
        images=images,
        restart_intervals=list(restart_intervals),
        intervals=intervals,
        histogram_trend_images=trend,
        histogram_trend_images_pearson=trend_pearson,
        all_passed=not failures,
        failures=failures,
    )
