"""
Shared utilities: logging setup, key handling, and sample statistics.

This module contains small, reusable helpers used across rstcrypt:

1) Logging
   - Installs a rich `RichHandler` on the root logger once per process.
   - Library modules only ever call `logging.getLogger(__name__)`.

2) Keys
   - Parses 96-hex-character keys from a literal or from a key file.
   - Flips single key bits for the key-sensitivity experiments.
   - Derives reproducible experiment keys from a seed.

3) Statistics
   - Boxplot statistics (percentiles, Tukey whiskers, outliers, mean) in the
     shape used by every distribution the evaluation battery reports.
"""

import logging
from pathlib import Path

import numpy as np
from rich.console import Console
from rich.logging import RichHandler

from rstcrypt.errors import BadKeyLength
from rstcrypt.schemas import KEY_BYTES, KEY_HEX_CHARS, BoxplotStats

# --- Logging ---

_LOG_FORMAT = "%(message)s"

# stderr so that JSON written to stdout stays machine-readable.
console = Console(stderr=True)


def configure_logging(level: str = "INFO") -> None:
    """
    Route all rstcrypt logging through rich.

    Calling this more than once only adjusts the level.
    """
    root = logging.getLogger()
    if not any(isinstance(h, RichHandler) for h in root.handlers):
        handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter(_LOG_FORMAT))
        root.addHandler(handler)
    root.setLevel(level.upper())


# --- Keys ---

def parse_key(value: str) -> bytes:
    """
    Turn a CLI key argument into 48 raw bytes.

    `value` is either 96 hex characters or the path of a file whose first
    non-blank line holds them.

    Raises:
        BadKeyLength: wrong length, non-hex text, or an unreadable key file.
    """
    text = value.strip()
    if len(text) != KEY_HEX_CHARS or not _is_hex(text):
        path = Path(text)
        if not path.is_file():
            raise BadKeyLength(
                f"key must be {KEY_HEX_CHARS} hex characters or a key file path"
            )
        lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
        text = lines[0] if lines else ""
        if len(text) != KEY_HEX_CHARS or not _is_hex(text):
            raise BadKeyLength(f"{path}: expected {KEY_HEX_CHARS} hex characters")
    return bytes.fromhex(text)


def _is_hex(text: str) -> bool:
    try:
        bytes.fromhex(text)
    except ValueError:
        return False
    return True


def flip_bit(key: bytes, position: int) -> bytes:
    """Return `key` with bit `position` (0 = MSB of byte 0) inverted."""
    if not 0 <= position < 8 * len(key):
        raise ValueError(f"bit position {position} outside a {len(key)}-byte key")
    out = bytearray(key)
    out[position >> 3] ^= 0x80 >> (position & 7)
    return bytes(out)


def experiment_keys(rng: np.random.Generator) -> tuple[bytes, bytes]:
    """Draw an independent (k1, k2) pair from `rng`."""
    raw = rng.integers(0, 256, size=2 * KEY_BYTES, dtype=np.uint8).tobytes()
    return raw[:KEY_BYTES], raw[KEY_BYTES:]


# --- Statistics ---

def boxplot_stats(values: list[float] | np.ndarray) -> BoxplotStats:
    """
    Summarize a sample the way a boxplot draws it.

    Whiskers reach the most extreme values within 1.5 IQR of the box; anything
    beyond is an outlier. Infinite values (PSNR of identical images) are kept
    out of the percentile math and reported as outliers.
    """
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        nan = float("nan")
        return BoxplotStats(n=0, mean=nan, p25=nan, p50=nan, p75=nan, whisker_low=nan, whisker_high=nan)

    finite = data[np.isfinite(data)]
    infinite = data[~np.isfinite(data)]
    if finite.size == 0:
        v = float(data[0])
        return BoxplotStats(
            n=int(data.size), mean=v, p25=v, p50=v, p75=v, whisker_low=v, whisker_high=v
        )

    p25, p50, p75 = (float(q) for q in np.percentile(finite, [25, 50, 75]))
    iqr = p75 - p25
    lo_fence, hi_fence = p25 - 1.5 * iqr, p75 + 1.5 * iqr
    inside = finite[(finite >= lo_fence) & (finite <= hi_fence)]
    outliers = sorted(float(v) for v in finite[(finite < lo_fence) | (finite > hi_fence)])
    outliers += [float(v) for v in infinite]

    return BoxplotStats(
        n=int(data.size),
        mean=float(finite.mean()) if infinite.size == 0 else float(data.mean()),
        p25=p25,
        p50=p50,
        p75=p75,
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=outliers,
    )
