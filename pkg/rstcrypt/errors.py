"""
Typed errors.

Library code raises these; the CLI turns them into an `ErrorReport` JSON line and
a non-zero exit status. Every class carries a stable `code` for machine consumers.
"""

EXIT_GENERIC = 1
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_CRYPTO = 4
EXIT_VERIFICATION = 5


class RstCryptError(ValueError):
    code = "rstcrypt_error"
    exit_code = EXIT_GENERIC


# --- bitstream ---

class MalformedMarker(RstCryptError):
    """Missing SOI/EOI, bad marker byte, or a segment running past the end of the file."""

    code = "malformed_marker"
    exit_code = EXIT_FORMAT


class TrailingData(MalformedMarker):
    code = "trailing_data"


class UnsupportedCoding(RstCryptError):
    """Progressive, lossless, arithmetic-coded, or an unsupported sampling layout."""

    code = "unsupported_coding"
    exit_code = EXIT_FORMAT


class MultipleScans(RstCryptError):
    code = "multiple_scans"
    exit_code = EXIT_FORMAT


class NoRestartMarkers(RstCryptError):
    code = "no_restart_markers"
    exit_code = EXIT_FORMAT


class InconsistentMarkers(RstCryptError):
    """RSTn indices out of cyclic order, or a marker count that disagrees with DRI."""

    code = "inconsistent_markers"
    exit_code = EXIT_FORMAT


# --- entropy ---

class InvalidHuffmanSpec(RstCryptError):
    code = "invalid_huffman_spec"
    exit_code = EXIT_FORMAT


class MissingHuffmanCode(InvalidHuffmanSpec):
    """A symbol needed for re-encoding has no code in the table."""

    code = "missing_huffman_code"


class HuffmanDecodeFailure(RstCryptError):
    code = "huffman_decode_failure"
    exit_code = EXIT_FORMAT


class TruncatedScan(RstCryptError):
    code = "truncated_scan"
    exit_code = EXIT_FORMAT


class MarkerDesyncError(RstCryptError):
    code = "marker_desync"
    exit_code = EXIT_FORMAT


# --- cipher ---

class BadKeyLength(RstCryptError):
    code = "bad_key_length"
    exit_code = EXIT_CRYPTO


class RecipeMismatch(RstCryptError):
    code = "recipe_mismatch"
    exit_code = EXIT_CRYPTO


class EmptyRegion(RstCryptError):
    code = "empty_region"
    exit_code = EXIT_CRYPTO


# --- pixels / analysis ---

class DimensionMismatch(RstCryptError):
    code = "dimension_mismatch"


class ChannelMismatch(RstCryptError):
    code = "channel_mismatch"


# --- cli ---

class ConfigError(RstCryptError):
    code = "config_error"
    exit_code = EXIT_CONFIG


class VerificationFailed(RstCryptError):
    code = "verification_failed"
    exit_code = EXIT_VERIFICATION
