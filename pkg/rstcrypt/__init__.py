"""
rstcrypt: format-preserving JPEG encryption with restart markers.

Pipeline: parse -> restructure to a restart interval -> walk and classify the
scan -> XOR P4 additional bits (K1) -> permute extended blocks (K2).
"""

__version__ = "0.1.0"
