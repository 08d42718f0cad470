"""Firmware integrity registration and verification on a simulated ledger."""

from .fingerprint import Digest, compute_digest, digest_to_hex, parse_hex_digest

__version__ = "0.1.0"

__all__ = ["Digest", "compute_digest", "digest_to_hex", "parse_hex_digest", "__version__"]
