"""Streaming SHA-256 fingerprints of firmware images.

Firmware files are hashed verbatim (no HEX-record decoding) in fixed-size
chunks so arbitrarily large images never need to fit in memory.
"""

from __future__ import annotations

import hashlib
import io
import os
import string
import sys
from pathlib import Path
from typing import BinaryIO, Union

DEFAULT_CHUNK_SIZE = 4096
DIGEST_SIZE = 32

_HEXDIGITS = frozenset(string.hexdigits)


class DigestFormatError(ValueError):
    """A hex string could not be parsed as a digest."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class FirmwareReadError(OSError):
    """Reading a firmware image failed part-way through."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class Digest(bytes):
    """A 32-byte SHA-256 fingerprint. ``str(d)`` is the lowercase hex form."""

    def __new__(cls, value: bytes) -> "Digest":
        if len(value) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    def __str__(self) -> str:
        return self.hex()

    def __repr__(self) -> str:
        return f"Digest({self.hex()[:16]}...)"

    @classmethod
    def of(cls, data: bytes) -> "Digest":
        return cls(hashlib.sha256(data).digest())


FirmwareSource = Union[str, os.PathLike, bytes, bytearray, BinaryIO]


def _open_source(source: FirmwareSource) -> tuple[BinaryIO, bool]:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(source)), True
    if isinstance(source, (str, os.PathLike)):
        if str(source) == "-":
            return sys.stdin.buffer, False
        return open(Path(source), "rb"), True
    return source, False


def compute_digest(source: FirmwareSource, chunk_size: int = DEFAULT_CHUNK_SIZE) -> Digest:
    """Hash a firmware image by reading it ``chunk_size`` bytes at a time.

    ``source`` may be a path (``"-"`` meaning standard input), raw bytes, or
    an already-open binary stream. The result does not depend on
    ``chunk_size``.
    """
    if not isinstance(chunk_size, int) or chunk_size <= 0:
        raise ValueError(f"chunk_size must be a positive integer, got {chunk_size!r}")

    stream, owned = _open_source(source)
    hasher = hashlib.sha256()
    offset = 0
    try:
        while True:
            try:
                chunk = stream.read(chunk_size)
            except OSError as exc:
                raise FirmwareReadError(str(exc) or type(exc).__name__, offset) from exc
            if not chunk:
                break
            hasher.update(chunk)
            offset += len(chunk)
    finally:
        if owned:
            stream.close()
    return Digest(hasher.digest())


def digest_to_hex(d: bytes) -> str:
    return bytes(d).hex()


def parse_hex_digest(s: str) -> Digest:
    """Parse 64 hex characters (either case) into a :class:`Digest`."""
    if len(s) != 2 * DIGEST_SIZE:
        raise DigestFormatError(f"expected {2 * DIGEST_SIZE} hex characters, got {len(s)}")
    for i, ch in enumerate(s):
        if ch not in _HEXDIGITS:
            raise DigestFormatError(f"non-hex character {ch!r} at position {i}", position=i)
    return Digest(bytes.fromhex(s))
