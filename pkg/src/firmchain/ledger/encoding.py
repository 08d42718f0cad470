"""Canonical binary encoding shared by transactions, blocks and contract state.

Every integer is big-endian and fixed width; every variable-length byte
field is prefixed with its length as a u32. Field order is fixed by the
caller. Hashes computed over these encodings are therefore bit-exact.
"""

from __future__ import annotations

import hashlib
import struct

ADDRESS_SIZE = 20


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class Address(bytes):
    """A 20-byte account or contract address, rendered as ``0x``-prefixed hex."""

    def __new__(cls, value: bytes) -> "Address":
        if len(value) != ADDRESS_SIZE:
            raise ValueError(f"address must be {ADDRESS_SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    def __str__(self) -> str:
        return "0x" + self.hex()

    def __repr__(self) -> str:
        return f"Address({self})"

    @classmethod
    def parse(cls, text: str) -> "Address":
        body = text[2:] if text.lower().startswith("0x") else text
        if len(body) != 2 * ADDRESS_SIZE:
            raise ValueError(f"address must be {2 * ADDRESS_SIZE} hex characters: {text!r}")
        try:
            return cls(bytes.fromhex(body))
        except ValueError:
            raise ValueError(f"address is not valid hex: {text!r}") from None

    @classmethod
    def derive(cls, material: bytes) -> "Address":
        """Last 20 bytes of SHA-256 over ``material``."""
        return cls(sha256(material)[-ADDRESS_SIZE:])


def _uint(n: int, width: int) -> bytes:
    if not 0 <= n < 1 << (8 * width):
        raise ValueError(f"value out of u{8 * width} range: {n}")
    return n.to_bytes(width, "big")


def u8(n: int) -> bytes:
    return _uint(n, 1)


def u32(n: int) -> bytes:
    return _uint(n, 4)


def u64(n: int) -> bytes:
    return _uint(n, 8)


def u128(n: int) -> bytes:
    return _uint(n, 16)


def lp(data: bytes) -> bytes:
    return u32(len(data)) + bytes(data)


def opt_address(addr: bytes | None) -> bytes:
    if addr is None:
        return b"\x00"
    return b"\x01" + bytes(addr)


class Reader:
    """Cursor over a canonical encoding; raises ``ValueError`` on truncation."""

    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ValueError(f"truncated input: need {n} bytes at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def u128(self) -> int:
        return int.from_bytes(self.take(16), "big")

    def lp(self) -> bytes:
        return self.take(self.u32())

    def address(self) -> Address:
        return Address(self.take(ADDRESS_SIZE))

    def opt_address(self) -> Address | None:
        flag = self.u8()
        if flag == 0:
            return None
        if flag != 1:
            raise ValueError(f"bad optional-address flag {flag}")
        return self.address()

    def done(self) -> bool:
        return self.pos == len(self.data)

    def expect_end(self) -> None:
        if not self.done():
            raise ValueError(f"{len(self.data) - self.pos} trailing bytes")
