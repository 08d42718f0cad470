"""Signature schemes and deterministic wallets.

Schemes are looked up by ``scheme_id`` so another signature algorithm can be
registered without touching transaction handling. Ed25519 is the default: it
is deterministic, so identical inputs always produce identical chains.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .encoding import Address, sha256

DEFAULT_SCHEME = "ed25519"


class SignatureScheme:
    scheme_id: str

    def private_from_seed(self, seed: bytes):
        raise NotImplementedError

    def public_bytes(self, private_key) -> bytes:
        raise NotImplementedError

    def sign(self, private_key, message: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, public_key: bytes, signature: bytes, message: bytes) -> bool:
        raise NotImplementedError


class Ed25519Scheme(SignatureScheme):
    scheme_id = "ed25519"

    def private_from_seed(self, seed: bytes) -> Ed25519PrivateKey:
        return Ed25519PrivateKey.from_private_bytes(sha256(seed))

    def public_bytes(self, private_key: Ed25519PrivateKey) -> bytes:
        return private_key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    def sign(self, private_key: Ed25519PrivateKey, message: bytes) -> bytes:
        return private_key.sign(message)

    def verify(self, public_key: bytes, signature: bytes, message: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


SCHEMES: dict[str, SignatureScheme] = {DEFAULT_SCHEME: Ed25519Scheme()}


def get_scheme(scheme_id: str) -> SignatureScheme:
    try:
        return SCHEMES[scheme_id]
    except KeyError:
        raise ValueError(f"unknown signature scheme {scheme_id!r}") from None


def address_from_public_key(public_key: bytes) -> Address:
    return Address.derive(public_key)


class Wallet:
    """Private key holder derived deterministically from a seed."""

    def __init__(self, seed: bytes, scheme_id: str = DEFAULT_SCHEME):
        self.seed = bytes(seed)
        self.scheme = get_scheme(scheme_id)
        self._private = self.scheme.private_from_seed(self.seed)
        self.public_key = self.scheme.public_bytes(self._private)
        self.address = address_from_public_key(self.public_key)

    @property
    def scheme_id(self) -> str:
        return self.scheme.scheme_id

    def sign(self, message: bytes) -> bytes:
        return self.scheme.sign(self._private, message)

    def __repr__(self) -> str:
        return f"Wallet({self.address})"

    # key files -----------------------------------------------------------

    def save(self, path: str | os.PathLike) -> None:
        record = {"scheme": self.scheme_id, "seed": self.seed.hex(), "address": str(self.address)}
        Path(path).write_text(json.dumps(record, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Wallet":
        record = json.loads(Path(path).read_text())
        wallet = cls(bytes.fromhex(record["seed"]), record.get("scheme", DEFAULT_SCHEME))
        if "address" in record and Address.parse(record["address"]) != wallet.address:
            raise ValueError(f"key file {path} address does not match its seed")
        return wallet
