"""Merkle batch anchoring of many firmware digests under one on-chain root.

Parents are ``SHA-256(left || right)``. A level with an odd number of nodes
promotes its last node unchanged (no duplication). Leaves and internal nodes
share one hash domain; that lack of domain separation is a known limitation.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .contract import register_versioned, verify_versioned_call
from .fingerprint import Digest, parse_hex_digest

ANCHOR_ID = "merkle-root"
LEFT = "left"
RIGHT = "right"


def hash_pair(left: bytes, right: bytes) -> Digest:
    return Digest(hashlib.sha256(bytes(left) + bytes(right)).digest())


@dataclass(frozen=True)
class MerkleTree:
    leaves: tuple[Digest, ...]
    levels: tuple[tuple[Digest, ...], ...]

    @property
    def root(self) -> Digest:
        return self.levels[-1][0]

    def __len__(self) -> int:
        return len(self.leaves)


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    # (sibling, side) where side says which side the sibling sits on
    path: tuple[tuple[Digest, str], ...]

    def to_dict(self) -> dict:
        return {
            "leaf_index": self.leaf_index,
            "path": [{"sibling": s.hex(), "side": side} for s, side in self.path],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MerkleProof":
        path = []
        for step in d["path"]:
            if step["side"] not in (LEFT, RIGHT):
                raise ValueError(f"bad proof side {step['side']!r}")
            path.append((parse_hex_digest(step["sibling"]), step["side"]))
        return cls(int(d["leaf_index"]), tuple(path))


def build_tree(leaves) -> MerkleTree:
    level = tuple(Digest(bytes(x)) for x in leaves)
    if not level:
        raise ValueError("cannot build a Merkle tree with no leaves")
    levels = [level]
    while len(level) > 1:
        nxt = [hash_pair(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = tuple(nxt)
        levels.append(level)
    return MerkleTree(levels[0], tuple(levels))


def prove(tree: MerkleTree, index: int) -> MerkleProof:
    if not 0 <= index < len(tree.leaves):
        raise IndexError(f"leaf index {index} out of range for {len(tree.leaves)} leaves")
    path = []
    i = index
    for level in tree.levels[:-1]:
        sib = i ^ 1
        if sib < len(level):
            path.append((level[sib], LEFT if sib < i else RIGHT))
        i //= 2
    return MerkleProof(index, tuple(path))


def fold(leaf: bytes, proof: MerkleProof) -> Digest:
    node = Digest(bytes(leaf))
    for sibling, side in proof.path:
        node = hash_pair(sibling, node) if side == LEFT else hash_pair(node, sibling)
    return node


def verify_proof(leaf: bytes, proof: MerkleProof, root: bytes) -> bool:
    try:
        return bytes(fold(leaf, proof)) == bytes(root)
    except ValueError:
        return False


# --------------------------------------------------------------------- leaf files

def leaf_file_bytes(leaves) -> bytes:
    return "".join(bytes(d).hex() + "\n" for d in leaves).encode("ascii")


def write_leaf_file(leaves, directory: str | os.PathLike) -> Path:
    """Store the leaf list under a file named by the SHA-256 of its contents."""
    data = leaf_file_bytes(leaves)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / hashlib.sha256(data).hexdigest()
    path.write_bytes(data)
    return path


def read_leaf_file(path: str | os.PathLike, check_address: bool = False) -> list[Digest]:
    path = Path(path)
    data = path.read_bytes()
    if check_address and hashlib.sha256(data).hexdigest() != path.name:
        raise ValueError(f"{path} content does not match its content address")
    leaves = []
    for lineno, line in enumerate(data.decode("ascii").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            leaves.append(parse_hex_digest(line))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return leaves


def save_proof(proof: MerkleProof, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(proof.to_dict(), indent=2) + "\n")


def load_proof(path: str | os.PathLike) -> MerkleProof:
    return MerkleProof.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------- on-chain

def anchor_root(backend, wallet, contract, root: bytes, gas_price: int | None = None):
    """Publish ``root`` through the versioned registry under ``merkle-root``."""
    return register_versioned(backend, wallet, contract, ANCHOR_ID, Digest(bytes(root)), gas_price)


def verify_device(backend, contract, leaf: bytes, proof: MerkleProof) -> bool:
    """Off-chain proof check, then a free read-only comparison with the anchored root."""
    return verify_versioned_call(backend, contract, ANCHOR_ID, fold(leaf, proof))
