"""Append-only chain file.

Layout: the 8-byte magic ``FWCHAIN1`` followed by records, each a u32 length
and a payload whose first byte is the record tag. The first record (tag 0)
holds canonical JSON for genesis plus profile; every later record (tag 1) is
one block: canonical header followed by its full signed transactions.
Reloading replays every block and checks that each header is reproduced.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .chain import Block, ChainCorrupt, Genesis, Ledger
from .encoding import Reader, lp, u32
from .gas import CalibrationProfile
from .transactions import SignedTransaction

MAGIC = b"FWCHAIN1"
TAG_GENESIS = 0
TAG_BLOCK = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def encode_block_record(block: Block, txs: list[SignedTransaction]) -> bytes:
    return bytes([TAG_BLOCK]) + block.header_bytes() + b"".join(lp(s.serialize()) for s in txs)


def decode_block_record(payload: bytes) -> tuple[Block, list[SignedTransaction]]:
    r = Reader(payload)
    if r.u8() != TAG_BLOCK:
        raise ChainCorrupt("chain-corrupt", "expected a block record")
    number = r.u64()
    parent = r.take(32)
    ts = r.u64()
    gas_used = r.u64()
    tx_root = r.take(32)
    state_root = r.take(32)
    count = r.u32()
    txs = [SignedTransaction.deserialize(r.lp()) for _ in range(count)]
    r.expect_end()
    block = Block(number, parent, ts, tuple(s.hash for s in txs), gas_used, state_root)
    if block.tx_root != tx_root:
        raise ChainCorrupt("chain-corrupt", f"block {number}: transaction root mismatch")
    return block, txs


class ChainFile:
    """Writes sealed blocks to ``path``, flushing after each one."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._fh = None

    def begin(self, ledger: Ledger) -> None:
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "ab")
        if fresh:
            self._fh.write(MAGIC)
            header = {"genesis": ledger.genesis.to_dict(), "profile": ledger.profile.to_dict()}
            self._write(bytes([TAG_GENESIS]) + _canonical_json(header))
            for number in range(1, len(ledger.blocks)):
                self.append_block(ledger.blocks[number], ledger.block_txs[number])

    def _write(self, payload: bytes) -> None:
        self._fh.write(u32(len(payload)) + payload)
        self._fh.flush()

    def append_block(self, block: Block, txs: list[SignedTransaction]) -> None:
        self._write(encode_block_record(block, txs))

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()
            self._fh = None


def _records(data: bytes):
    if not data.startswith(MAGIC):
        raise ChainCorrupt("chain-corrupt", "missing chain file magic")
    r = Reader(data[len(MAGIC):])
    while not r.done():
        try:
            yield r.lp()
        except ValueError:
            raise ChainCorrupt("chain-corrupt", "truncated record") from None


def load_chain(path: str | os.PathLike, instant_mine: bool = False, append: bool = False, natives=None) -> Ledger:
    """Rebuild a :class:`Ledger` from a chain file by replaying every block.

    With ``append=True`` the reloaded ledger keeps writing to the same file.
    """
    records = _records(Path(path).read_bytes())
    try:
        first = next(records)
    except StopIteration:
        raise ChainCorrupt("chain-corrupt", "chain file has no genesis record") from None
    if first[0] != TAG_GENESIS:
        raise ChainCorrupt("chain-corrupt", "first record is not genesis")
    header = json.loads(first[1:])
    ledger = Ledger(
        Genesis.from_dict(header["genesis"]),
        CalibrationProfile.from_dict(header["profile"]),
        instant_mine=instant_mine,
        natives=natives,
    )
    for payload in records:
        block, txs = decode_block_record(payload)
        if block.number != ledger.block_number + 1:
            raise ChainCorrupt("chain-corrupt", f"unexpected block number {block.number}")
        ledger.replay_block(block, txs)
    if append:
        ledger.attach_store(ChainFile(path))
    return ledger
