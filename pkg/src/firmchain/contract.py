"""FirmwareIntegrity: stores a reference firmware digest and verifies candidates.

Calldata is a 4-byte selector (first four bytes of SHA-256 over the method
signature) followed by fixed-width arguments: a digest is 32 raw bytes and
a firmware id is its UTF-8 bytes NUL-padded to 64. Fixed widths keep the
calldata gas of every call shape constant.

Method table::

    storeHash(bytes32)                  owner only, once
    verifyHash(bytes32)          view   -> 0x01 / 0x00
    verifyHashLogged(bytes32)           anyone, emits VerificationPerformed
    registerVersioned(string,bytes32)   owner only, bumps the id's version
    getVersioned(string)         view   -> u64 version | digest | u64 block
    verifyVersioned(string,bytes32) view -> 0x01 / 0x00
    owner()                      view   -> 20-byte address
    reference()                  view   -> 32-byte digest
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Protocol

from .fingerprint import Digest
from .ledger.chain import Ledger, NotFound, Receipt, wei_to_eth
from .ledger.encoding import Address, Reader, sha256, u8, u64
from .ledger.execution import (
    FIRMWARE_ID_WIDTH,
    Event,
    ExecutionContext,
    NativeContract,
    Revert,
    pad_firmware_id,
    unpad_firmware_id,
)
from .ledger.gas import CREATE_METHOD
from .ledger.keys import Wallet
from .ledger.transactions import Transaction

HASH_STORED = "HashStored"
VERIFICATION_PERFORMED = "VerificationPerformed"

STORE_HASH = "storeHash(bytes32)"
VERIFY_HASH = "verifyHash(bytes32)"
VERIFY_HASH_LOGGED = "verifyHashLogged(bytes32)"
REGISTER_VERSIONED = "registerVersioned(string,bytes32)"
GET_VERSIONED = "getVersioned(string)"
VERIFY_VERSIONED = "verifyVersioned(string,bytes32)"
OWNER = "owner()"
REFERENCE = "reference()"

METHODS = [
    STORE_HASH, VERIFY_HASH, VERIFY_HASH_LOGGED, REGISTER_VERSIONED,
    GET_VERSIONED, VERIFY_VERSIONED, OWNER, REFERENCE,
]


def selector(signature: str) -> bytes:
    return sha256(signature.encode("ascii"))[:4]


SELECTORS: dict[bytes, str] = {selector(sig): sig for sig in METHODS}


def short_name(signature: str) -> str:
    return signature.split("(", 1)[0]


# --------------------------------------------------------------------- calldata

def encode_call(signature: str, *args: bytes) -> bytes:
    return selector(signature) + b"".join(args)


def store_hash_data(d: bytes) -> bytes:
    return encode_call(STORE_HASH, Digest(d))


def verify_hash_data(d: bytes) -> bytes:
    return encode_call(VERIFY_HASH, Digest(d))


def verify_hash_logged_data(d: bytes) -> bytes:
    return encode_call(VERIFY_HASH_LOGGED, Digest(d))


def register_versioned_data(firmware_id: str, d: bytes) -> bytes:
    return encode_call(REGISTER_VERSIONED, pad_firmware_id(firmware_id), Digest(d))


def get_versioned_data(firmware_id: str) -> bytes:
    return encode_call(GET_VERSIONED, pad_firmware_id(firmware_id))


def verify_versioned_data(firmware_id: str, d: bytes) -> bytes:
    return encode_call(VERIFY_VERSIONED, pad_firmware_id(firmware_id), Digest(d))


def decode_bool(ret: bytes) -> bool:
    if ret not in (b"\x00", b"\x01"):
        raise ValueError(f"not a boolean return value: {ret.hex()}")
    return ret == b"\x01"


def _read_firmware_id(r: Reader) -> str:
    raw = r.take(FIRMWARE_ID_WIDTH)
    fid = unpad_firmware_id(raw)
    if pad_firmware_id(fid) != raw:
        raise ValueError("non-canonical firmware id")
    return fid


# --------------------------------------------------------------------- state

@dataclass(frozen=True)
class VersionedEntry:
    digest: Digest
    version: int
    registered_at_block: int


class FirmwareIntegrity(NativeContract):
    code_id = b"FirmwareIntegrity"

    def __init__(self, address: Address):
        super().__init__(address)
        self.owner: Address | None = None
        self.reference: Digest | None = None
        self.stored_at_block: int | None = None
        self.registry: dict[str, VersionedEntry] = {}

    def construct(self, ctx: ExecutionContext, args: bytes) -> None:
        self.owner = ctx.caller
        ctx.write_storage(is_new=True)

    # snapshot / restore only cover mutable fields; the event log is appended
    # by the ledger after a call succeeds.
    def snapshot(self):
        return (self.reference, self.stored_at_block, dict(self.registry))

    def restore(self, snap) -> None:
        self.reference, self.stored_at_block, registry = snap
        self.registry = dict(registry)

    def encode_state(self) -> bytes:
        parts = [bytes(self.owner or b"\x00" * 20)]
        if self.reference is None:
            parts.append(b"\x00")
        else:
            parts += [b"\x01", bytes(self.reference), u64(self.stored_at_block or 0)]
        parts.append(u64(len(self.registry)))
        for fid in sorted(self.registry):
            e = self.registry[fid]
            parts += [pad_firmware_id(fid), u64(e.version), bytes(e.digest), u64(e.registered_at_block)]
        parts.append(self.event_log_hash)
        return b"".join(parts)

    def method_name(self, data: bytes) -> str | None:
        sig = SELECTORS.get(bytes(data[:4]))
        return short_name(sig) if sig else None

    # -- dispatch ----------------------------------------------------------

    def dispatch(self, ctx: ExecutionContext, data: bytes) -> bytes:
        sig = SELECTORS.get(bytes(data[:4]))
        if sig is None:
            raise Revert("unknown-method")
        ctx.charge_method(sig)
        args = Reader(data[4:])
        try:
            if sig in (STORE_HASH, VERIFY_HASH, VERIFY_HASH_LOGGED):
                digest = Digest(args.take(32))
            elif sig in (REGISTER_VERSIONED, VERIFY_VERSIONED, GET_VERSIONED):
                fid = _read_firmware_id(args)
                if sig != GET_VERSIONED:
                    digest = Digest(args.take(32))
            args.expect_end()
        except ValueError:
            raise Revert("invalid-arguments") from None

        if sig == STORE_HASH:
            return self._store_hash(ctx, digest)
        if sig == VERIFY_HASH:
            return u8(self._matches(digest))
        if sig == VERIFY_HASH_LOGGED:
            return self._verify_logged(ctx, digest)
        if sig == REGISTER_VERSIONED:
            return self._register_versioned(ctx, fid, digest)
        if sig == GET_VERSIONED:
            e = self._entry(fid)
            return u64(e.version) + bytes(e.digest) + u64(e.registered_at_block)
        if sig == VERIFY_VERSIONED:
            return u8(self._entry(fid).digest == digest)
        if sig == OWNER:
            return bytes(self.owner)
        if self.reference is None:
            raise Revert("no-reference")
        return bytes(self.reference)

    def _require_owner(self, ctx: ExecutionContext) -> None:
        if ctx.caller != self.owner:
            raise Revert("unauthorized")

    def _matches(self, digest: bytes) -> bool:
        if self.reference is None:
            raise Revert("no-reference")
        return bytes(digest) == bytes(self.reference)

    def _entry(self, fid: str) -> VersionedEntry:
        try:
            return self.registry[fid]
        except KeyError:
            raise Revert("unknown-firmware-id") from None

    def _store_hash(self, ctx: ExecutionContext, digest: Digest) -> bytes:
        self._require_owner(ctx)
        if self.reference is not None:
            raise Revert("already-stored")
        ctx.write_storage(is_new=True)
        self.reference = digest
        self.stored_at_block = ctx.block_number
        ctx.emit(Event(HASH_STORED, self.address, ctx.caller, digest))
        return b""

    def _verify_logged(self, ctx: ExecutionContext, digest: Digest) -> bytes:
        matched = self._matches(digest)
        ctx.emit(Event(VERIFICATION_PERFORMED, self.address, ctx.caller, digest, matched=matched))
        return u8(matched)

    def _register_versioned(self, ctx: ExecutionContext, fid: str, digest: Digest) -> bytes:
        self._require_owner(ctx)
        prev = self.registry.get(fid)
        version = prev.version + 1 if prev else 1
        # every version gets its own slot, so the write is always a fresh one
        ctx.write_storage(is_new=True)
        self.registry[fid] = VersionedEntry(digest, version, ctx.block_number)
        ctx.emit(Event(HASH_STORED, self.address, ctx.caller, digest, firmware_id=fid, version=version))
        return u64(version)


# --------------------------------------------------------------------- client side

DEFAULT_GAS_LIMIT = 1_000_000


class TransactionReverted(Exception):
    def __init__(self, receipt: Receipt):
        super().__init__(receipt.revert_reason or "reverted")
        self.receipt = receipt
        self.reason = receipt.revert_reason or "reverted"


class Backend(Protocol):
    """What the client-side helpers need: a :class:`Ledger` or an RPC client."""

    def next_nonce(self, address: Address) -> int: ...
    def submit_transaction(self, stx) -> bytes: ...
    def wait_for_receipt(self, tx_hash: bytes, timeout: float = ...) -> Receipt: ...
    def execute_call(self, to: Address, data: bytes) -> bytes: ...
    def gas_price_hint(self, method: str | None = None) -> int: ...


def send(
    backend: Backend,
    wallet: Wallet,
    to: Address | None,
    data: bytes,
    gas_price: int | None = None,
    gas_limit: int = DEFAULT_GAS_LIMIT,
    value: int = 0,
    price_key: str | None = None,
) -> Receipt:
    """Sign, submit and wait for one transaction."""
    if gas_price is None:
        gas_price = backend.gas_price_hint(price_key)
    tx = Transaction(
        sender=wallet.address,
        to=to,
        nonce=backend.next_nonce(wallet.address),
        gas_limit=gas_limit,
        gas_price=gas_price,
        value=value,
        data=data,
        scheme_id=wallet.scheme_id,
    )
    tx_hash = backend.submit_transaction(tx.sign(wallet))
    return backend.wait_for_receipt(tx_hash)


def deploy(backend: Backend, wallet: Wallet, gas_price: int | None = None, gas_limit: int = DEFAULT_GAS_LIMIT) -> tuple[Address, Receipt]:
    receipt = send(backend, wallet, None, FirmwareIntegrity.code_id, gas_price, gas_limit, price_key=CREATE_METHOD)
    if not receipt.ok:
        raise TransactionReverted(receipt)
    return receipt.contract_address, receipt


def store_hash(backend: Backend, wallet: Wallet, contract: Address, d: bytes, gas_price: int | None = None) -> Receipt:
    return send(backend, wallet, contract, store_hash_data(d), gas_price, price_key=STORE_HASH)


def verify_hash_call(backend: Backend, contract: Address, d: bytes) -> bool:
    return decode_bool(backend.execute_call(contract, verify_hash_data(d)))


def verify_hash_tx(backend: Backend, wallet: Wallet, contract: Address, d: bytes, gas_price: int | None = None) -> Receipt:
    return send(backend, wallet, contract, verify_hash_logged_data(d), gas_price, price_key=VERIFY_HASH_LOGGED)


def register_versioned(backend: Backend, wallet: Wallet, contract: Address, firmware_id: str, d: bytes, gas_price: int | None = None) -> Receipt:
    return send(backend, wallet, contract, register_versioned_data(firmware_id, d), gas_price, price_key=REGISTER_VERSIONED)


def get_versioned(backend: Backend, contract: Address, firmware_id: str) -> VersionedEntry:
    r = Reader(backend.execute_call(contract, get_versioned_data(firmware_id)))
    return VersionedEntry(version=r.u64(), digest=Digest(r.take(32)), registered_at_block=r.u64())


def verify_versioned_call(backend: Backend, contract: Address, firmware_id: str, d: bytes) -> bool:
    return decode_bool(backend.execute_call(contract, verify_versioned_data(firmware_id, d)))


def verification_outcome(receipt: Receipt) -> bool | None:
    """The ``matched`` flag of a logged verification, if the receipt carries one."""
    for ev in receipt.logs:
        if ev.kind == VERIFICATION_PERFORMED:
            return ev.matched
    return None


# --------------------------------------------------------------------- audit export

@dataclass(frozen=True)
class AuditRecord:
    tx_hash: str
    block_number: int
    from_: str
    to: str | None
    method: str
    status: str
    gas_used: int
    gas_price_wei: int
    fee_wei: int
    fee_eth: str
    confirmations: int
    timestamp: float
    revert_reason: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["from"] = d.pop("from_")
        order = [
            "tx_hash", "block_number", "from", "to", "method", "status", "gas_used",
            "gas_price_wei", "fee_wei", "fee_eth", "confirmations", "timestamp", "revert_reason",
        ]
        return {k: d[k] for k in order}

    @classmethod
    def from_dict(cls, d: dict) -> "AuditRecord":
        d = dict(d)
        d["from_"] = d.pop("from")
        return cls(**d)


def export_audit(ledger: Ledger, contract: Address) -> list[AuditRecord]:
    """One record per transaction that created or called ``contract``, in chain order."""
    with ledger._lock:
        if contract not in ledger.contracts:
            raise NotFound("not-found", f"no contract at {contract}")
        target = ledger.contracts[contract]
        head = ledger.block_number
        records = []
        for number in range(1, head + 1):
            block = ledger.blocks[number]
            for stx in ledger.block_txs[number]:
                receipt = ledger.receipts[stx.hash]
                if stx.tx.to == contract:
                    method = target.method_name(stx.tx.data) or "unknown"
                elif stx.tx.to is None and receipt.contract_address == contract:
                    method = "deploy"
                else:
                    continue
                records.append(
                    AuditRecord(
                        tx_hash="0x" + stx.hash.hex(),
                        block_number=number,
                        from_=str(stx.sender),
                        to=str(stx.tx.to) if stx.tx.to else None,
                        method=method,
                        status=receipt.status,
                        gas_used=receipt.gas_used,
                        gas_price_wei=receipt.gas_price,
                        fee_wei=receipt.fee,
                        fee_eth=format(wei_to_eth(receipt.fee), "f"),
                        confirmations=head - number + 1,
                        timestamp=block.timestamp_ms / 1000,
                        revert_reason=receipt.revert_reason,
                    )
                )
        return records


def audit_to_jsonl(records: list[AuditRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), separators=(", ", ": ")) + "\n" for r in records)
