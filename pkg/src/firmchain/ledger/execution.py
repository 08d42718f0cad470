"""Execution context and base class for natively implemented contracts."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .encoding import Address, lp, sha256, u8, u64
from .gas import GasSchedule

FIRMWARE_ID_WIDTH = 64


class Revert(Exception):
    """Raised by contract code to abort a call; state changes are rolled back."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class OutOfGas(Revert):
    def __init__(self):
        super().__init__("out-of-gas")


def pad_firmware_id(firmware_id: str) -> bytes:
    raw = firmware_id.encode("utf-8")
    if not raw or len(raw) > FIRMWARE_ID_WIDTH:
        raise ValueError(f"firmware id must be 1..{FIRMWARE_ID_WIDTH} UTF-8 bytes")
    if b"\x00" in raw:
        raise ValueError("firmware id must not contain NUL")
    return raw.ljust(FIRMWARE_ID_WIDTH, b"\x00")


def unpad_firmware_id(raw: bytes) -> str:
    return raw.rstrip(b"\x00").decode("utf-8")


@dataclass(frozen=True)
class Event:
    kind: str
    emitter: Address
    actor: Address
    digest: bytes
    matched: bool | None = None
    firmware_id: str | None = None
    version: int | None = None
    block_number: int = 0
    log_index: int = 0
    tx_hash: bytes = b""

    def topics(self) -> list[bytes]:
        return [sha256(self.kind.encode("ascii")), bytes(self.actor).rjust(32, b"\x00")]

    def data(self) -> bytes:
        out = bytes(self.digest)
        if self.firmware_id is not None:
            out += pad_firmware_id(self.firmware_id) + u64(self.version or 0)
        if self.matched is not None:
            out += u8(1 if self.matched else 0)
        return out

    def encode(self) -> bytes:
        return b"".join(
            [
                lp(self.kind.encode("ascii")),
                bytes(self.emitter),
                bytes(self.actor),
                lp(self.data()),
                u64(self.block_number),
                u64(self.log_index),
                lp(self.tx_hash),
            ]
        )

    def placed(self, block_number: int, log_index: int, tx_hash: bytes) -> "Event":
        return replace(self, block_number=block_number, log_index=log_index, tx_hash=tx_hash)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "emitter": str(self.emitter),
            "actor": str(self.actor),
            "digest": bytes(self.digest).hex(),
            "block_number": self.block_number,
            "log_index": self.log_index,
            "tx_hash": "0x" + self.tx_hash.hex(),
        }
        if self.matched is not None:
            d["matched"] = self.matched
        if self.firmware_id is not None:
            d["firmware_id"] = self.firmware_id
            d["version"] = self.version
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(
            kind=d["kind"],
            emitter=Address.parse(d["emitter"]),
            actor=Address.parse(d["actor"]),
            digest=bytes.fromhex(d["digest"]),
            matched=d.get("matched"),
            firmware_id=d.get("firmware_id"),
            version=d.get("version"),
            block_number=d["block_number"],
            log_index=d["log_index"],
            tx_hash=bytes.fromhex(d["tx_hash"][2:]),
        )


class ExecutionContext:
    """Per-call environment handed to contract code: caller, gas meter, event sink."""

    def __init__(
        self,
        schedule: GasSchedule,
        caller: Address | None,
        address: Address,
        block_number: int,
        value: int = 0,
        gas_limit: int | None = None,
        gas_used: int = 0,
    ):
        self.schedule = schedule
        self.caller = caller
        self.address = address
        self.block_number = block_number
        self.value = value
        self.gas_limit = gas_limit
        self.gas_used = gas_used
        self.events: list[Event] = []

    def charge(self, amount: int) -> None:
        self.gas_used += amount
        if self.gas_limit is not None and self.gas_used > self.gas_limit:
            raise OutOfGas()

    def charge_method(self, method: str) -> None:
        self.charge(self.schedule.surcharge(method))

    def write_storage(self, is_new: bool) -> None:
        self.charge(self.schedule.storage_write_new if is_new else self.schedule.storage_write_update)

    def emit(self, event: Event) -> None:
        self.charge(self.schedule.log_gas(len(event.topics()), len(event.data())))
        self.events.append(event)


class NativeContract:
    """Base for contracts whose logic is Python code rather than bytecode.

    Subclasses set ``code_id`` (the creation payload that selects them) and
    implement ``construct``, ``dispatch``, ``snapshot``/``restore`` and
    ``encode_state``. The ledger snapshots before each call and restores on
    :class:`Revert`.
    """

    code_id: bytes = b""

    def __init__(self, address: Address):
        self.address = address
        self.event_log: list[Event] = []
        self._event_chain = b"\x00" * 32

    def construct(self, ctx: ExecutionContext, args: bytes) -> None:
        raise NotImplementedError

    def dispatch(self, ctx: ExecutionContext, data: bytes) -> bytes:
        raise NotImplementedError

    def method_name(self, data: bytes) -> str | None:
        return None

    def snapshot(self):
        raise NotImplementedError

    def restore(self, snap) -> None:
        raise NotImplementedError

    def encode_state(self) -> bytes:
        raise NotImplementedError

    def record_event(self, event: Event) -> None:
        self.event_log.append(event)
        self._event_chain = sha256(self._event_chain + event.encode())

    @property
    def event_log_hash(self) -> bytes:
        """Rolling hash over every recorded event, in order."""
        return self._event_chain
