"""Deterministic single-chain ledger: accounts, mempool, blocks, receipts.

All mutations go through one re-entrant lock, so a ``Ledger`` can be shared
between threads (the HTTP gateway does this). Time is simulated and kept in
integer milliseconds; nothing reads the wall clock.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Iterable, Mapping

from .encoding import Address, lp, sha256, u32, u64, u128
from .execution import Event, ExecutionContext, NativeContract, OutOfGas, Revert
from .gas import CREATE_METHOD, ETHER, CalibrationProfile, load_profile
from .keys import Wallet
from .transactions import SignedTransaction, Transaction

log = logging.getLogger(__name__)

ZERO_HASH = b"\x00" * 32
DEFAULT_CHAIN_ID = 31337

SUCCESS = "success"
REVERTED = "reverted"


class LedgerError(Exception):
    """Base ledger error. ``code`` is the stable machine-readable identifier."""

    code = "ledger-error"

    def __init__(self, code: str | None = None, message: str | None = None):
        if code is not None:
            self.code = code
        super().__init__(message or self.code)


class TxRejected(LedgerError):
    code = "rejected"


class NotFound(LedgerError):
    code = "not-found"


class CallError(LedgerError):
    code = "call-error"


class ChainCorrupt(LedgerError):
    code = "chain-corrupt"


def wei_to_eth(wei: int) -> Decimal:
    return Decimal(wei) / Decimal(ETHER)


@dataclass
class Account:
    address: Address
    nonce: int = 0
    balance: int = 0
    public_key: bytes | None = None


@dataclass(frozen=True)
class Receipt:
    tx_hash: bytes
    block_number: int
    tx_index: int
    sender: Address
    to: Address | None
    status: str
    gas_used: int
    gas_price: int
    fee: int
    contract_address: Address | None = None
    logs: tuple[Event, ...] = ()
    revert_reason: str | None = None
    return_data: bytes = b""

    @property
    def ok(self) -> bool:
        return self.status == SUCCESS

    def to_dict(self) -> dict:
        return {
            "tx_hash": "0x" + self.tx_hash.hex(),
            "block_number": self.block_number,
            "tx_index": self.tx_index,
            "from": str(self.sender),
            "to": str(self.to) if self.to is not None else None,
            "status": self.status,
            "gas_used": self.gas_used,
            "gas_price": self.gas_price,
            "fee": self.fee,
            "contract_address": str(self.contract_address) if self.contract_address else None,
            "logs": [e.to_dict() for e in self.logs],
            "revert_reason": self.revert_reason,
            "return_data": "0x" + self.return_data.hex(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Receipt":
        return cls(
            tx_hash=bytes.fromhex(d["tx_hash"][2:]),
            block_number=d["block_number"],
            tx_index=d["tx_index"],
            sender=Address.parse(d["from"]),
            to=Address.parse(d["to"]) if d.get("to") else None,
            status=d["status"],
            gas_used=d["gas_used"],
            gas_price=d["gas_price"],
            fee=d["fee"],
            contract_address=Address.parse(d["contract_address"]) if d.get("contract_address") else None,
            logs=tuple(Event.from_dict(e) for e in d.get("logs", [])),
            revert_reason=d.get("revert_reason"),
            return_data=bytes.fromhex(d.get("return_data", "0x")[2:]),
        )


@dataclass(frozen=True)
class Block:
    number: int
    parent_hash: bytes
    timestamp_ms: int
    tx_hashes: tuple[bytes, ...]
    gas_used: int
    state_root: bytes

    @property
    def tx_root(self) -> bytes:
        return sha256(b"".join(self.tx_hashes))

    def header_bytes(self) -> bytes:
        return b"".join(
            [
                u64(self.number),
                self.parent_hash,
                u64(self.timestamp_ms),
                u64(self.gas_used),
                self.tx_root,
                self.state_root,
                u32(len(self.tx_hashes)),
            ]
        )

    @property
    def hash(self) -> bytes:
        return sha256(self.header_bytes())

    @property
    def timestamp(self) -> float:
        return self.timestamp_ms / 1000

    def to_dict(self) -> dict:
        return {
            "number": self.number,
            "hash": "0x" + self.hash.hex(),
            "parent_hash": "0x" + self.parent_hash.hex(),
            "timestamp_ms": self.timestamp_ms,
            "transactions": ["0x" + h.hex() for h in self.tx_hashes],
            "gas_used": self.gas_used,
            "state_root": "0x" + self.state_root.hex(),
        }


@dataclass
class Genesis:
    allocations: dict[Address, int] = field(default_factory=dict)
    coinbase: Address = Address(b"\xc0" * 20)
    chain_id: int = DEFAULT_CHAIN_ID
    timestamp_ms: int = 0

    def to_dict(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "timestamp_ms": self.timestamp_ms,
            "coinbase": str(self.coinbase),
            "accounts": [
                {"address": str(a), "balance_wei": b} for a, b in sorted(self.allocations.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Genesis":
        allocations: dict[Address, int] = {}
        for entry in d.get("accounts", []):
            allocations[Address.parse(entry["address"])] = int(entry["balance_wei"])
        kwargs = {}
        if "coinbase" in d:
            kwargs["coinbase"] = Address.parse(d["coinbase"])
        return cls(
            allocations=allocations,
            chain_id=int(d.get("chain_id", DEFAULT_CHAIN_ID)),
            timestamp_ms=int(d.get("timestamp_ms", 0)),
            **kwargs,
        )

    @classmethod
    def funded(cls, wallets: Iterable, balance_wei: int = 100 * ETHER, **kwargs) -> "Genesis":
        return cls(allocations={w.address: balance_wei for w in wallets}, **kwargs)


def load_genesis_file(path: str | os.PathLike) -> tuple[Genesis, CalibrationProfile | None]:
    """Read a JSON genesis file; an optional ``profile`` key names or embeds a profile."""
    with open(path) as fh:
        d = json.load(fh)
    profile = None
    if "profile" in d:
        p = d["profile"]
        profile = load_profile(p) if isinstance(p, str) else CalibrationProfile.from_dict(p)
    return Genesis.from_dict(d), profile


def default_natives() -> dict[bytes, type[NativeContract]]:
    from ..contract import FirmwareIntegrity

    return {FirmwareIntegrity.code_id: FirmwareIntegrity}


@dataclass
class _PendingTx:
    seq: int
    stx: SignedTransaction
    arrival_ms: int

    @property
    def cost(self) -> int:
        return self.stx.tx.gas_limit * self.stx.tx.gas_price + self.stx.tx.value


class Ledger:
    """In-process Ethereum-like chain.

    In *timed* mode blocks are produced only by :meth:`produce_block` calls
    spaced at least ``block_interval`` apart. In *instant-mine* mode every
    accepted transaction is sealed into its own block immediately and the
    simulated clock jumps past the finality delay.
    """

    def __init__(
        self,
        genesis: Genesis | None = None,
        profile: CalibrationProfile | str = "sepolia-paper",
        instant_mine: bool = False,
        natives: Mapping[bytes, type[NativeContract]] | None = None,
        store=None,
    ):
        self.genesis = genesis or Genesis()
        self.profile = load_profile(profile) if isinstance(profile, str) else profile
        self.instant_mine = instant_mine
        self.natives = dict(natives) if natives is not None else default_natives()
        self.coinbase = self.genesis.coinbase
        self._lock = threading.RLock()
        self._seq = itertools.count()

        self.accounts: dict[Address, Account] = {}
        for addr, bal in self.genesis.allocations.items():
            self.accounts[addr] = Account(addr, balance=bal)
        self.accounts.setdefault(self.coinbase, Account(self.coinbase))

        self.contracts: dict[Address, NativeContract] = {}
        self.mempool: dict[bytes, _PendingTx] = {}
        self.receipts: dict[bytes, Receipt] = {}
        self.tx_index: dict[bytes, SignedTransaction] = {}
        self.block_txs: list[list[SignedTransaction]] = [[]]
        self.logs: list[Event] = []

        genesis_block = Block(0, ZERO_HASH, self.genesis.timestamp_ms, (), 0, self._state_root())
        self.blocks: list[Block] = [genesis_block]
        self.clock_ms = self.genesis.timestamp_ms
        self.store = None
        self.listeners: list[Callable[[Block], None]] = []
        if store is not None:
            self.attach_store(store)

    # ------------------------------------------------------------------ accounts

    def create_account(self, seed: bytes) -> Account:
        """Derive the deterministic account for ``seed`` and register its key.

        The balance comes from the genesis allocation (zero otherwise).
        """
        wallet = Wallet(seed)
        with self._lock:
            acct = self.accounts.get(wallet.address)
            if acct is None:
                acct = Account(wallet.address)
                self.accounts[wallet.address] = acct
            acct.public_key = wallet.public_key
            return Account(acct.address, acct.nonce, acct.balance, acct.public_key)

    def get_account(self, address: Address) -> Account:
        with self._lock:
            acct = self.accounts.get(address)
            if acct is None:
                return Account(address)
            return Account(acct.address, acct.nonce, acct.balance, acct.public_key)

    def balance(self, address: Address) -> int:
        return self.get_account(address).balance

    def nonce(self, address: Address) -> int:
        return self.get_account(address).nonce

    def next_nonce(self, address: Address) -> int:
        """Nonce the next submitted transaction from ``address`` must carry."""
        with self._lock:
            pending = sum(1 for p in self.mempool.values() if p.stx.sender == address)
            return self.nonce(address) + pending

    def total_supply(self) -> int:
        with self._lock:
            return sum(a.balance for a in self.accounts.values())

    # ------------------------------------------------------------------ admission

    def _intrinsic_gas(self, tx: Transaction) -> int:
        sched = self.profile.schedule
        gas = sched.tx_base + sched.calldata_gas(tx.data)
        if tx.to is None:
            gas += sched.create_surcharge + sched.code_deposit_per_byte * self.profile.declared_code_size
        return gas

    def _reserved(self, address: Address) -> int:
        return sum(p.cost for p in self.mempool.values() if p.stx.sender == address)

    def _check_admissible(self, stx: SignedTransaction, expected_nonce: int, available: int) -> None:
        tx = stx.tx
        if not stx.verify_signature():
            raise TxRejected("invalid-signature", "signature does not verify under sender key")
        if tx.nonce < expected_nonce:
            raise TxRejected("nonce-reuse", f"nonce {tx.nonce} already used (next is {expected_nonce})")
        if tx.nonce > expected_nonce:
            raise TxRejected("nonce-too-high", f"nonce {tx.nonce} skips ahead of {expected_nonce}")
        if tx.gas_limit < self._intrinsic_gas(tx):
            raise TxRejected("intrinsic-gas-too-low", f"gas_limit {tx.gas_limit} below intrinsic cost")
        if tx.gas_limit > self.profile.block_gas_limit:
            raise TxRejected("exceeds-block-gas-limit", f"gas_limit {tx.gas_limit} exceeds block limit")
        if available < tx.gas_limit * tx.gas_price + tx.value:
            raise TxRejected("insufficient-balance", "balance does not cover gas_limit * gas_price + value")

    def submit_transaction(self, stx: SignedTransaction) -> bytes:
        """Admit a signed transaction to the mempool and return its hash.

        Raises :class:`TxRejected` with code ``invalid-signature``,
        ``nonce-reuse``, ``nonce-too-high``, ``intrinsic-gas-too-low``,
        ``exceeds-block-gas-limit`` or ``insufficient-balance``.
        """
        with self._lock:
            sender = stx.sender
            acct = self.accounts.get(sender)
            balance = acct.balance if acct else 0
            self._check_admissible(stx, self.next_nonce(sender), balance - self._reserved(sender))
            if acct is None:
                acct = self.accounts[sender] = Account(sender)
            acct.public_key = stx.public_key
            h = stx.hash
            self.mempool[h] = _PendingTx(next(self._seq), stx, self.clock_ms)
            self.tx_index[h] = stx
            if self.instant_mine:
                self.produce_block()
            return h

    # ------------------------------------------------------------------ blocks

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def block_number(self) -> int:
        return self.head.number

    def advance_clock(self, now_ms: int) -> None:
        with self._lock:
            if now_ms > self.clock_ms:
                self.clock_ms = now_ms

    def _select(self) -> list[SignedTransaction]:
        """Highest gas price first, arrival order on ties, nonces kept contiguous."""
        by_sender: dict[Address, list[_PendingTx]] = {}
        for p in self.mempool.values():
            by_sender.setdefault(p.stx.sender, []).append(p)
        for queue in by_sender.values():
            queue.sort(key=lambda p: p.stx.tx.nonce)

        chosen: list[SignedTransaction] = []
        gas_left = self.profile.block_gas_limit
        while by_sender:
            best_sender, best = min(
                ((s, q[0]) for s, q in by_sender.items()),
                key=lambda item: (-item[1].stx.tx.gas_price, item[1].seq),
            )
            if best.stx.tx.gas_limit > gas_left:
                # this sender's later nonces cannot go either
                del by_sender[best_sender]
                continue
            gas_left -= best.stx.tx.gas_limit
            chosen.append(best.stx)
            by_sender[best_sender].pop(0)
            if not by_sender[best_sender]:
                del by_sender[best_sender]
        return chosen

    def produce_block(self, now_ms: int | None = None) -> Block:
        """Seal the next block from the mempool.

        Timed mode requires ``now_ms >= head.timestamp_ms + block_interval``;
        instant-mine mode places the block exactly one interval after the
        previous one when ``now_ms`` is omitted.
        """
        with self._lock:
            earliest = self.head.timestamp_ms + self.profile.block_interval_ms
            if now_ms is None:
                now_ms = max(self.clock_ms, earliest)
            if now_ms < earliest and not self.instant_mine:
                raise LedgerError("too-early", f"next block not before t={earliest} ms (got {now_ms})")
            now_ms = max(now_ms, self.head.timestamp_ms)
            txs = self._select()
            block = self._apply_block(txs, now_ms)
            for stx in txs:
                self.mempool.pop(stx.hash, None)
            self.clock_ms = max(self.clock_ms, now_ms)
            if self.instant_mine:
                self.clock_ms = max(self.clock_ms, now_ms + self.profile.finality_delay_ms)
            if self.store is not None:
                self.store.append_block(block, txs)
            for listener in self.listeners:
                listener(block)
            return block

    def _apply_block(self, txs: list[SignedTransaction], timestamp_ms: int) -> Block:
        number = self.head.number + 1
        receipts = []
        log_index = 0
        gas_total = 0
        for i, stx in enumerate(txs):
            receipt = self._apply_tx(stx, number, i, log_index)
            log_index += len(receipt.logs)
            gas_total += receipt.gas_used
            receipts.append(receipt)
        block = Block(
            number=number,
            parent_hash=self.head.hash,
            timestamp_ms=timestamp_ms,
            tx_hashes=tuple(stx.hash for stx in txs),
            gas_used=gas_total,
            state_root=self._state_root(),
        )
        self.blocks.append(block)
        self.block_txs.append(list(txs))
        for r in receipts:
            self.receipts[r.tx_hash] = r
            self.logs.extend(r.logs)
        return block

    def _apply_tx(self, stx: SignedTransaction, block_number: int, tx_index: int, log_start: int) -> Receipt:
        tx = stx.tx
        h = stx.hash
        sender = self.accounts[tx.sender]
        sender.nonce += 1

        intrinsic = self._intrinsic_gas(tx)
        target = tx.to
        contract_address = None
        status, reason, ret = SUCCESS, None, b""
        events: list[Event] = []
        contract: NativeContract | None = None
        snap = None

        ctx = ExecutionContext(
            self.profile.schedule, tx.sender, target, block_number,
            value=tx.value, gas_limit=tx.gas_limit, gas_used=intrinsic,
        )
        try:
            if target is None:
                contract_address = Address.derive(bytes(tx.sender) + u64(tx.nonce))
                ctx.address = contract_address
                ctx.charge_method(CREATE_METHOD)
                if tx.value:
                    raise Revert("non-payable")
                cls = self.natives.get(tx.data)
                if cls is None:
                    raise Revert("unknown-code")
                if contract_address in self.contracts:
                    raise Revert("address-collision")
                contract = cls(contract_address)
                contract.construct(ctx, b"")
            elif target in self.contracts:
                contract = self.contracts[target]
                snap = contract.snapshot()
                if tx.value:
                    raise Revert("non-payable")
                ret = contract.dispatch(ctx, tx.data)
        except OutOfGas:
            status, reason = REVERTED, "out-of-gas"
            ctx.gas_used = tx.gas_limit
        except Revert as exc:
            status, reason = REVERTED, exc.reason

        if status == SUCCESS:
            if target is None:
                self.contracts[contract_address] = contract
            if tx.value:
                sender.balance -= tx.value
                self.accounts.setdefault(target, Account(target)).balance += tx.value
            for k, ev in enumerate(ctx.events):
                placed = ev.placed(block_number, log_start + k, h)
                events.append(placed)
                self.contracts[placed.emitter].record_event(placed)
        else:
            if snap is not None:
                contract.restore(snap)
            ret = b""
            if target is None:
                contract_address = None

        gas_used = ctx.gas_used
        fee = gas_used * tx.gas_price
        sender.balance -= fee
        self.accounts[self.coinbase].balance += fee
        return Receipt(
            tx_hash=h,
            block_number=block_number,
            tx_index=tx_index,
            sender=tx.sender,
            to=tx.to,
            status=status,
            gas_used=gas_used,
            gas_price=tx.gas_price,
            fee=fee,
            contract_address=contract_address,
            logs=tuple(events),
            revert_reason=reason,
            return_data=ret,
        )

    def get_block(self, number: int) -> Block:
        with self._lock:
            if not 0 <= number < len(self.blocks):
                raise NotFound("not-found", f"no block {number}")
            return self.blocks[number]

    def block_transactions(self, number: int) -> list[SignedTransaction]:
        self.get_block(number)
        return list(self.block_txs[number])

    # ------------------------------------------------------------------ queries

    def get_receipt(self, tx_hash: bytes) -> Receipt | None:
        """The receipt once its block is sealed and final, ``None`` while pending."""
        with self._lock:
            receipt = self.receipts.get(tx_hash)
            if receipt is None:
                if tx_hash in self.mempool:
                    return None
                raise NotFound("not-found", f"unknown transaction 0x{tx_hash.hex()}")
            block = self.blocks[receipt.block_number]
            if self.clock_ms < block.timestamp_ms + self.profile.finality_delay_ms:
                return None
            return receipt

    def receipt_available_at(self, tx_hash: bytes) -> int | None:
        with self._lock:
            receipt = self.receipts.get(tx_hash)
            if receipt is None:
                return None
            return self.blocks[receipt.block_number].timestamp_ms + self.profile.finality_delay_ms

    def gas_price_hint(self, method: str | None = None) -> int:
        return self.profile.gas_price_hint(method)

    def wait_for_receipt(self, tx_hash: bytes, timeout: float | None = None) -> Receipt:
        """Mine until ``tx_hash`` is sealed, then move the clock past finality.

        This drives the simulated chain forward; it is the in-process
        counterpart of polling a remote node.
        """
        with self._lock:
            while tx_hash in self.mempool:
                self.produce_block()
            available = self.receipt_available_at(tx_hash)
            if available is None:
                raise NotFound("not-found", f"unknown transaction 0x{tx_hash.hex()}")
            self.advance_clock(available)
            return self.get_receipt(tx_hash)

    def confirmations(self, tx_hash: bytes) -> int:
        with self._lock:
            receipt = self.receipts.get(tx_hash)
            if receipt is None:
                return 0
            return self.head.number - receipt.block_number + 1

    def get_transaction(self, tx_hash: bytes) -> SignedTransaction:
        with self._lock:
            try:
                return self.tx_index[tx_hash]
            except KeyError:
                raise NotFound("not-found", f"unknown transaction 0x{tx_hash.hex()}") from None

    def execute_call(self, to: Address, data: bytes, sender: Address | None = None) -> bytes:
        """Run a contract method against current state and discard every change."""
        with self._lock:
            contract = self.contracts.get(to)
            if contract is None:
                raise NotFound("not-found", f"no contract at {to}")
            snap = contract.snapshot()
            ctx = ExecutionContext(self.profile.schedule, sender, to, self.head.number)
            try:
                return contract.dispatch(ctx, data)
            except Revert as exc:
                raise CallError(exc.reason, f"call reverted: {exc.reason}") from None
            finally:
                contract.restore(snap)

    def get_contract(self, address: Address) -> NativeContract:
        with self._lock:
            try:
                return self.contracts[address]
            except KeyError:
                raise NotFound("not-found", f"no contract at {address}") from None

    def get_logs(self, address: Address | None = None, from_block: int = 0, to_block: int | None = None) -> list[Event]:
        with self._lock:
            hi = self.head.number if to_block is None else to_block
            return [
                e for e in self.logs
                if from_block <= e.block_number <= hi and (address is None or e.emitter == address)
            ]

    # ------------------------------------------------------------------ integrity

    def _state_root(self) -> bytes:
        parts = []
        live = [a for a in self.accounts.values() if a.nonce or a.balance]
        parts.append(u32(len(live)))
        for acct in sorted(live, key=lambda a: bytes(a.address)):
            parts += [bytes(acct.address), u64(acct.nonce), u128(acct.balance)]
        parts.append(u32(len(self.contracts)))
        for addr in sorted(self.contracts, key=bytes):
            parts += [bytes(addr), lp(self.contracts[addr].encode_state())]
        return sha256(b"".join(parts))

    def state_root(self) -> bytes:
        with self._lock:
            return self._state_root()

    def chain_hash(self) -> bytes:
        return self.head.hash

    def verify_chain(self) -> bool:
        """Recompute header hashes, parent links and tx roots from genesis."""
        with self._lock:
            prev = None
            for i, block in enumerate(self.blocks):
                if block.number != i:
                    return False
                if prev is None:
                    if block.parent_hash != ZERO_HASH:
                        return False
                elif block.parent_hash != prev.hash or block.timestamp_ms < prev.timestamp_ms:
                    return False
                if tuple(s.hash for s in self.block_txs[i]) != block.tx_hashes:
                    return False
                if block.gas_used > self.profile.block_gas_limit:
                    return False
                prev = block
            return True

    # ------------------------------------------------------------------ persistence

    def attach_store(self, store) -> None:
        self.store = store
        store.begin(self)

    def replay_block(self, header: Block, txs: list[SignedTransaction]) -> Block:
        """Re-execute a stored block and check it reproduces the stored header."""
        with self._lock:
            seen: dict[Address, int] = {}
            spent: dict[Address, int] = {}
            for stx in txs:
                acct = self.accounts.get(stx.sender)
                expected = (acct.nonce if acct else 0) + seen.get(stx.sender, 0)
                available = (acct.balance if acct else 0) - spent.get(stx.sender, 0)
                seen[stx.sender] = seen.get(stx.sender, 0) + 1
                spent[stx.sender] = spent.get(stx.sender, 0) + stx.tx.gas_limit * stx.tx.gas_price + stx.tx.value
                try:
                    self._check_admissible(stx, expected, available)
                except TxRejected as exc:
                    raise ChainCorrupt("chain-corrupt", f"block {header.number}: {exc}") from None
                if acct is None:
                    acct = self.accounts[stx.sender] = Account(stx.sender)
                acct.public_key = stx.public_key
                self.tx_index[stx.hash] = stx
            block = self._apply_block(txs, header.timestamp_ms)
            if block.hash != header.hash:
                raise ChainCorrupt("chain-corrupt", f"block {header.number} does not reproduce its stored hash")
            self.clock_ms = max(self.clock_ms, block.timestamp_ms)
            return block
