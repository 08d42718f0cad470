from __future__ import annotations

from dataclasses import dataclass

from .encoding import Address, Reader, lp, opt_address, sha256, u64, u128
from .keys import DEFAULT_SCHEME, Wallet, address_from_public_key, get_scheme


@dataclass(frozen=True)
class Transaction:
    """An unsigned transaction body. ``to=None`` creates a contract."""

    sender: Address
    to: Address | None
    nonce: int
    gas_limit: int
    gas_price: int
    value: int = 0
    data: bytes = b""
    scheme_id: str = DEFAULT_SCHEME

    def body_bytes(self) -> bytes:
        return b"".join(
            [
                bytes(self.sender),
                opt_address(self.to),
                u64(self.nonce),
                u64(self.gas_limit),
                u128(self.gas_price),
                u128(self.value),
                lp(self.data),
                lp(self.scheme_id.encode("ascii")),
            ]
        )

    @property
    def hash(self) -> bytes:
        return sha256(self.body_bytes())

    def sign(self, wallet: Wallet) -> "SignedTransaction":
        if wallet.address != self.sender:
            raise ValueError("wallet address does not match transaction sender")
        if wallet.scheme_id != self.scheme_id:
            raise ValueError("wallet scheme does not match transaction scheme_id")
        return SignedTransaction(self, wallet.sign(self.hash), wallet.public_key)


@dataclass(frozen=True)
class SignedTransaction:
    """A transaction plus its detached signature over ``tx.hash``.

    The signer's public key travels with the signature so any node can check
    it against ``sender`` without a prior key registry.
    """

    tx: Transaction
    signature: bytes
    public_key: bytes

    @property
    def hash(self) -> bytes:
        return self.tx.hash

    @property
    def sender(self) -> Address:
        return self.tx.sender

    def verify_signature(self) -> bool:
        try:
            scheme = get_scheme(self.tx.scheme_id)
        except ValueError:
            return False
        if address_from_public_key(self.public_key) != self.tx.sender:
            return False
        return scheme.verify(self.public_key, self.signature, self.tx.hash)

    def serialize(self) -> bytes:
        return self.tx.body_bytes() + lp(self.signature) + lp(self.public_key)

    @classmethod
    def deserialize(cls, data: bytes) -> "SignedTransaction":
        r = Reader(data)
        tx = cls.read(r)
        r.expect_end()
        return tx

    @classmethod
    def read(cls, r: Reader) -> "SignedTransaction":
        tx = Transaction(
            sender=r.address(),
            to=r.opt_address(),
            nonce=r.u64(),
            gas_limit=r.u64(),
            gas_price=r.u128(),
            value=r.u128(),
            data=r.lp(),
            scheme_id=r.lp().decode("ascii"),
        )
        return cls(tx, r.lp(), r.lp())
