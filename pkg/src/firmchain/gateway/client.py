from __future__ import annotations

import itertools
import os
import threading
import time
from typing import Any
from urllib.parse import urlsplit, urlunsplit

import httpx

from ..ledger.chain import CallError, LedgerError, NotFound, Receipt, TxRejected
from ..ledger.encoding import Address
from ..ledger.transactions import SignedTransaction
from .models import CALL_REVERTED, NOT_FOUND, TX_REJECTED

ENV_RPC_URL = "FIRMCHAIN_RPC_URL"
DEFAULT_RPC_URL = "http://127.0.0.1:8545/rpc"
DEFAULT_TIMEOUT = 5.0


class RpcError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class GatewayUnreachable(Exception):
    """The endpoint could not be reached or did not answer in time."""


def normalize_url(url: str) -> str:
    """Accept ``host:port``, a base URL, or the full ``/rpc`` URL."""
    if "://" not in url:
        url = "http://" + url
    parts = urlsplit(url)
    path = parts.path if parts.path not in ("", "/") else "/rpc"
    return urlunsplit((parts.scheme, parts.netloc, path, parts.query, ""))


def default_url() -> str:
    return os.environ.get(ENV_RPC_URL, DEFAULT_RPC_URL)


def _raise_for(code: int, message: str):
    ident, _, detail = message.partition(": ")
    if code == TX_REJECTED:
        raise TxRejected(ident, detail or ident)
    if code == NOT_FOUND:
        raise NotFound(ident, detail or ident)
    if code == CALL_REVERTED:
        raise CallError(ident, detail or ident)
    if code > -32100 and code <= -32000:
        raise LedgerError(ident, detail or ident)
    raise RpcError(code, message)


class RpcClient:
    """HTTP client for the gateway.

    Ledger failures come back as the same exception types the in-process
    :class:`~firmchain.ledger.Ledger` raises, so code written against one
    works against the other.
    """

    def __init__(
        self,
        url: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        poll_interval: float = 0.05,
        receipt_timeout: float = 120.0,
    ):
        self.url = normalize_url(url or default_url())
        self.timeout = timeout
        self.receipt_timeout = receipt_timeout
        self.poll_interval = poll_interval
        self._ids = itertools.count(1)
        self._id_lock = threading.Lock()
        self._http = httpx.Client(timeout=timeout)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "RpcClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def request(self, method: str, *params: Any) -> Any:
        with self._id_lock:
            req_id = next(self._ids)
        body = {"id": req_id, "method": method, "params": list(params)}
        try:
            resp = self._http.post(self.url, json=body)
        except httpx.HTTPError as exc:
            raise GatewayUnreachable(f"{self.url}: {exc}") from exc
        if resp.status_code != 200:
            raise GatewayUnreachable(f"{self.url}: HTTP {resp.status_code}")
        try:
            payload = resp.json()
        except ValueError:
            raise GatewayUnreachable(f"{self.url}: response is not JSON") from None
        if payload.get("error"):
            err = payload["error"]
            _raise_for(err.get("code", 0), err.get("message", ""))
        return payload.get("result")

    # -- read methods --------------------------------------------------------

    def connected(self) -> bool:
        return self.request("net_connected") is True

    def chain_id(self) -> int:
        return self.request("chain_id")

    def block_number(self) -> int:
        return self.request("block_number")

    def balance(self, address: Address) -> int:
        return self.request("get_balance", str(address))

    def next_nonce(self, address: Address) -> int:
        return self.request("get_nonce", str(address), "pending")

    def gas_price_hint(self, method: str | None = None) -> int:
        return self.request("gas_price", method) if method else self.request("gas_price")

    def execute_call(self, to: Address, data: bytes) -> bytes:
        return bytes.fromhex(self.request("call", str(to), "0x" + data.hex())[2:])

    def get_receipt(self, tx_hash: bytes) -> Receipt | None:
        d = self.request("get_receipt", "0x" + tx_hash.hex())
        return None if d is None else Receipt.from_dict(d)

    def get_receipt_raw(self, tx_hash: bytes) -> dict | None:
        return self.request("get_receipt", "0x" + tx_hash.hex())

    def get_block(self, number: int | str = "latest") -> dict:
        return self.request("get_block", number)

    def get_logs(self, address: Address, from_block: int = 0, to_block: int | None = None) -> list[dict]:
        return self.request("get_logs", str(address), from_block, to_block)

    def state_root(self) -> bytes:
        return bytes.fromhex(self.request("state_root")[2:])

    def export_audit(self, contract: Address) -> list[dict]:
        return self.request("export_audit", str(contract))

    # -- writes ----------------------------------------------------------------

    def submit_transaction(self, stx: SignedTransaction) -> bytes:
        return bytes.fromhex(self.request("send_transaction", "0x" + stx.serialize().hex())[2:])

    def wait_for_receipt(self, tx_hash: bytes, timeout: float | None = None) -> Receipt:
        timeout = self.receipt_timeout if timeout is None else timeout
        deadline = time.monotonic() + timeout
        while True:
            receipt = self.get_receipt(tx_hash)
            if receipt is not None:
                return receipt
            if time.monotonic() > deadline:
                raise GatewayUnreachable(f"no receipt for 0x{tx_hash.hex()} after {timeout:g}s")
            time.sleep(self.poll_interval)


def client_connect(url: str, timeout: float = DEFAULT_TIMEOUT) -> bool:
    """True iff the endpoint answers ``net_connected`` affirmatively within ``timeout``."""
    try:
        with RpcClient(url, timeout=timeout) as client:
            return client.connected()
    except Exception:
        return False
