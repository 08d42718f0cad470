"""RPC method table and request dispatch.

Binary values travel as ``0x``-prefixed hex strings, amounts and counters as
JSON integers. A pending receipt is ``null``.
"""

from __future__ import annotations

import json
import logging
from typing import Any, Callable

from pydantic import ValidationError

from ..contract import export_audit
from ..ledger.chain import CallError, Ledger, LedgerError, NotFound, TxRejected
from ..ledger.encoding import Address
from ..ledger.transactions import SignedTransaction
from .models import (
    CALL_REVERTED,
    INTERNAL_ERROR,
    INVALID_PARAMS,
    INVALID_REQUEST,
    LEDGER_ERROR,
    METHOD_NOT_FOUND,
    NOT_FOUND,
    PARSE_ERROR,
    TX_REJECTED,
    RpcRequest,
    RpcResponse,
)

log = logging.getLogger(__name__)


class InvalidParams(ValueError):
    pass


def _hex(value: Any, what: str) -> bytes:
    if not isinstance(value, str):
        raise InvalidParams(f"{what} must be a hex string")
    body = value[2:] if value[:2].lower() == "0x" else value
    try:
        return bytes.fromhex(body)
    except ValueError:
        raise InvalidParams(f"{what} is not valid hex") from None


def _address(value: Any, what: str = "address") -> Address:
    raw = _hex(value, what)
    if len(raw) != 20:
        raise InvalidParams(f"{what} must be 20 bytes")
    return Address(raw)


def _hash(value: Any) -> bytes:
    raw = _hex(value, "hash")
    if len(raw) != 32:
        raise InvalidParams("hash must be 32 bytes")
    return raw


def _int(value: Any, what: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise InvalidParams(f"{what} must be a non-negative integer")
    return value


def _arity(params: list, lo: int, hi: int | None = None) -> None:
    hi = lo if hi is None else hi
    if not lo <= len(params) <= hi:
        expected = str(lo) if lo == hi else f"{lo}..{hi}"
        raise InvalidParams(f"expected {expected} params, got {len(params)}")


def net_connected(ledger: Ledger, params: list) -> bool:
    _arity(params, 0)
    return True


def chain_id(ledger: Ledger, params: list) -> int:
    _arity(params, 0)
    return ledger.genesis.chain_id


def block_number(ledger: Ledger, params: list) -> int:
    _arity(params, 0)
    return ledger.block_number


def get_balance(ledger: Ledger, params: list) -> int:
    _arity(params, 1)
    return ledger.balance(_address(params[0]))


def get_nonce(ledger: Ledger, params: list) -> int:
    """``[address, "pending"|"latest"]``; pending (the default) counts mempool txs."""
    _arity(params, 1, 2)
    addr = _address(params[0])
    tag = params[1] if len(params) > 1 else "pending"
    if tag == "pending":
        return ledger.next_nonce(addr)
    if tag == "latest":
        return ledger.nonce(addr)
    raise InvalidParams("block tag must be 'pending' or 'latest'")


def send_transaction(ledger: Ledger, params: list) -> str:
    _arity(params, 1)
    raw = _hex(params[0], "transaction")
    try:
        stx = SignedTransaction.deserialize(raw)
    except ValueError as exc:
        raise InvalidParams(f"malformed transaction: {exc}") from None
    return "0x" + ledger.submit_transaction(stx).hex()


def call(ledger: Ledger, params: list) -> str:
    _arity(params, 2)
    return "0x" + ledger.execute_call(_address(params[0], "to"), _hex(params[1], "data")).hex()


def get_receipt(ledger: Ledger, params: list) -> dict | None:
    _arity(params, 1)
    h = _hash(params[0])
    receipt = ledger.get_receipt(h)
    if receipt is None:
        return None
    d = receipt.to_dict()
    d["confirmations"] = ledger.confirmations(h)
    return d


def get_block(ledger: Ledger, params: list) -> dict:
    _arity(params, 1)
    n = ledger.block_number if params[0] == "latest" else _int(params[0], "block number")
    return ledger.get_block(n).to_dict()


def get_logs(ledger: Ledger, params: list) -> list[dict]:
    _arity(params, 1, 3)
    addr = _address(params[0])
    lo = _int(params[1], "from_block") if len(params) > 1 else 0
    hi = _int(params[2], "to_block") if len(params) > 2 and params[2] is not None else None
    return [e.to_dict() for e in ledger.get_logs(addr, lo, hi)]


def gas_price(ledger: Ledger, params: list) -> int:
    _arity(params, 0, 1)
    method = params[0] if params else None
    if method is not None and not isinstance(method, str):
        raise InvalidParams("method must be a string")
    return ledger.gas_price_hint(method)


def state_root(ledger: Ledger, params: list) -> str:
    _arity(params, 0)
    return "0x" + ledger.state_root().hex()


def audit(ledger: Ledger, params: list) -> list[dict]:
    _arity(params, 1)
    return [r.to_dict() for r in export_audit(ledger, _address(params[0]))]


METHODS: dict[str, Callable[[Ledger, list], Any]] = {
    "net_connected": net_connected,
    "chain_id": chain_id,
    "block_number": block_number,
    "get_balance": get_balance,
    "get_nonce": get_nonce,
    "send_transaction": send_transaction,
    "call": call,
    "get_receipt": get_receipt,
    "get_block": get_block,
    "get_logs": get_logs,
    "gas_price": gas_price,
    "state_root": state_root,
    "export_audit": audit,
}


def _ledger_error_code(exc: LedgerError) -> int:
    if isinstance(exc, TxRejected):
        return TX_REJECTED
    if isinstance(exc, NotFound):
        return NOT_FOUND
    if isinstance(exc, CallError):
        return CALL_REVERTED
    return LEDGER_ERROR


def rpc_dispatch(ledger: Ledger, request: RpcRequest) -> RpcResponse:
    handler = METHODS.get(request.method)
    if handler is None:
        return RpcResponse.fail(request.id, METHOD_NOT_FOUND, f"method not found: {request.method}")
    if not isinstance(request.params, list):
        return RpcResponse.fail(request.id, INVALID_PARAMS, "invalid params: params must be a list")
    try:
        result = handler(ledger, request.params)
    except InvalidParams as exc:
        return RpcResponse.fail(request.id, INVALID_PARAMS, f"invalid params: {exc}")
    except LedgerError as exc:
        return RpcResponse.fail(request.id, _ledger_error_code(exc), f"{exc.code}: {exc}")
    except Exception:
        log.exception("internal error in %s", request.method)
        return RpcResponse.fail(request.id, INTERNAL_ERROR, "internal error")
    return RpcResponse(id=request.id, result=result)


def handle_body(ledger: Ledger, body: bytes) -> dict:
    """Decode one request body and produce the wire response. Never raises."""
    try:
        payload = json.loads(body)
    except (ValueError, UnicodeDecodeError, RecursionError):
        return RpcResponse.fail(None, PARSE_ERROR, "parse error").to_wire()
    req_id = payload.get("id") if isinstance(payload, dict) else None
    if not isinstance(req_id, int) or isinstance(req_id, bool):
        req_id = None
    try:
        request = RpcRequest.model_validate(payload)
    except ValidationError as exc:
        return RpcResponse.fail(req_id, INVALID_REQUEST, f"invalid request: {exc.error_count()} error(s)").to_wire()
    return rpc_dispatch(ledger, request).to_wire()
