import json
import random
import socket
import threading
import time

import httpx
import pytest

from firmchain.contract import (
    audit_to_jsonl,
    deploy,
    export_audit,
    register_versioned,
    store_hash,
    verify_hash_call,
    verify_hash_data,
    verify_hash_tx,
    AuditRecord,
)
from firmchain.fingerprint import Digest
from firmchain.gateway import GatewayServer, RpcClient, client_connect, handle_body
from firmchain.gateway.client import GatewayUnreachable, normalize_url
from firmchain.gateway.models import (
    CALL_REVERTED,
    INVALID_PARAMS,
    INVALID_REQUEST,
    METHOD_NOT_FOUND,
    NOT_FOUND,
    PARSE_ERROR,
    TX_REJECTED,
)
from firmchain.ledger import CallError, ETHER, Genesis, Ledger, NotFound, Transaction, TxRejected, Wallet

ERROR_CODES = {PARSE_ERROR, INVALID_REQUEST, METHOD_NOT_FOUND, INVALID_PARAMS, -32603,
               TX_REJECTED, NOT_FOUND, CALL_REVERTED, -32003}


def body(method, *params, id=1):
    return json.dumps({"id": id, "method": method, "params": list(params)}).encode()


@pytest.fixture
def node(ledger):
    with GatewayServer(ledger) as server:
        yield server


@pytest.fixture
def client(node):
    with RpcClient(node.url, timeout=5) as c:
        yield c


class TestErrorCodes:
    def test_parse_error(self, ledger):
        resp = handle_body(ledger, b"{not json")
        assert resp == {"id": None, "error": {"code": PARSE_ERROR, "message": "parse error"}}

    @pytest.mark.parametrize("payload", [
        [], 5, "x", {"method": "chain_id"}, {"id": "1", "method": "chain_id"},
        {"id": 1}, {"id": 1, "method": 3}, {"id": True, "method": "chain_id"},
    ])
    def test_invalid_request(self, ledger, payload):
        resp = handle_body(ledger, json.dumps(payload).encode())
        assert resp["error"]["code"] == INVALID_REQUEST

    def test_unknown_method(self, ledger):
        assert handle_body(ledger, body("eth_mine"))["error"]["code"] == METHOD_NOT_FOUND

    @pytest.mark.parametrize("method,params", [
        ("chain_id", [1]),
        ("get_balance", ["0x12"]),
        ("get_balance", [12]),
        ("get_nonce", ["0x" + "11" * 20, "earliest"]),
        ("send_transaction", ["0xzz"]),
        ("send_transaction", ["0x0102"]),
        ("get_receipt", ["0x00"]),
        ("get_block", [-1]),
        ("gas_price", [5]),
    ])
    def test_invalid_params(self, ledger, method, params):
        assert handle_body(ledger, body(method, *params))["error"]["code"] == INVALID_PARAMS

    def test_params_must_be_list(self, ledger):
        payload = {"id": 3, "method": "chain_id", "params": {"a": 1}}
        assert handle_body(ledger, json.dumps(payload).encode())["error"]["code"] == INVALID_PARAMS

    def test_ledger_errors(self, ledger, owner, contract):
        stx = Transaction(owner.address, contract, 0, 100_000, 1).sign(owner)
        resp = handle_body(ledger, body("send_transaction", "0x" + stx.serialize().hex()))
        assert resp["error"]["code"] == TX_REJECTED
        assert resp["error"]["message"].startswith("nonce-reuse: ")
        assert handle_body(ledger, body("get_block", 99))["error"]["code"] == NOT_FOUND
        resp = handle_body(ledger, body("call", str(contract), "0x" + verify_hash_data(Digest.of(b"x")).hex()))
        assert resp["error"]["code"] == CALL_REVERTED
        assert resp["error"]["message"].startswith("no-reference: ")

    def test_pending_receipt_is_null(self, owner, stranger):
        led = Ledger(Genesis.funded([owner]), "sepolia-paper")
        stx = Transaction(owner.address, stranger.address, 0, 21_000, 10**9).sign(owner)
        h = led.submit_transaction(stx)
        assert handle_body(led, body("get_receipt", "0x" + h.hex())) == {"id": 1, "result": None}


class TestFuzz:
    @staticmethod
    def random_body(rng: random.Random) -> bytes:
        names = ["chain_id", "get_balance", "get_nonce", "send_transaction", "call", "get_receipt",
                 "get_block", "get_logs", "gas_price", "state_root", "export_audit", "bogus", ""]
        atoms = [None, True, 0, -1, 2**70, 1.5, "", "0x", "latest", "pending", "0x" + "ab" * 20,
                 "0x" + "00" * 32, "0x" + "zz", [], {}, [1, [2]]]
        choice = rng.randrange(6)
        if choice == 0:
            return rng.randbytes(rng.randrange(0, 60))
        if choice == 1:
            return json.dumps(rng.choice(atoms)).encode()
        payload = {}
        if rng.random() < 0.9:
            payload["id"] = rng.choice([rng.randrange(10**6), "7", None, 1.0, -3])
        if rng.random() < 0.95:
            payload["method"] = rng.choice(names + [rng.choice(atoms)])
        if rng.random() < 0.8:
            payload["params"] = rng.choice([
                [rng.choice(atoms) for _ in range(rng.randrange(4))],
                rng.choice(atoms),
            ])
        text = json.dumps(payload)
        if choice == 5 and text:
            cut = rng.randrange(len(text))
            text = text[:cut]
        return text.encode()

    def check(self, resp):
        assert set(resp) in ({"id", "result"}, {"id", "error"})
        if "error" in resp:
            assert resp["error"]["code"] in ERROR_CODES
            assert resp["error"]["code"] != -32603, resp
        assert resp["id"] is None or (isinstance(resp["id"], int) and not isinstance(resp["id"], bool))

    def test_ten_thousand_bodies(self, ledger, registered):
        rng = random.Random(2024)
        for _ in range(10_000):
            raw = self.random_body(rng)
            self.check(handle_body(ledger, raw))

    def test_over_http(self, node):
        rng = random.Random(77)
        with httpx.Client(timeout=5) as http:
            for _ in range(200):
                r = http.post(node.url, content=self.random_body(rng))
                assert r.status_code == 200
                self.check(r.json())


class TestClient:
    def test_connect(self, node):
        assert client_connect(node.url)
        assert client_connect(node.url.removesuffix("/rpc"))

    def test_closed_port(self):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        assert not client_connect(f"http://127.0.0.1:{port}", timeout=1)

    def test_hanging_endpoint(self):
        srv = socket.socket()
        srv.bind(("127.0.0.1", 0))
        srv.listen(5)
        port = srv.getsockname()[1]
        try:
            t0 = time.monotonic()
            assert not client_connect(f"http://127.0.0.1:{port}", timeout=0.5)
            assert time.monotonic() - t0 < 3
        finally:
            srv.close()

    def test_normalize_url(self):
        assert normalize_url("127.0.0.1:8545") == "http://127.0.0.1:8545/rpc"
        assert normalize_url("http://h:1/") == "http://h:1/rpc"
        assert normalize_url("http://h:1/rpc") == "http://h:1/rpc"

    def test_error_mapping(self, client, ledger, owner, contract):
        with pytest.raises(NotFound):
            client.get_block(50)
        with pytest.raises(CallError) as info:
            verify_hash_call(client, contract, Digest.of(b"x"))
        assert info.value.code == "no-reference"
        stx = Transaction(owner.address, contract, 0, 100_000, 1).sign(owner)
        with pytest.raises(TxRejected) as info:
            client.submit_transaction(stx)
        assert info.value.code == "nonce-reuse"

    def test_reads(self, client, ledger, owner, registered):
        assert client.chain_id() == ledger.genesis.chain_id
        assert client.block_number() == ledger.block_number
        assert client.balance(owner.address) == ledger.balance(owner.address)
        assert client.next_nonce(owner.address) == 2
        assert client.get_block()["number"] == ledger.block_number
        assert len(client.get_logs(registered)) == 1
        assert client.gas_price_hint("verifyHashLogged(bytes32)") == 1_539_866_239

    def test_methods_listing(self, node):
        names = httpx.get(node.url.replace("/rpc", "/methods")).json()
        assert "send_transaction" in names

    def test_stopped_gateway_unreachable(self, ledger):
        server = GatewayServer(ledger).start()
        server.stop()
        with pytest.raises(GatewayUnreachable):
            RpcClient(server.url, timeout=1).chain_id()


def scripted_sequence(backend, owner, stranger):
    contract, _ = deploy(backend, owner)
    store_hash(backend, owner, contract, Digest.of(b"firmware-1.0"))
    register_versioned(backend, owner, contract, "plc-7", Digest.of(b"firmware-1.0"))
    store_hash(backend, stranger, contract, Digest.of(b"evil"))
    verify_hash_tx(backend, stranger, contract, Digest.of(b"firmware-1.0"))
    verify_hash_tx(backend, owner, contract, Digest.of(b"tampered"))
    return contract


class TestTransparency:
    def test_direct_and_gateway_identical(self, owner, stranger):
        genesis = Genesis.funded([owner, stranger], 10 * ETHER)
        direct = Ledger(genesis, "sepolia-paper", instant_mine=True)
        c1 = scripted_sequence(direct, owner, stranger)

        served = Ledger(Genesis.funded([owner, stranger], 10 * ETHER), "sepolia-paper", instant_mine=True)
        with GatewayServer(served) as server, RpcClient(server.url) as client:
            c2 = scripted_sequence(client, owner, stranger)
            remote_root = client.state_root()
            remote_audit = client.export_audit(c2)

        assert c1 == c2
        assert direct.state_root() == remote_root == served.state_root()
        assert direct.chain_hash() == served.chain_hash()
        local = audit_to_jsonl(export_audit(direct, c1))
        remote = audit_to_jsonl([AuditRecord.from_dict(d) for d in remote_audit])
        assert local.encode() == remote.encode()


class TestConcurrency:
    def test_parallel_clients(self):
        wallets = [Wallet(f"par-{k}".encode()) for k in range(6)]
        led = Ledger(Genesis.funded(wallets, 10 * ETHER), "devnet", instant_mine=True)
        errors = []
        with GatewayServer(led) as server:
            def worker(w):
                try:
                    with RpcClient(server.url) as c:
                        addr, _ = deploy(c, w)
                        for k in range(5):
                            register_versioned(c, w, addr, "fw", Digest.of(bytes([k])))
                except Exception as exc:  # pragma: no cover - surfaced below
                    errors.append(exc)

            threads = [threading.Thread(target=worker, args=(w,)) for w in wallets]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        assert errors == []
        assert led.block_number == 36
        assert all(led.nonce(w.address) == 6 for w in wallets)
        assert led.verify_chain()
