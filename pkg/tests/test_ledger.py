import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from firmchain.contract import (
    FirmwareIntegrity,
    deploy,
    register_versioned_data,
    store_hash,
    store_hash_data,
    verify_hash_logged_data,
)
from firmchain.fingerprint import Digest
from firmchain.ledger import (
    ETHER,
    GWEI,
    ChainCorrupt,
    ChainFile,
    Genesis,
    Ledger,
    LedgerError,
    NotFound,
    SignedTransaction,
    Transaction,
    TxRejected,
    Wallet,
    load_chain,
    load_profile,
    wei_to_eth,
)
from firmchain.ledger.encoding import Address, Reader, lp, u32, u64, u128

PRICE = 10 * GWEI


def transfer(ledger, wallet, to, value=0, nonce=None, gas_price=PRICE, gas_limit=21_000):
    nonce = ledger.next_nonce(wallet.address) if nonce is None else nonce
    return Transaction(wallet.address, to, nonce, gas_limit, gas_price, value=value).sign(wallet)


class TestEncoding:
    @given(st.integers(0, 2**64 - 1))
    def test_u64_round_trip(self, n):
        assert Reader(u64(n)).u64() == n

    @given(st.integers(0, 2**128 - 1))
    def test_u128_round_trip(self, n):
        assert Reader(u128(n)).u128() == n

    @given(st.binary(max_size=300))
    def test_length_prefix_round_trip(self, b):
        r = Reader(lp(b) + u32(7))
        assert r.lp() == b and r.u32() == 7 and r.done()

    def test_truncated_input_raises(self):
        with pytest.raises(ValueError):
            Reader(b"\x00\x00\x00\x05ab").lp()
        with pytest.raises(ValueError):
            u64(2**64)

    def test_address_parse(self):
        a = Address(bytes(range(20)))
        assert Address.parse(str(a)) == a
        with pytest.raises(ValueError):
            Address.parse("0x1234")


class TestTransactions:
    @settings(max_examples=50, deadline=None)
    @given(
        nonce=st.integers(0, 2**64 - 1),
        gas=st.integers(0, 2**64 - 1),
        price=st.integers(0, 2**128 - 1),
        value=st.integers(0, 2**128 - 1),
        data=st.binary(max_size=100),
        create=st.booleans(),
    )
    def test_serialization_round_trip(self, nonce, gas, price, value, data, create):
        w = Wallet(b"rt")
        to = None if create else Address(b"\x11" * 20)
        stx = Transaction(w.address, to, nonce, gas, price, value, data).sign(w)
        back = SignedTransaction.deserialize(stx.serialize())
        assert back == stx and back.hash == stx.hash and back.verify_signature()

    def test_hash_excludes_signature(self):
        w = Wallet(b"a")
        tx = Transaction(w.address, None, 0, 1, 1)
        assert tx.sign(w).hash == tx.hash

    def test_every_signature_bit_matters(self):
        w = Wallet(b"sig")
        stx = Transaction(w.address, Address(b"\x01" * 20), 0, 21_000, 1).sign(w)
        for bit in range(len(stx.signature) * 8):
            sig = bytearray(stx.signature)
            sig[bit // 8] ^= 1 << (bit % 8)
            assert not replace(stx, signature=bytes(sig)).verify_signature()

    def test_foreign_key_rejected(self):
        a, b = Wallet(b"a"), Wallet(b"b")
        tx = Transaction(a.address, None, 0, 1, 1)
        forged = SignedTransaction(tx, b.sign(tx.body_bytes()), b.public_key)
        assert not forged.verify_signature()

    def test_wallet_file_round_trip(self, tmp_path):
        w = Wallet(b"file")
        w.save(tmp_path / "k.json")
        assert Wallet.load(tmp_path / "k.json").address == w.address


class TestAdmission:
    def test_rejection_codes(self, ledger, owner, stranger):
        poor = Wallet(b"poor")
        cases = [
            (transfer(ledger, owner, stranger.address, nonce=5), "nonce-too-high"),
            (transfer(ledger, owner, stranger.address, gas_limit=20_999), "intrinsic-gas-too-low"),
            (transfer(ledger, owner, stranger.address, gas_limit=10**9), "exceeds-block-gas-limit"),
            (transfer(ledger, poor, stranger.address), "insufficient-balance"),
        ]
        tampered = transfer(ledger, owner, stranger.address)
        cases.append((replace(tampered, tx=replace(tampered.tx, value=1)), "invalid-signature"))
        for stx, code in cases:
            with pytest.raises(TxRejected) as info:
                ledger.submit_transaction(stx)
            assert info.value.code == code

    def test_replay_rejected(self, ledger, owner, stranger):
        stx = transfer(ledger, owner, stranger.address, value=5)
        ledger.submit_transaction(stx)
        with pytest.raises(TxRejected) as info:
            ledger.submit_transaction(stx)
        assert info.value.code == "nonce-reuse"

    def test_pending_reservation_counts(self, owner, stranger):
        led = Ledger(Genesis({owner.address: 21_000 * PRICE * 2}), "sepolia-paper")
        led.submit_transaction(transfer(led, owner, stranger.address))
        led.submit_transaction(transfer(led, owner, stranger.address))
        with pytest.raises(TxRejected) as info:
            led.submit_transaction(transfer(led, owner, stranger.address))
        assert info.value.code == "insufficient-balance"

    def test_duplicate_while_pending(self, owner, stranger):
        led = Ledger(Genesis.funded([owner]), "sepolia-paper")
        stx = transfer(led, owner, stranger.address)
        led.submit_transaction(stx)
        with pytest.raises(TxRejected) as info:
            led.submit_transaction(stx)
        assert info.value.code == "nonce-reuse"


class TestBlockProduction:
    def test_timed_mode_spacing(self, owner):
        led = Ledger(Genesis.funded([owner]), "sepolia-paper")
        with pytest.raises(LedgerError) as info:
            led.produce_block(11_999)
        assert info.value.code == "too-early"
        assert led.produce_block(12_000).number == 1

    def test_gas_price_then_arrival_order(self):
        ws = [Wallet(bytes([k])) for k in range(4)]
        led = Ledger(Genesis.funded(ws), "sepolia-paper")
        to = Address(b"\x09" * 20)
        prices = [5, 9, 5, 7]
        hashes = [led.submit_transaction(transfer(led, w, to, gas_price=p * GWEI)) for w, p in zip(ws, prices)]
        block = led.produce_block(12_000)
        assert list(block.tx_hashes) == [hashes[1], hashes[3], hashes[0], hashes[2]]

    def test_sender_nonces_stay_contiguous(self):
        a, b = Wallet(b"a"), Wallet(b"b")
        led = Ledger(Genesis.funded([a, b]), "sepolia-paper")
        to = Address(b"\x09" * 20)
        a0 = led.submit_transaction(transfer(led, a, to, gas_price=1 * GWEI))
        a1 = led.submit_transaction(transfer(led, a, to, gas_price=50 * GWEI))
        b0 = led.submit_transaction(transfer(led, b, to, gas_price=10 * GWEI))
        block = led.produce_block(12_000)
        assert list(block.tx_hashes) == [b0, a0, a1]

    def test_block_gas_limit_packing(self):
        ws = [Wallet(bytes([k])) for k in range(5)]
        prof = load_profile("sepolia-paper").with_overrides(block_gas_limit=50_000)
        led = Ledger(Genesis.funded(ws), prof)
        for w in ws:
            led.submit_transaction(transfer(led, w, Address(b"\x09" * 20)))
        sizes = []
        t = 0
        while led.mempool:
            t += 12_000
            sizes.append(len(led.produce_block(t).tx_hashes))
        assert sizes == [2, 2, 1]

    def test_receipt_pending_until_finality(self, owner, stranger):
        led = Ledger(Genesis.funded([owner]), "sepolia-paper")
        h = led.submit_transaction(transfer(led, owner, stranger.address))
        led.produce_block(12_000)
        assert led.get_receipt(h) is None
        led.advance_clock(12_000 + 8_599)
        assert led.get_receipt(h) is None
        led.advance_clock(12_000 + 8_600)
        assert led.get_receipt(h).ok

    def test_instant_mine_one_block_per_tx(self, ledger, owner, stranger):
        for _ in range(3):
            ledger.submit_transaction(transfer(ledger, owner, stranger.address))
        assert ledger.block_number == 3
        assert [b.timestamp_ms for b in ledger.blocks] == [0, 12_000, 24_000, 36_000]

    def test_unknown_lookups(self, ledger):
        with pytest.raises(NotFound):
            ledger.get_block(99)
        with pytest.raises(NotFound):
            ledger.get_transaction(b"\x00" * 32)
        with pytest.raises(NotFound):
            ledger.get_receipt(b"\x00" * 32)


class TestExecution:
    def test_value_transfer(self, ledger, owner, stranger):
        before = ledger.balance(stranger.address)
        r = ledger.wait_for_receipt(ledger.submit_transaction(transfer(ledger, owner, stranger.address, value=ETHER)))
        assert r.ok and r.gas_used == 21_000
        assert ledger.balance(stranger.address) == before + ETHER

    def test_contracts_reject_value(self, ledger, owner, contract):
        stx = Transaction(owner.address, contract, ledger.next_nonce(owner.address), 100_000, PRICE, value=1,
                          data=store_hash_data(Digest.of(b"x"))).sign(owner)
        r = ledger.wait_for_receipt(ledger.submit_transaction(stx))
        assert r.revert_reason == "non-payable"
        assert ledger.get_contract(contract).reference is None

    def test_out_of_gas_charges_limit(self, ledger, owner, contract):
        stx = Transaction(owner.address, contract, ledger.next_nonce(owner.address), 60_000, PRICE,
                          data=store_hash_data(Digest.of(b"x"))).sign(owner)
        r = ledger.wait_for_receipt(ledger.submit_transaction(stx))
        assert r.revert_reason == "out-of-gas" and r.gas_used == 60_000 and r.fee == 60_000 * PRICE

    def test_unknown_code(self, ledger, owner):
        stx = Transaction(owner.address, None, ledger.next_nonce(owner.address), 1_000_000, PRICE,
                          data=b"NotAContract").sign(owner)
        r = ledger.wait_for_receipt(ledger.submit_transaction(stx))
        assert r.revert_reason == "unknown-code" and r.contract_address is None

    def test_distinct_deploy_addresses(self, ledger, owner):
        a, _ = deploy(ledger, owner)
        b, _ = deploy(ledger, owner)
        assert a != b

    def test_read_only_call_changes_nothing(self, ledger, owner, contract):
        root = ledger.state_root()
        ledger.execute_call(contract, store_hash_data(Digest.of(b"x")), sender=owner.address)
        assert ledger.state_root() == root
        assert ledger.get_contract(contract).reference is None

    def test_wei_to_eth_exact(self):
        assert str(wei_to_eth(4_430_010_654_608_835)) == "0.004430010654608835"


def _random_tx(rng, ledger, wallets, contracts):
    w = rng.choice(wallets)
    kind = rng.random()
    price = rng.randrange(1, 40) * GWEI
    if kind < 0.45 and contracts:
        to = rng.choice(wallets).address if rng.random() < 0.8 else Address(rng.randbytes(20))
        return Transaction(w.address, to, ledger.next_nonce(w.address), 21_000 + rng.randrange(0, 5000), price,
                           value=rng.randrange(0, ETHER // 100))
    if kind < 0.5 or not contracts:
        return Transaction(w.address, None, ledger.next_nonce(w.address), 1_000_000, price,
                           data=FirmwareIntegrity.code_id)
    c = rng.choice(contracts)
    d = Digest(rng.randbytes(32))
    data = rng.choice([
        store_hash_data(d),
        verify_hash_logged_data(d),
        register_versioned_data(f"fw-{rng.randrange(5)}", d),
        rng.randbytes(rng.randrange(0, 40)),
    ])
    gas = rng.choice([100_000, 60_000, 30_000])
    return Transaction(w.address, c, ledger.next_nonce(w.address), gas, price, data=data)


N_TX = 1200


def run_workload(path, seed=20240611):
    """Randomized workload of at least ``N_TX`` admitted transactions."""
    rng = random.Random(seed)
    wallets = [Wallet(f"inv-{k}".encode()) for k in range(12)]
    by_address = {w.address: w for w in wallets}
    ledger = Ledger(Genesis.funded(wallets, 5 * ETHER), "sepolia-paper")
    ledger.attach_store(ChainFile(path))
    supply0 = ledger.total_supply()
    contracts: list[Address] = []
    admitted: list[Transaction] = []
    rejected = 0
    nonce_track = {w.address: 0 for w in wallets}
    violations = []
    t = 0
    while len(admitted) < N_TX:
        for _ in range(rng.randrange(1, 12)):
            tx = _random_tx(rng, ledger, wallets, contracts)
            # a few are signed with the wrong key on purpose
            if rng.random() < 0.02:
                forger = rng.choice(wallets)
                stx = SignedTransaction(tx, forger.sign(tx.body_bytes()), forger.public_key)
            else:
                stx = tx.sign(by_address[tx.sender])
            try:
                ledger.submit_transaction(stx)
                admitted.append(tx)
            except TxRejected:
                rejected += 1
        t += 12_000 + rng.randrange(0, 3) * 12_000
        block = ledger.produce_block(t)
        for h in block.tx_hashes:
            r = ledger.receipts[h]
            if r.contract_address is not None:
                contracts.append(r.contract_address)
        if ledger.total_supply() != supply0:
            violations.append(("supply", block.number))
        for w in wallets:
            n = ledger.nonce(w.address)
            if n < nonce_track[w.address]:
                violations.append(("nonce", w.address))
            nonce_track[w.address] = n
    while ledger.mempool:
        t += 12_000
        ledger.produce_block(t)
    ledger.store.close()
    return ledger, admitted, rejected, violations, path, supply0


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    return run_workload(tmp_path_factory.mktemp("chain") / "chain.bin")


class TestInvariants:
    """Zero violations over the randomized workload."""

    def test_enough_transactions(self, run):
        ledger, admitted, rejected, *_ = run
        assert len(admitted) >= 1000 and rejected > 0
        assert sum(len(b) for b in ledger.block_txs) == len(admitted)

    def test_supply_conserved(self, run):
        ledger, _, _, violations, _, supply0 = run
        assert [v for v in violations if v[0] == "supply"] == []
        assert ledger.total_supply() == supply0

    def test_nonces_monotone_and_exact(self, run):
        ledger, admitted, _, violations, *_ = run
        assert [v for v in violations if v[0] == "nonce"] == []
        per_sender: dict = {}
        for tx in admitted:
            per_sender[tx.sender] = per_sender.get(tx.sender, 0) + 1
        for sender, count in per_sender.items():
            assert ledger.nonce(sender) == count
        for n, txs in enumerate(ledger.block_txs):
            for stx in txs:
                assert ledger.receipts[stx.hash].block_number == n

    def test_fee_is_gas_times_price(self, run):
        ledger, *_ = run
        coinbase_total = 0
        for r in ledger.receipts.values():
            stx = ledger.tx_index[r.tx_hash]
            assert r.fee == r.gas_used * stx.tx.gas_price
            assert r.gas_used <= stx.tx.gas_limit
            coinbase_total += r.fee
        assert ledger.balance(ledger.coinbase) == coinbase_total

    def test_mixed_outcomes_exercised(self, run):
        ledger, *_ = run
        reasons = {r.revert_reason for r in ledger.receipts.values()}
        assert {None, "out-of-gas", "unauthorized", "unknown-method"} <= reasons

    def test_chain_recomputes(self, run):
        ledger, *_ = run
        assert ledger.verify_chain()
        fresh = Ledger(ledger.genesis, ledger.profile)
        for n in range(1, ledger.block_number + 1):
            rebuilt = fresh.replay_block(ledger.blocks[n], ledger.block_txs[n])
            assert rebuilt.hash == ledger.blocks[n].hash
        assert fresh.state_root() == ledger.state_root()

    def test_reload_from_chain_file(self, run):
        ledger, _, _, _, path, _ = run
        again = load_chain(path)
        assert again.chain_hash() == ledger.chain_hash()
        assert again.state_root() == ledger.state_root()

    def test_deterministic(self, run, tmp_path):
        ledger, *_ = run
        again = run_workload(tmp_path / "again.bin")
        assert again[0].chain_hash() == ledger.chain_hash()


class TestPersistence:
    def test_corrupt_file_detected(self, tmp_path, owner, stranger):
        path = tmp_path / "c.bin"
        led = Ledger(Genesis.funded([owner]), "sepolia-paper", instant_mine=True)
        led.attach_store(ChainFile(path))
        for _ in range(3):
            led.submit_transaction(transfer(led, owner, stranger.address, value=7))
        led.store.close()
        data = bytearray(path.read_bytes())
        data[-40] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(ChainCorrupt):
            load_chain(path)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"nope")
        with pytest.raises(ChainCorrupt):
            load_chain(p)

    def test_append_after_reload(self, tmp_path, owner, stranger):
        path = tmp_path / "c.bin"
        led = Ledger(Genesis.funded([owner]), "sepolia-paper", instant_mine=True)
        led.attach_store(ChainFile(path))
        contract, _ = deploy(led, owner)
        led.store.close()
        again = load_chain(path, instant_mine=True, append=True)
        store_hash(again, owner, contract, Digest.of(b"fw"))
        again.store.close()
        third = load_chain(path)
        assert third.get_contract(contract).reference == Digest.of(b"fw")
