import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from firmchain.contract import deploy, store_hash  # noqa: E402
from firmchain.fingerprint import compute_digest  # noqa: E402
from firmchain.ledger import ETHER, Genesis, Ledger, Wallet  # noqa: E402

VECTORS = Path(__file__).parent / "vectors"


@pytest.fixture
def owner():
    return Wallet(b"test-owner")


@pytest.fixture
def stranger():
    return Wallet(b"test-stranger")


@pytest.fixture
def ledger(owner, stranger):
    return Ledger(Genesis.funded([owner, stranger], 1_000 * ETHER), "sepolia-paper", instant_mine=True)


@pytest.fixture
def contract(ledger, owner):
    address, _ = deploy(ledger, owner)
    return address


@pytest.fixture
def firmware():
    return bytes(range(256)) * 64


@pytest.fixture
def registered(ledger, owner, contract, firmware):
    receipt = store_hash(ledger, owner, contract, compute_digest(firmware))
    assert receipt.ok
    return contract
