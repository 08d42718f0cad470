import hashlib
import math
import random

import pytest

from firmchain import anchor
from firmchain.anchor import MerkleProof, build_tree, fold, prove, verify_proof
from firmchain.contract import get_versioned
from firmchain.fingerprint import Digest


def oracle_root(leaves: list[bytes]) -> bytes:
    """Level-by-level recomputation written independently of the library."""
    level = list(leaves)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            if i + 1 == len(level):
                nxt.append(level[i])
            else:
                nxt.append(hashlib.sha256(level[i] + level[i + 1]).digest())
        level = nxt
    return level[0]


def leaves_for(n: int, seed: int) -> list[Digest]:
    rng = random.Random(seed)
    return [Digest(rng.randbytes(32)) for _ in range(n)]


def flip(b: bytes, bit: int) -> Digest:
    out = bytearray(b)
    out[bit // 8] ^= 1 << (bit % 8)
    return Digest(bytes(out))


class TestTree:
    def test_single_leaf(self):
        (leaf,) = leaves_for(1, 0)
        tree = build_tree([leaf])
        assert tree.root == leaf
        proof = prove(tree, 0)
        assert proof.path == () and verify_proof(leaf, proof, leaf)

    def test_two_leaves(self):
        a, b = leaves_for(2, 1)
        assert build_tree([a, b]).root == hashlib.sha256(a + b).digest()

    def test_empty(self):
        with pytest.raises(ValueError):
            build_tree([])

    def test_order_sensitive(self):
        a, b = leaves_for(2, 2)
        assert build_tree([a, b]).root != build_tree([b, a]).root

    def test_brute_force_oracle_random_trees(self):
        rng = random.Random(8)
        for trial in range(100):
            leaves = leaves_for(rng.randrange(1, 257), trial)
            assert build_tree(leaves).root == oracle_root(leaves)

    def test_seven_leaves(self):
        leaves = leaves_for(7, 7)
        assert build_tree(leaves).root == oracle_root(leaves)


class TestExhaustiveSmallTrees:
    @pytest.mark.parametrize("n", range(1, 17))
    def test_proof_verifies_iff_leaf_matches(self, n):
        leaves = leaves_for(n, 100 + n)
        tree = build_tree(leaves)
        for i in range(n):
            proof = prove(tree, i)
            assert len(proof.path) <= math.ceil(math.log2(n)) if n > 1 else proof.path == ()
            for j in range(n):
                assert verify_proof(leaves[j], proof, tree.root) == (i == j)

    @pytest.mark.parametrize("n", range(1, 17))
    def test_every_leaf_change_moves_root(self, n):
        leaves = leaves_for(n, 200 + n)
        root = build_tree(leaves).root
        for i in range(n):
            for bit in (0, 77, 255):
                changed = list(leaves)
                changed[i] = flip(leaves[i], bit)
                assert build_tree(changed).root != root

    @pytest.mark.parametrize("n", [2, 3, 5, 8, 13, 16])
    def test_mutation_sweep(self, n):
        leaves = leaves_for(n, 300 + n)
        tree = build_tree(leaves)
        for i in range(n):
            proof = prove(tree, i)
            for bit in range(0, 256, 5):
                assert not verify_proof(flip(leaves[i], bit), proof, tree.root)
                assert not verify_proof(leaves[i], proof, flip(tree.root, bit))
                for k, (sib, side) in enumerate(proof.path):
                    path = list(proof.path)
                    path[k] = (flip(sib, bit), side)
                    assert not verify_proof(leaves[i], MerkleProof(i, tuple(path)), tree.root)
            for k, (sib, side) in enumerate(proof.path):
                path = list(proof.path)
                path[k] = (sib, "left" if side == "right" else "right")
                assert not verify_proof(leaves[i], MerkleProof(i, tuple(path)), tree.root)

    def test_out_of_range(self):
        tree = build_tree(leaves_for(4, 0))
        with pytest.raises(IndexError):
            prove(tree, 4)
        with pytest.raises(IndexError):
            prove(tree, -1)

    def test_large_tree_random_leaf_change(self):
        leaves = leaves_for(1000, 9)
        root = build_tree(leaves).root
        rng = random.Random(1)
        for _ in range(20):
            changed = list(leaves)
            i = rng.randrange(1000)
            changed[i] = flip(changed[i], rng.randrange(256))
            assert build_tree(changed).root != root


class TestFiles:
    def test_leaf_file_content_addressed(self, tmp_path):
        leaves = leaves_for(10, 4)
        path = anchor.write_leaf_file(leaves, tmp_path)
        assert path.name == hashlib.sha256(path.read_bytes()).hexdigest()
        assert anchor.read_leaf_file(path, check_address=True) == leaves

    def test_tampered_leaf_file(self, tmp_path):
        path = anchor.write_leaf_file(leaves_for(3, 4), tmp_path)
        path.write_text(path.read_text().replace("a", "b", 1))
        with pytest.raises(ValueError):
            anchor.read_leaf_file(path, check_address=True)

    def test_proof_round_trip(self, tmp_path):
        tree = build_tree(leaves_for(9, 5))
        proof = prove(tree, 8)
        anchor.save_proof(proof, tmp_path / "p.json")
        assert anchor.load_proof(tmp_path / "p.json") == proof


class TestOnChain:
    def test_anchor_and_verify_fleet(self, ledger, owner, contract):
        fleet = leaves_for(1000, 11)
        tree = build_tree(fleet)
        head = ledger.block_number
        receipt = anchor.anchor_root(ledger, owner, contract, tree.root)
        assert receipt.ok and ledger.block_number - head == 1
        assert get_versioned(ledger, contract, anchor.ANCHOR_ID).digest == tree.root
        for i in range(0, 1000, 37):
            proof = prove(tree, i)
            assert anchor.verify_device(ledger, contract, fleet[i], proof)
            assert not anchor.verify_device(ledger, contract, flip(fleet[i], 3), proof)
        assert ledger.block_number - head == 1

    def test_fold_matches_root(self):
        leaves = leaves_for(6, 6)
        tree = build_tree(leaves)
        assert all(fold(leaves[i], prove(tree, i)) == tree.root for i in range(6))
