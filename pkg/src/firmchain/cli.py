"""``firmchain`` command-line tool.

Exit codes: 0 success or MATCH, 1 MISMATCH, 2 local I/O or usage error,
3 gateway unreachable or timed out, 4 transaction rejected or reverted.
"""

from __future__ import annotations

import functools
import json
import os
import signal
import sys
import threading
from decimal import Decimal
from pathlib import Path

import click

from . import __version__, anchor, harness
from .contract import (
    AuditRecord,
    TransactionReverted,
    audit_to_jsonl,
    deploy,
    register_versioned,
    store_hash,
    verification_outcome,
    verify_hash_call,
    verify_hash_tx,
    verify_versioned_call,
)
from .fingerprint import DigestFormatError, FirmwareReadError, compute_digest, parse_hex_digest
from .gateway.client import ENV_RPC_URL, GatewayUnreachable, RpcClient, RpcError, default_url
from .ledger.chain import ETHER, Genesis, Ledger, LedgerError, Receipt, load_genesis_file, wei_to_eth
from .ledger.encoding import Address
from .ledger.gas import load_profile
from .ledger.keys import Wallet

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_IO = 2
EXIT_UNREACHABLE = 3
EXIT_REJECTED = 4

ENV_CONTRACT = "FIRMCHAIN_CONTRACT"
ENV_KEY = "FIRMCHAIN_KEY"


class Failure(click.ClickException):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code

    def show(self, file=None) -> None:
        click.echo(f"error: {self.format_message()}", err=True)


class Ctx:
    def __init__(self, rpc_url: str, output: str, timeout: float, wait: float):
        self.rpc_url = rpc_url
        self.output = output
        self.timeout = timeout
        self.wait = wait
        self._client: RpcClient | None = None

    @property
    def client(self) -> RpcClient:
        if self._client is None:
            self._client = RpcClient(self.rpc_url, timeout=self.timeout, receipt_timeout=self.wait)
        return self._client

    def emit(self, record: dict, human: list[str] | str) -> None:
        if self.output == "json":
            click.echo(json.dumps(record, sort_keys=False))
        else:
            for line in [human] if isinstance(human, str) else human:
                click.echo(line)


pass_ctx = click.make_pass_decorator(Ctx)


def _guard(fn):
    """Translate library exceptions into the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Failure:
            raise
        except GatewayUnreachable as exc:
            raise Failure(EXIT_UNREACHABLE, f"gateway unreachable: {exc}") from None
        except TransactionReverted as exc:
            raise Failure(EXIT_REJECTED, f"reverted: {exc.reason} (tx 0x{exc.receipt.tx_hash.hex()})") from None
        except LedgerError as exc:
            raise Failure(EXIT_REJECTED, f"{exc.code}: {exc}") from None
        except RpcError as exc:
            raise Failure(EXIT_UNREACHABLE, f"gateway error {exc}") from None
        except (FirmwareReadError, DigestFormatError, OSError, ValueError) as exc:
            raise Failure(EXIT_IO, str(exc)) from None

    return wrapper


def _digest(path: str):
    if path != "-" and not Path(path).is_file():
        raise Failure(EXIT_IO, f"no such file: {path}")
    return compute_digest(path)


def _wallet(key: str | None) -> Wallet:
    if not key:
        raise Failure(EXIT_IO, f"this command signs a transaction; pass --key or set {ENV_KEY}")
    try:
        return Wallet.load(key)
    except (OSError, ValueError, KeyError) as exc:
        raise Failure(EXIT_IO, f"cannot load key {key}: {exc}") from None


def _contract(value: str | None) -> Address:
    if not value:
        raise Failure(EXIT_IO, f"pass --contract or set {ENV_CONTRACT}")
    try:
        return Address.parse(value)
    except ValueError as exc:
        raise Failure(EXIT_IO, f"bad contract address: {exc}") from None


def _gwei_to_wei(value: Decimal | None) -> int | None:
    return None if value is None else int(value * 10**9)


def fee_text(fee_wei: int) -> str:
    eth = wei_to_eth(fee_wei)
    return f"{float(eth):.4g} ETH ({format(eth, 'f')} ETH, {fee_wei} wei)"


def receipt_record(action: str, r: Receipt, **extra) -> dict:
    return {
        "action": action,
        "tx_hash": "0x" + r.tx_hash.hex(),
        "block_number": r.block_number,
        "status": r.status,
        "gas_used": r.gas_used,
        "gas_price_wei": r.gas_price,
        "fee_wei": r.fee,
        "fee_eth": format(wei_to_eth(r.fee), "f"),
        **extra,
    }


def receipt_lines(r: Receipt) -> list[str]:
    return [
        f"tx:       0x{r.tx_hash.hex()}",
        f"block:    {r.block_number}",
        f"gas used: {r.gas_used}",
        f"fee:      {fee_text(r.fee)}",
    ]


def _ensure_ok(r: Receipt) -> None:
    if not r.ok:
        raise TransactionReverted(r)


key_option = click.option("--key", envvar=ENV_KEY, help="Key file (JSON written by keygen or node --keys-dir).")
contract_option = click.option("--contract", envvar=ENV_CONTRACT, help="Contract address (0x...).")
gas_price_option = click.option(
    "--gas-price", type=Decimal, default=None, help="Gas price in Gwei (default: the node's hint)."
)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="firmchain")
@click.option("--rpc-url", envvar=ENV_RPC_URL, default=None, help=f"Gateway URL (env {ENV_RPC_URL}).")
@click.option("--output", type=click.Choice(["human", "json"]), default="human", show_default=True)
@click.option("--timeout", type=float, default=5.0, show_default=True, help="Per-request timeout in seconds.")
@click.option("--wait", type=float, default=120.0, show_default=True, help="Seconds to wait for a receipt.")
@click.pass_context
def main(ctx: click.Context, rpc_url, output, timeout, wait) -> None:
    """Firmware integrity attestation against a ledger gateway."""
    ctx.obj = Ctx(rpc_url or default_url(), output, timeout, wait)


@main.command("hash")
@click.argument("path")
@pass_ctx
@_guard
def cmd_hash(c: Ctx, path: str) -> None:
    """Print the SHA-256 digest of PATH ('-' reads stdin)."""
    digest = _digest(path)
    c.emit({"action": "hash", "path": path, "digest": digest.hex()}, digest.hex())


@main.command()
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Where to write the key file.")
@click.option("--seed", default=None, help="Derive the key from this text instead of fresh randomness.")
@pass_ctx
@_guard
def keygen(c: Ctx, out: str, seed: str | None) -> None:
    """Create a signing key file."""
    wallet = Wallet(seed.encode() if seed is not None else os.urandom(32))
    if Path(out).exists():
        raise Failure(EXIT_IO, f"{out} already exists")
    wallet.save(out)
    c.emit({"action": "keygen", "path": out, "address": str(wallet.address)}, f"address: {wallet.address}")


@main.command("deploy")
@key_option
@gas_price_option
@pass_ctx
@_guard
def cmd_deploy(c: Ctx, key, gas_price) -> None:
    """Deploy the integrity contract and wait for its receipt."""
    wallet = _wallet(key)
    address, r = deploy(c.client, wallet, _gwei_to_wei(gas_price))
    c.emit(receipt_record("deploy", r, contract=str(address)), [f"contract: {address}", *receipt_lines(r)])


@main.command("register")
@click.argument("path")
@key_option
@contract_option
@gas_price_option
@click.option("--firmware-id", default=None, help="Register a new version under this id instead of the single reference.")
@pass_ctx
@_guard
def cmd_register(c: Ctx, path, key, contract, gas_price, firmware_id) -> None:
    """Hash PATH locally and store the digest on chain."""
    digest = _digest(path)
    wallet = _wallet(key)
    addr = _contract(contract)
    if firmware_id is None:
        r = store_hash(c.client, wallet, addr, digest, _gwei_to_wei(gas_price))
    else:
        r = register_versioned(c.client, wallet, addr, firmware_id, digest, _gwei_to_wei(gas_price))
    _ensure_ok(r)
    rec = receipt_record("register", r, digest=digest.hex(), firmware_id=firmware_id)
    c.emit(rec, [f"registered {digest.hex()}", *receipt_lines(r)])


@main.command("verify")
@click.argument("path")
@contract_option
@key_option
@click.option("--read-only/--on-chain", "read_only", default=True, show_default=True,
              help="Free local call, or a logged transaction that records the outcome.")
@click.option("--firmware-id", default=None, help="Compare with the latest version under this id (read-only).")
@gas_price_option
@pass_ctx
@_guard
def cmd_verify(c: Ctx, path, contract, key, read_only, firmware_id, gas_price) -> None:
    """Check PATH against the on-chain reference. Exit 0 on MATCH, 1 on MISMATCH."""
    digest = _digest(path)
    addr = _contract(contract)
    if firmware_id is not None:
        if not read_only:
            raise Failure(EXIT_IO, "--firmware-id only supports --read-only")
        matched = verify_versioned_call(c.client, addr, firmware_id, digest)
        rec, lines = {"action": "verify", "mode": "read-only"}, []
    elif read_only:
        matched = verify_hash_call(c.client, addr, digest)
        rec, lines = {"action": "verify", "mode": "read-only"}, []
    else:
        r = verify_hash_tx(c.client, _wallet(key), addr, digest, _gwei_to_wei(gas_price))
        _ensure_ok(r)
        matched = bool(verification_outcome(r))
        rec, lines = receipt_record("verify", r, mode="on-chain"), receipt_lines(r)
    verdict = "MATCH" if matched else "MISMATCH"
    rec.update(digest=digest.hex(), verdict=verdict, matched=matched)
    c.emit(rec, [verdict, *lines])
    sys.exit(EXIT_OK if matched else EXIT_MISMATCH)


@main.command("audit")
@contract_option
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write JSON lines here (default stdout).")
@pass_ctx
@_guard
def cmd_audit(c: Ctx, contract, out) -> None:
    """Export one audit record per contract transaction as JSON lines."""
    records = [AuditRecord.from_dict(d) for d in c.client.export_audit(_contract(contract))]
    text = audit_to_jsonl(records)
    if out is None:
        click.echo(text, nl=False)
        return
    Path(out).write_text(text)
    c.emit({"action": "audit", "path": out, "records": len(records)}, f"wrote {len(records)} records to {out}")


@main.command("bench")
@click.option("--scenario", type=click.Choice(harness.SCENARIOS), required=True)
@click.option("--trials", type=click.IntRange(min=0), default=1000, show_default=True,
              help="Trials; for perf, transactions per submitter; for anchor, fleet size.")
@click.option("--submitters", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--mutation", type=click.Choice([*harness.MUTATIONS, "mixed"]), default="bit-flip", show_default=True)
@click.option("--profile", default="sepolia-paper", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the full JSON report here.")
@pass_ctx
@_guard
def cmd_bench(c: Ctx, scenario, trials, submitters, mutation, profile, seed, out) -> None:
    """Run a seeded experiment on a simulated chain and report statistics."""
    prof = load_profile(profile)
    if scenario == "tamper":
        report = harness.run_tamper_scenario(trials, mutation, seed, prof)
    elif scenario == "replay":
        report = harness.run_replay_scenario(trials, seed, prof)
    elif scenario == "spoof":
        report = harness.run_spoof_scenario(trials, seed, prof)
    elif scenario == "perf":
        report = harness.run_perf_bench(submitters, trials, prof, seed)
    else:
        report = harness.run_anchor_scenario(trials, seed, prof)
    if out:
        report.save(out)
    summary = {k: v for k, v in report.to_dict().items() if k != "trial_log"}
    c.emit({"action": "bench", **summary, "report": out}, report.summary_lines())


# --------------------------------------------------------------------- anchor

@main.group("anchor")
def anchor_group() -> None:
    """Merkle anchoring of a whole fleet's digests."""


@anchor_group.command("build")
@click.argument("images", nargs=-1)
@click.option("--digests", type=click.Path(dir_okay=False), default=None, help="Text file with one hex digest per line.")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@pass_ctx
@_guard
def anchor_build(c: Ctx, images, digests, out_dir) -> None:
    """Build a tree from firmware IMAGES and/or a digest list; store the leaf file."""
    leaves = [_digest(p) for p in images]
    if digests:
        leaves += anchor.read_leaf_file(digests)
    if not leaves:
        raise Failure(EXIT_IO, "no leaves given")
    tree = anchor.build_tree(leaves)
    path = anchor.write_leaf_file(leaves, out_dir)
    c.emit(
        {"action": "anchor-build", "leaf_file": str(path), "leaves": len(leaves), "root": tree.root.hex()},
        [f"root:      {tree.root.hex()}", f"leaves:    {len(leaves)}", f"leaf file: {path}"],
    )


@anchor_group.command("prove")
@click.argument("leaf_file", type=click.Path(dir_okay=False))
@click.option("--index", type=int, required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@pass_ctx
@_guard
def anchor_prove(c: Ctx, leaf_file, index, out) -> None:
    """Write the inclusion proof for leaf INDEX."""
    tree = anchor.build_tree(anchor.read_leaf_file(leaf_file, check_address=True))
    try:
        proof = anchor.prove(tree, index)
    except IndexError as exc:
        raise Failure(EXIT_IO, str(exc)) from None
    anchor.save_proof(proof, out)
    c.emit(
        {"action": "anchor-prove", "index": index, "proof": out, "leaf": tree.leaves[index].hex(), "root": tree.root.hex()},
        f"proof for leaf {index} written to {out}",
    )


@anchor_group.command("publish")
@click.argument("leaf_file", type=click.Path(dir_okay=False))
@key_option
@contract_option
@gas_price_option
@pass_ctx
@_guard
def anchor_publish(c: Ctx, leaf_file, key, contract, gas_price) -> None:
    """Anchor the root of LEAF_FILE on chain in a single transaction."""
    tree = anchor.build_tree(anchor.read_leaf_file(leaf_file, check_address=True))
    r = anchor.anchor_root(c.client, _wallet(key), _contract(contract), tree.root, _gwei_to_wei(gas_price))
    _ensure_ok(r)
    c.emit(receipt_record("anchor-publish", r, root=tree.root.hex()), [f"anchored {tree.root.hex()}", *receipt_lines(r)])


@anchor_group.command("verify")
@click.argument("image")
@click.option("--proof", "proof_path", type=click.Path(dir_okay=False), required=True)
@contract_option
@click.option("--root", default=None, help="Check against this root offline instead of the anchored one.")
@pass_ctx
@_guard
def anchor_verify(c: Ctx, image, proof_path, contract, root) -> None:
    """Check IMAGE's inclusion proof. Exit 0 on MATCH, 1 on MISMATCH."""
    leaf = _digest(image)
    proof = anchor.load_proof(proof_path)
    if root is not None:
        matched = anchor.verify_proof(leaf, proof, parse_hex_digest(root))
    else:
        matched = anchor.verify_device(c.client, _contract(contract), leaf, proof)
    verdict = "MATCH" if matched else "MISMATCH"
    c.emit({"action": "anchor-verify", "digest": leaf.hex(), "verdict": verdict, "matched": matched}, verdict)
    sys.exit(EXIT_OK if matched else EXIT_MISMATCH)


# --------------------------------------------------------------------- node

def dev_wallets(seed: int, count: int) -> list[Wallet]:
    return [Wallet(f"firmchain-dev-{seed}-{k}".encode()) for k in range(count)]


def build_node_ledger(
    profile: str = "sepolia-paper",
    block_interval: float | None = None,
    finality_delay: float | None = None,
    instant_mine: bool = False,
    seed: int = 0,
    dev_accounts: int = 3,
    dev_balance_eth: int = 1000,
    genesis_path: str | None = None,
    chain_file: str | None = None,
) -> tuple[Ledger, list[Wallet]]:
    """Create (or reload from ``chain_file``) the ledger a node serves."""
    from .ledger.storage import ChainFile, load_chain

    wallets = dev_wallets(seed, dev_accounts)
    if chain_file and Path(chain_file).exists() and Path(chain_file).stat().st_size:
        return load_chain(chain_file, instant_mine=instant_mine, append=True), wallets

    genesis, prof = Genesis(), None
    if genesis_path:
        genesis, prof = load_genesis_file(genesis_path)
    prof = prof or load_profile(profile)
    overrides = {}
    if block_interval is not None:
        overrides["block_interval_s"] = block_interval
    if finality_delay is not None:
        overrides["finality_delay_s"] = finality_delay
    if overrides:
        prof = prof.with_overrides(**overrides)
    for w in wallets:
        genesis.allocations.setdefault(w.address, dev_balance_eth * ETHER)
    ledger = Ledger(genesis, prof, instant_mine=instant_mine)
    if chain_file:
        ledger.attach_store(ChainFile(chain_file))
    return ledger, wallets


@main.command("node")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8545, show_default=True, help="0 picks a free port.")
@click.option("--profile", default="sepolia-paper", show_default=True, help="Profile name or JSON file.")
@click.option("--block-interval", type=float, default=None, help="Override the profile's block interval (s).")
@click.option("--finality-delay", type=float, default=None, help="Override the profile's finality delay (s).")
@click.option("--instant-mine", is_flag=True, help="Seal every transaction immediately on a simulated clock.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for the dev accounts.")
@click.option("--dev-accounts", type=click.IntRange(min=0), default=3, show_default=True)
@click.option("--keys-dir", type=click.Path(file_okay=False), default=None, help="Write dev key files here.")
@click.option("--chain-file", type=click.Path(dir_okay=False), default=None, help="Persist blocks here; reloaded on start.")
@click.option("--genesis", "genesis_path", type=click.Path(dir_okay=False, exists=True), default=None)
@click.option("--speed", type=float, default=1.0, show_default=True, help="Simulated seconds per wall second (timed mode).")
def cmd_node(host, port, profile, block_interval, finality_delay, instant_mine, seed, dev_accounts, keys_dir,
             chain_file, genesis_path, speed) -> None:
    """Run a local ledger behind the HTTP gateway until interrupted."""
    from .gateway.app import GatewayServer
    from .ledger.ticker import RealTimeTicker

    try:
        ledger, wallets = build_node_ledger(
            profile, block_interval, finality_delay, instant_mine, seed, dev_accounts,
            genesis_path=genesis_path, chain_file=chain_file,
        )
    except (OSError, ValueError, LedgerError) as exc:
        raise Failure(EXIT_IO, str(exc)) from None
    if keys_dir:
        Path(keys_dir).mkdir(parents=True, exist_ok=True)
        for k, w in enumerate(wallets):
            w.save(Path(keys_dir) / f"dev{k}.json")

    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())

    server = GatewayServer(ledger, host, port)
    try:
        server.start()
    except RuntimeError as exc:
        raise Failure(EXIT_UNREACHABLE, str(exc)) from None
    ticker = None if ledger.instant_mine else RealTimeTicker(ledger, speed).start()
    p = ledger.profile
    mode = "instant-mine" if ledger.instant_mine else f"timed x{speed:g}"
    click.echo(f"firmchain node listening on {server.url}")
    click.echo(
        f"profile {p.name}: block interval {p.block_interval_s:g}s, finality delay {p.finality_delay_s:g}s, {mode}"
    )
    for k, w in enumerate(wallets):
        where = f" -> {Path(keys_dir) / f'dev{k}.json'}" if keys_dir else ""
        click.echo(f"dev{k}: {w.address} balance {wei_to_eth(ledger.balance(w.address))} ETH{where}")
    sys.stdout.flush()
    try:
        while not stop.wait(0.2):
            pass
    finally:
        if ticker is not None:
            ticker.stop()
        server.stop()
        if ledger.store is not None:
            ledger.store.close()
        click.echo("node stopped")


if __name__ == "__main__":
    main()
