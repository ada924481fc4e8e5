"""Workload generation and trace ingestion.

Generated streams are pure functions of (spec, seed).  Complex transactions
reference contract objects uniformly from a fixed population, so two
in-flight transactions conflict exactly when they drew the same contract.
Trace files use one comma-separated line per transaction:

    tx_id,kind,sender,receiver_or_contract,amount_or_cost_ms
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from . import crypto
from .config import (
    WORKLOAD_ADVERSARIAL_PAIR,
    WORKLOAD_ALL_COMPLEX,
    WORKLOAD_MIXED,
    WORKLOAD_TRACE,
    WorkloadConfig,
)
from .crypto import KeyPair, MockBackend
from .errors import ConfigError, TraceFormatError
from .ordering import COMPLEX, SIMPLE, Transaction, signed_transaction
from .simnet import ms_to_us

INITIAL_BALANCE = 10**9


@dataclass
class WorkloadBundle:
    accounts: list[tuple[str, KeyPair, int]]  # (name, keys, initial balance)
    contracts: list[str]
    transactions: list[Transaction]


def _account_keys(backend: MockBackend, seed: int, count: int) -> list[tuple[str, KeyPair, int]]:
    out = []
    for i in range(count):
        raw = crypto.hash_bytes(b"acct" + seed.to_bytes(8, "big", signed=True) + i.to_bytes(4, "big"))
        kp = crypto.key_gen(int.from_bytes(raw[:8], "big"), backend)
        out.append((f"acct{i}", kp, INITIAL_BALANCE))
    return out


def generate_workload(
    spec: WorkloadConfig,
    seed: int,
    exec_cost_ms: float,
    backend: MockBackend,
) -> WorkloadBundle:
    """Deterministic transaction stream for one experiment run."""
    spec.validate()
    if spec.kind == WORKLOAD_TRACE:
        return bundle_from_trace(spec.trace_path, backend, seed)
    if spec.kind == WORKLOAD_ADVERSARIAL_PAIR:
        return _adversarial_pair(backend, seed, exec_cost_ms)

    rng = random.Random(seed)
    accounts = _account_keys(backend, seed, spec.account_population)
    by_name = {name: kp for name, kp, _ in accounts}
    names = [name for name, _, _ in accounts]
    contracts = [f"contract{i}" for i in range(spec.contract_population)]

    if spec.kind == WORKLOAD_ALL_COMPLEX:
        kinds = [COMPLEX] * spec.total
    elif spec.kind == WORKLOAD_MIXED:
        n_simple = round(spec.total * spec.simple_ratio)
        kinds = [SIMPLE] * n_simple + [COMPLEX] * (spec.total - n_simple)
        rng.shuffle(kinds)
    else:
        raise ConfigError(f"unhandled workload kind {spec.kind!r}")

    cost_us = ms_to_us(exec_cost_ms)
    txs = []
    for tx_id, kind in enumerate(kinds):
        if kind == SIMPLE:
            sender = names[rng.randrange(len(names))]
            receiver = names[rng.randrange(len(names))]
            while receiver == sender:
                receiver = names[rng.randrange(len(names))]
            txs.append(
                signed_transaction(
                    by_name[sender],
                    backend,
                    tx_id=tx_id,
                    kind=SIMPLE,
                    sender=sender,
                    receiver=receiver,
                    amount=rng.randrange(1, 100),
                )
            )
        else:
            sender = names[rng.randrange(len(names))]
            contract = contracts[rng.randrange(len(contracts))]
            txs.append(
                signed_transaction(
                    by_name[sender],
                    backend,
                    tx_id=tx_id,
                    kind=COMPLEX,
                    sender=sender,
                    contract_id=contract,
                    payload=rng.randbytes(32),
                    touched=(contract,),
                    exec_cost_us=cost_us,
                )
            )
    return WorkloadBundle(accounts=accounts, contracts=contracts, transactions=txs)


def _adversarial_pair(backend: MockBackend, seed: int, exec_cost_ms: float) -> WorkloadBundle:
    """Two transactions locking the same two objects in opposite orders."""
    accounts = _account_keys(backend, seed, 2)
    (alice, alice_kp, _), (bob, bob_kp, _) = accounts
    contracts = ["contract0", "contract1"]
    cost_us = ms_to_us(exec_cost_ms)
    rng = random.Random(seed)
    order = [0, 1]
    rng.shuffle(order)  # which transaction the consensus side meets first
    tx_a = signed_transaction(
        alice_kp,
        backend,
        tx_id=order[0],
        kind=COMPLEX,
        sender=alice,
        contract_id="contract0",
        payload=b"A" * 32,
        touched=("contract0", "contract1"),
        exec_cost_us=cost_us,
    )
    tx_b = signed_transaction(
        bob_kp,
        backend,
        tx_id=order[1],
        kind=COMPLEX,
        sender=bob,
        contract_id="contract1",
        payload=b"B" * 32,
        touched=("contract1", "contract0"),
        exec_cost_us=cost_us,
    )
    txs = sorted((tx_a, tx_b), key=lambda t: t.tx_id)
    return WorkloadBundle(accounts=accounts, contracts=contracts, transactions=txs)


def ingest_trace(path: str | Path) -> list[tuple[int, str, str, str, float]]:
    """Parse a trace file; malformed lines abort with their line number."""
    rows = []
    text = Path(path).read_text()
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise TraceFormatError(line_no, f"expected 5 fields, got {len(parts)}")
        tx_id_s, kind, sender, target, amount_s = (p.strip() for p in parts)
        if kind not in (SIMPLE, COMPLEX):
            raise TraceFormatError(line_no, f"unknown kind {kind!r}")
        try:
            tx_id = int(tx_id_s)
        except ValueError:
            raise TraceFormatError(line_no, f"bad tx id {tx_id_s!r}") from None
        try:
            amount = float(amount_s)
        except ValueError:
            raise TraceFormatError(line_no, f"bad amount/cost {amount_s!r}") from None
        if not sender or not target:
            raise TraceFormatError(line_no, "empty sender or target")
        rows.append((tx_id, kind, sender, target, amount))
    return rows


def bundle_from_trace(path: str | Path, backend: MockBackend, seed: int) -> WorkloadBundle:
    """Materialize a trace into signed transactions with generated keys."""
    rows = ingest_trace(path)
    names = sorted({sender for _, _, sender, _, _ in rows})
    receivers = sorted(
        {target for _, kind, _, target, _ in rows if kind == SIMPLE}
    )
    all_names = sorted(set(names) | set(receivers))
    keyed = {}
    accounts = []
    for i, name in enumerate(all_names):
        raw = crypto.hash_bytes(b"trace" + seed.to_bytes(8, "big", signed=True) + i.to_bytes(4, "big"))
        kp = crypto.key_gen(int.from_bytes(raw[:8], "big"), backend)
        keyed[name] = kp
        accounts.append((name, kp, INITIAL_BALANCE))
    contracts = sorted({target for _, kind, _, target, _ in rows if kind == COMPLEX})
    txs = []
    for tx_id, kind, sender, target, amount in rows:
        if kind == SIMPLE:
            txs.append(
                signed_transaction(
                    keyed[sender],
                    backend,
                    tx_id=tx_id,
                    kind=SIMPLE,
                    sender=sender,
                    receiver=target,
                    amount=max(1, round(amount)),
                )
            )
        else:
            txs.append(
                signed_transaction(
                    keyed[sender],
                    backend,
                    tx_id=tx_id,
                    kind=COMPLEX,
                    sender=sender,
                    contract_id=target,
                    payload=crypto.hash_bytes(target.encode() + tx_id.to_bytes(8, "big")),
                    touched=(target,),
                    exec_cost_us=ms_to_us(amount),
                )
            )
    return WorkloadBundle(accounts=accounts, contracts=contracts, transactions=txs)
