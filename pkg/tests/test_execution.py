"""Execution nodes: deterministic engine, aggregation, failover, gaps."""

import hashlib
import random

import pytest

from parex import crypto
from parex.crypto import MockBackend
from parex.errors import CertificateError, DisputeError, SequenceGapError
from parex.execution import (
    ExecNodeState,
    ExecutionView,
    compute_block_result,
    execute_block,
    fill_gap,
    leader_aggregate,
    mix_genes,
    result_message,
)
from parex.ordering import COMPLEX, SIMPLE, ConsensusModel, Transaction, TransactionBlock, block_digest, cc_message


def _cc(backend, keys, tb_group, tb_sn, digest, signer_count=3):
    msg = cc_message(tb_group, tb_sn, digest)
    sigs = [crypto.sign(kp, msg, backend) for kp in keys[:signer_count]]
    return crypto.aggregate(sigs, [kp.public_key for kp in keys], backend)


def _block(backend, cn_keys, txs, group=0, sn=0):
    digest = block_digest(group, sn, txs)
    cert = _cc(backend, cn_keys, group, sn, digest)
    return TransactionBlock(group, sn, tuple(txs), digest, cert)


def _world(backend=None, group_size=3):
    backend = backend or MockBackend()
    cn_keys = [backend.key_gen(100 + i) for i in range(4)]
    en_keys = [backend.key_gen(200 + i) for i in range(group_size)]
    store = {
        "c0": (1, b"\x01" * 32),
        "c1": (1, b"\x02" * 32),
        "bal:alice": (1, (100).to_bytes(8, "big")),
        "bal:bob": (1, (50).to_bytes(8, "big")),
    }
    view = ExecutionView(
        read_object=lambda obj: store[obj],
        consensus_pks=[kp.public_key for kp in cn_keys],
        certificate_threshold=3,
        backend=backend,
    )
    nodes = [ExecNodeState(kp, 0, rank) for rank, kp in enumerate(en_keys)]
    return backend, cn_keys, en_keys, nodes, view, store


def _payment_tx(tx_id=1):
    return Transaction(tx_id=tx_id, kind=SIMPLE, sender="alice", receiver="bob", amount=30)


def _contract_tx(tx_id=2, touched=("c0",), payload=b"\x07" * 32, cost=10_000):
    return Transaction(
        tx_id=tx_id,
        kind=COMPLEX,
        sender="alice",
        contract_id=touched[0],
        payload=payload,
        touched=tuple(touched),
        exec_cost_us=cost,
    )


# -- mix_genes -------------------------------------------------------------------


def test_mix_genes_deterministic():
    a, b = b"\x01" * 32, b"\x02" * 32
    assert mix_genes(a, b, 5) == mix_genes(a, b, 5)


def test_mix_genes_reference_vector():
    # All-zero parents at block 0: SHA-256 over 72 zero bytes, computed
    # independently here.
    expected = hashlib.sha256(bytes(72)).digest()
    assert mix_genes(bytes(32), bytes(32), 0) == expected


def test_mix_genes_parent_order_matters():
    rng = random.Random(0)
    differing = 0
    for _ in range(100):
        a, b = rng.randbytes(32), rng.randbytes(32)
        if a != b and mix_genes(a, b, 1) != mix_genes(b, a, 1):
            differing += 1
    assert differing == 100


# -- execute_block ----------------------------------------------------------------


def test_payment_block_updates_balance_pair():
    backend, cn_keys, _, nodes, view, _ = _world()
    tb = _block(backend, cn_keys, [_payment_tx()])
    result = execute_block(nodes[0], tb, view)
    assert result is not None
    assert nodes[0].state_cache["bal:alice"] == (2, (70).to_bytes(8, "big"))
    assert nodes[0].state_cache["bal:bob"] == (2, (80).to_bytes(8, "big"))
    assert nodes[0].next_sn == 1


def test_two_honest_nodes_identical_digests():
    backend, cn_keys, _, nodes, view, _ = _world()
    tb = _block(backend, cn_keys, [_contract_tx()])
    r0 = execute_block(nodes[0], tb, view)
    r1 = execute_block(nodes[1], tb, view)
    assert r0.digest == r1.digest
    assert r0.signature != r1.signature  # distinct keys, same content


def test_crashed_node_outputs_nothing():
    backend, cn_keys, _, nodes, view, _ = _world()
    nodes[0].fault_mode = "crashed"
    tb = _block(backend, cn_keys, [_contract_tx()])
    assert execute_block(nodes[0], tb, view) is None


def test_byzantine_node_signs_corrupted_digest():
    backend, cn_keys, _, nodes, view, _ = _world()
    nodes[2].fault_mode = "byzantine"
    tb = _block(backend, cn_keys, [_contract_tx()])
    honest = execute_block(nodes[0], tb, view)
    lying = execute_block(nodes[2], tb, view)
    assert lying.digest != honest.digest
    # the byzantine signature is valid over its wrong digest
    assert crypto.verify(
        nodes[2].public_key, result_message(0, 0, lying.digest), lying.signature, backend
    )


def test_bad_certificate_rejected():
    backend, cn_keys, _, nodes, view, _ = _world()
    tb = _block(backend, cn_keys, [_contract_tx()])
    forged = TransactionBlock(
        tb.group_index, tb.sequence_number, tb.transactions, tb.digest, None
    )
    with pytest.raises(CertificateError):
        execute_block(nodes[0], forged, view)


def test_under_threshold_certificate_rejected():
    backend, cn_keys, _, nodes, view, _ = _world()
    txs = [_contract_tx()]
    digest = block_digest(0, 0, txs)
    weak = _cc(backend, cn_keys, 0, 0, digest, signer_count=2)
    tb = TransactionBlock(0, 0, tuple(txs), digest, weak)
    with pytest.raises(CertificateError):
        execute_block(nodes[0], tb, view)


def test_sequence_gap_raises():
    backend, cn_keys, _, nodes, view, _ = _world()
    tb = _block(backend, cn_keys, [_contract_tx()], sn=3)
    with pytest.raises(SequenceGapError):
        execute_block(nodes[0], tb, view)


def test_duplicate_block_is_noop():
    backend, cn_keys, _, nodes, view, _ = _world()
    tb = _block(backend, cn_keys, [_contract_tx()])
    assert execute_block(nodes[0], tb, view) is not None
    assert execute_block(nodes[0], tb, view) is None
    assert nodes[0].next_sn == 1


def test_block_order_affects_state_chain():
    backend, cn_keys, _, nodes, view, _ = _world()
    tx_a = _contract_tx(tx_id=1, payload=b"\x0a" * 32)
    tx_b = _contract_tx(tx_id=2, payload=b"\x0b" * 32)
    u_ab, _ = compute_block_result(_block(backend, cn_keys, [tx_a, tx_b]), view.read_object)
    u_ba, _ = compute_block_result(_block(backend, cn_keys, [tx_b, tx_a]), view.read_object)
    assert u_ab != u_ba  # value chaining makes order observable
    assert u_ab[0][1] == 3  # two updates to one object advance two versions


# -- leader aggregation --------------------------------------------------------------


def _signed_results(backend, cn_keys, nodes, view, tb):
    return [execute_block(node, tb, view) for node in nodes]


def test_aggregate_all_three_match():
    backend, cn_keys, _, nodes, view, _ = _world()
    tb = _block(backend, cn_keys, [_contract_tx()])
    results = _signed_results(backend, cn_keys, nodes, view, tb)
    updates, digest = compute_block_result(tb, view.read_object)
    rb = leader_aggregate(0, 0, updates, digest, results, [n.public_key for n in nodes], 2, backend)
    assert rb.multisig.bitmap == (True, True, True)
    assert rb.digest == digest


def test_aggregate_two_of_three_bitmap_marks_matching_pair():
    backend, cn_keys, _, nodes, view, _ = _world()
    nodes[1].fault_mode = "byzantine"
    tb = _block(backend, cn_keys, [_contract_tx()])
    results = _signed_results(backend, cn_keys, nodes, view, tb)
    updates, digest = compute_block_result(tb, view.read_object)
    rb = leader_aggregate(0, 0, updates, digest, results, [n.public_key for n in nodes], 2, backend)
    assert rb.multisig.bitmap == (True, False, True)
    assert crypto.verify_aggregate(
        [n.public_key for n in nodes], rb.multisig, result_message(0, 0, digest), backend
    )


def test_aggregate_exhaustive_single_fault_placements():
    for byz_rank in range(3):
        backend, cn_keys, _, nodes, view, _ = _world()
        nodes[byz_rank].fault_mode = "byzantine"
        tb = _block(backend, cn_keys, [_contract_tx()])
        results = _signed_results(backend, cn_keys, nodes, view, tb)
        updates, digest = compute_block_result(tb, view.read_object)
        honest_leader = next(r for r in range(3) if r != byz_rank)
        rb = leader_aggregate(
            0, 0, updates, digest, results, [n.public_key for n in nodes], 2, backend
        )
        assert rb.digest == digest
        assert rb.multisig.signer_count() == 2


def test_aggregate_all_distinct_digests_is_dispute():
    backend, cn_keys, _, nodes, view, _ = _world()
    tb = _block(backend, cn_keys, [_contract_tx()])
    updates, digest = compute_block_result(tb, view.read_object)
    results = []
    for rank, node in enumerate(nodes):
        fake = crypto.hash_bytes(bytes([rank]) + digest)
        sig = crypto.sign(node.keypair, result_message(0, 0, fake), backend)
        from parex.execution import SignedResult

        results.append(SignedResult(node.public_key, rank, fake, sig))
    with pytest.raises(DisputeError):
        leader_aggregate(0, 0, updates, digest, results, [n.public_key for n in nodes], 2, backend)


# -- gap filling -----------------------------------------------------------------------


def test_fill_gap_recovers_missing_blocks():
    backend, cn_keys, _, nodes, view, _ = _world()
    tx1, tx2, tx3 = (_contract_tx(tx_id=i, payload=bytes([i]) * 32) for i in (1, 2, 3))
    blocks = {
        0: _block(backend, cn_keys, [tx1], sn=0),
        1: _block(backend, cn_keys, [tx2], sn=1),
        2: _block(backend, cn_keys, [tx3], sn=2),
    }
    # Straight-through node as the end-state oracle.
    oracle = nodes[1]
    for sn in (0, 1, 2):
        execute_block(oracle, blocks[sn], view)

    node = nodes[0]
    execute_block(node, blocks[0], view)
    # Block 1 is lost; node observes sn=2 and pulls from the leader.
    recovered = fill_gap(node, 2, view, lambda sn: blocks.get(sn), lambda sn: None)
    assert [b.sequence_number for b in recovered] == [1]
    execute_block(node, blocks[2], view)
    assert node.state_cache == oracle.state_cache


def test_fill_gap_leader_silent_falls_back_to_consensus():
    backend, cn_keys, _, nodes, view, _ = _world()
    tx1, tx2 = (_contract_tx(tx_id=i, payload=bytes([i]) * 32) for i in (1, 2))
    blocks = {0: _block(backend, cn_keys, [tx1], sn=0), 1: _block(backend, cn_keys, [tx2], sn=1)}
    oracle = nodes[1]
    execute_block(oracle, blocks[0], view)
    execute_block(oracle, blocks[1], view)

    node = nodes[0]
    recovered = fill_gap(node, 2, view, lambda sn: None, lambda sn: blocks.get(sn))
    assert [b.sequence_number for b in recovered] == [0, 1]
    assert node.state_cache == oracle.state_cache


def test_fill_gap_noop_when_sequential():
    backend, cn_keys, _, nodes, view, _ = _world()
    node = nodes[0]
    assert fill_gap(node, 0, view, lambda sn: None, lambda sn: None) == []


def test_fill_gap_unrecoverable_raises():
    backend, cn_keys, _, nodes, view, _ = _world()
    node = nodes[0]
    with pytest.raises(SequenceGapError):
        fill_gap(node, 1, view, lambda sn: None, lambda sn: None)
