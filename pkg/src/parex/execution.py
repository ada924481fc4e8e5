"""Execution-node behavior: deterministic engine, aggregation, recovery.

Every node of a group executes the same block in sequence-number order
against the same versioned state, so honest nodes produce byte-identical
result digests.  The group leader collects signatures, keeps the largest
set that agrees, and emits a result block once the decision threshold is
met.  Crashed leaders are ridden out by rank-order failover; a node that
spots a sequence gap pulls the missing blocks before touching anything
newer.

The contract engine is intentionally small: payments move 8-byte balances,
and every other transaction rewrites each touched object with a gene-mix
digest.  That reproduces the cost profile of the expensive breeding
operation without dragging in a real VM.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from . import crypto
from .crypto import KeyPair, MultiSignature, Signature, hash_bytes
from .errors import CertificateError, DisputeError, SequenceGapError
from .ordering import SIMPLE, ConsensusModel, Transaction, TransactionBlock, cc_message

StateUpdate = tuple[str, int, bytes]  # (object id, new version, new value)


def mix_genes(matron_genes: bytes, sire_genes: bytes, block_number: int) -> bytes:
    """Deterministic stand-in for the expensive gene-mixing operation."""
    return hash_bytes(matron_genes + sire_genes + block_number.to_bytes(8, "big"))


def _pad32(data: bytes) -> bytes:
    if len(data) >= 32:
        return data[:32]
    return data + bytes(32 - len(data))


@dataclass(frozen=True, slots=True)
class ResultBlock:
    group_index: int
    sequence_number: int
    updates: tuple[StateUpdate, ...]
    digest: bytes
    multisig: Optional[MultiSignature] = None


def result_digest(group_index: int, sequence_number: int, updates: Sequence[StateUpdate]) -> bytes:
    h = b"".join(
        obj.encode() + b"\0" + version.to_bytes(8, "big") + value for obj, version, value in updates
    )
    return hash_bytes(
        b"res" + group_index.to_bytes(4, "big") + sequence_number.to_bytes(8, "big") + h
    )


def result_message(group_index: int, sequence_number: int, digest: bytes) -> bytes:
    return b"rb|" + group_index.to_bytes(4, "big") + sequence_number.to_bytes(8, "big") + digest


def corrupt_digest(digest: bytes) -> bytes:
    # Shared across byzantine nodes so colluding liars present one front.
    return hash_bytes(b"wrong" + digest)


@dataclass(slots=True)
class ExecNodeState:
    keypair: KeyPair
    group_index: int
    rank: int
    next_sn: int = 0
    state_cache: dict = field(default_factory=dict)  # object id -> (version, value)
    fault_mode: str = "honest"

    @property
    def public_key(self) -> bytes:
        return self.keypair.public_key


@dataclass(frozen=True, slots=True)
class SignedResult:
    signer: bytes
    rank: int
    digest: bytes
    signature: Signature


class ExecutionView:
    """What a node needs besides its own state: storage reads and CC keys."""

    def __init__(
        self,
        read_object: Callable[[str], tuple[int, bytes]],
        consensus_pks: Sequence[bytes],
        certificate_threshold: int,
        backend=None,
    ) -> None:
        self.read_object = read_object
        self.consensus_pks = list(consensus_pks)
        self.certificate_threshold = certificate_threshold
        self.backend = backend


def apply_transaction(
    tx: Transaction,
    get: Callable[[str], tuple[int, bytes]],
) -> list[StateUpdate]:
    """State transition of one transaction given a (version, value) reader."""
    if tx.kind == SIMPLE:
        src_obj, dst_obj = f"bal:{tx.sender}", f"bal:{tx.receiver}"
        sv, sval = get(src_obj)
        dv, dval = get(dst_obj)
        src = int.from_bytes(sval, "big") - tx.amount
        dst = int.from_bytes(dval, "big") + tx.amount
        return [
            (src_obj, sv + 1, src.to_bytes(8, "big")),
            (dst_obj, dv + 1, dst.to_bytes(8, "big")),
        ]
    updates = []
    for obj in tx.touched:
        version, value = get(obj)
        updates.append((obj, version + 1, mix_genes(_pad32(value), _pad32(tx.payload), tx.tx_id)))
    return updates


def compute_block_result(
    tb: TransactionBlock,
    read_object: Callable[[str], tuple[int, bytes]],
) -> tuple[tuple[StateUpdate, ...], bytes]:
    """Execute a block's transactions in order; pure given the reader."""
    local: dict[str, tuple[int, bytes]] = {}

    def get(obj: str) -> tuple[int, bytes]:
        if obj in local:
            return local[obj]
        return read_object(obj)

    updates: dict[str, StateUpdate] = {}
    for tx in tb.transactions:
        for obj, version, value in apply_transaction(tx, get):
            local[obj] = (version, value)
            updates[obj] = (obj, version, value)
    ordered = tuple(updates[obj] for obj in sorted(updates))
    return ordered, result_digest(tb.group_index, tb.sequence_number, ordered)


def execute_block(
    node: ExecNodeState,
    tb: TransactionBlock,
    view: ExecutionView,
) -> Optional[SignedResult]:
    """Run one block on one node, honoring its fault mode.

    Honest nodes apply the block to their cache and sign the result digest;
    crashed nodes output nothing; byzantine nodes sign a corrupted digest.
    """
    if node.fault_mode == "crashed":
        return None
    if tb.commit_certificate is None or not crypto.verify_aggregate(
        view.consensus_pks,
        tb.commit_certificate,
        cc_message(tb.group_index, tb.sequence_number, tb.digest),
        view.backend,
    ):
        raise CertificateError(
            f"block ({tb.group_index}, {tb.sequence_number}) has an invalid certificate"
        )
    if tb.commit_certificate.signer_count() < view.certificate_threshold:
        raise CertificateError("commit certificate below the 2f+1 threshold")
    if tb.sequence_number < node.next_sn:
        return None  # already executed; duplicate delivery
    if tb.sequence_number > node.next_sn:
        raise SequenceGapError(node.next_sn, tb.sequence_number)

    def get(obj: str) -> tuple[int, bytes]:
        if obj in node.state_cache:
            return node.state_cache[obj]
        return view.read_object(obj)

    updates, digest = compute_block_result(tb, get)
    for obj, version, value in updates:
        node.state_cache[obj] = (version, value)
    node.next_sn += 1

    signed = digest if node.fault_mode == "honest" else corrupt_digest(digest)
    sig = crypto.sign(
        node.keypair,
        result_message(tb.group_index, tb.sequence_number, signed),
        view.backend,
    )
    return SignedResult(node.public_key, node.rank, signed, sig)


def leader_aggregate(
    group_index: int,
    sequence_number: int,
    own_updates: Sequence[StateUpdate],
    own_digest: bytes,
    results: Sequence[SignedResult],
    group_pks: Sequence[bytes],
    threshold: int,
    backend=None,
) -> ResultBlock:
    """Combine matching-digest signatures into a result block.

    The acting leader contributes its own execution output; a dispute is
    surfaced (never resolved here) when no digest reaches the threshold.
    """
    by_digest: dict[bytes, list[SignedResult]] = {}
    seen: set[bytes] = set()
    for res in results:
        if res.signer in seen:
            continue
        seen.add(res.signer)
        by_digest.setdefault(res.digest, []).append(res)

    best = max(by_digest.values(), key=len, default=[])
    if len(best) < threshold:
        raise DisputeError(
            f"no digest reached threshold {threshold} for "
            f"({group_index}, {sequence_number}); sets: "
            + ", ".join(str(len(v)) for v in by_digest.values())
        )
    winning = best[0].digest
    if winning != own_digest:
        raise DisputeError("aggregating leader disagrees with the majority digest")
    msig = crypto.aggregate([r.signature for r in best], group_pks, backend)
    return ResultBlock(group_index, sequence_number, tuple(own_updates), winning, msig)


def fill_gap(
    node: ExecNodeState,
    observed_sn: int,
    view: ExecutionView,
    fetch_from_leader: Callable[[int], Optional[TransactionBlock]],
    fetch_from_consensus: Callable[[int], Optional[TransactionBlock]],
) -> list[TransactionBlock]:
    """Recover and execute the blocks between next-expected and observed_sn.

    The acting leader is asked first; a silent leader falls back to the
    consensus nodes, which always retain every certified block.
    """
    recovered = []
    while node.next_sn < observed_sn:
        sn = node.next_sn
        block = fetch_from_leader(sn)
        if block is None:
            block = fetch_from_consensus(sn)
        if block is None:
            raise SequenceGapError(sn, observed_sn)
        execute_block(node, block, view)
        recovered.append(block)
    return recovered
