"""Contract-level embedding: execution management and the breeding game.

Two deterministic contract state machines driven by block height, mirroring
how the paradigm rides an unmodified chain: an execution-manager contract
holding registered nodes, groups, task queues and a round-robin group
cursor, and a breeding contract whose expensive gene mixing is done
off-chain by a designated group.  The lock call pins a matron to a group
and records the block height; the unlock call accepts the child only after
13 blocks have passed and a qualifying group multisignature vouches for it.

``equivalence_check`` pits this lock/execute/unlock pipeline against a
plain sequential contract that mixes the genes inline, and compares the
resulting kitten gene multisets.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from . import beacon, crypto
from .beacon import BeaconTranscript
from .crypto import KeyPair, MockBackend, MultiSignature, hash_bytes
from .errors import ParameterError, RegistrationError
from .execution import mix_genes

CONFIRMATION_DEPTH = 13  # unlock requires current_block - lock_block >= 13


@dataclass(slots=True)
class Kitty:
    genes: bytes
    siring_with: Optional[int] = None  # pregnant iff set
    due_at_block: Optional[int] = None


@dataclass(frozen=True, slots=True)
class LockRecord:
    matron_id: int
    group_id: int
    block_num: int


@dataclass
class KittiesState:
    kitties: list[Kitty] = field(default_factory=list)
    locks: list[LockRecord] = field(default_factory=list)

    def lock_for(self, matron_id: int) -> Optional[LockRecord]:
        for rec in self.locks:
            if rec.matron_id == matron_id:
                return rec
        return None

    def gene_multiset(self) -> dict[bytes, int]:
        out: dict[bytes, int] = {}
        for k in self.kitties:
            out[k.genes] = out.get(k.genes, 0) + 1
        return out

    def clone(self) -> "KittiesState":
        return KittiesState(
            kitties=[replace(k) for k in self.kitties],
            locks=list(self.locks),
        )


@dataclass(frozen=True, slots=True)
class BirthRequest:
    req_id: int
    matron_id: int
    submit_block: int

    @property
    def digest(self) -> bytes:
        return hash_bytes(
            b"birth"
            + self.req_id.to_bytes(8, "big")
            + self.matron_id.to_bytes(8, "big", signed=True)
            + self.submit_block.to_bytes(8, "big")
        )


def unlock_message(child_genes: bytes, request: BirthRequest) -> bytes:
    # The group signs <childGenes, TX>.
    return b"unlock|" + child_genes + request.digest


@dataclass
class ExecutionManagerState:
    m: int
    ens: list[tuple[bytes, int]] = field(default_factory=list)  # (pk, deposit), deposit-ranked
    groups: list[list[bytes]] = field(default_factory=list)
    tasks: list[list[BirthRequest]] = field(default_factory=list)
    sid: int = 0

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ParameterError("need at least one execution group")
        if not self.groups:
            self.groups = [[] for _ in range(self.m)]
        if not self.tasks:
            self.tasks = [[] for _ in range(self.m)]


def em_register(state: ExecutionManagerState, public_key: bytes, deposit: int) -> None:
    """Add a node to the deposit-ranked registry."""
    if deposit <= 0:
        raise ParameterError("deposit must be positive")
    if any(pk == public_key for pk, _ in state.ens):
        raise RegistrationError(f"key {public_key.hex()[:16]} already registered")
    state.ens.append((public_key, deposit))
    state.ens.sort(key=lambda e: (-e[1], e[0]))


def em_shuffle(state: ExecutionManagerState, r: bytes, transcript: BeaconTranscript) -> bool:
    """Rebuild groups from verified randomness; reject a bad transcript."""
    if not beacon.verify_transcript(transcript) or transcript.output != r:
        return False
    buckets: list[list[tuple[bytes, int]]] = [[] for _ in range(state.m)]
    for pk, deposit in state.ens:
        idx = int.from_bytes(hash_bytes(r + pk), "big") % state.m
        buckets[idx].append((pk, deposit))
    state.groups = [
        [pk for pk, _ in sorted(bucket, key=lambda e: (-e[1], e[0]))]
        for bucket in buckets
    ]
    return True


def multisignature_verify(
    state: ExecutionManagerState,
    group_id: int,
    message: bytes,
    msig: MultiSignature,
    threshold: int,
    backend: MockBackend | None = None,
) -> bool:
    group = state.groups[group_id]
    if len(msig.bitmap) != len(group):
        return False
    if msig.signer_count() < threshold:
        return False
    return crypto.verify_aggregate(group, msig, message, backend)


def matron_validity(ks: KittiesState, matron_id: int, current_block: int) -> bool:
    """Exists, is pregnant (siring id set), and its due block has come."""
    if not 0 <= matron_id < len(ks.kitties):
        return False
    matron = ks.kitties[matron_id]
    return (
        matron.siring_with is not None
        and matron.due_at_block is not None
        and matron.due_at_block <= current_block
    )


def give_birth_lock(
    ks: KittiesState,
    ems: ExecutionManagerState,
    request: BirthRequest,
    current_block: int,
) -> str:
    """Lock path: cache when the matron is busy, else pin it to a group."""
    if ks.lock_for(request.matron_id) is not None:
        return "cached"
    if not matron_validity(ks, request.matron_id, current_block):
        return "rejected"
    group_id = ems.sid
    ems.sid = (ems.sid + 1) % ems.m
    ks.locks.append(LockRecord(request.matron_id, group_id, current_block))
    ems.tasks[group_id].append(request)
    return "locked"


def give_birth_unlock(
    ks: KittiesState,
    ems: ExecutionManagerState,
    request: BirthRequest,
    child_genes: bytes,
    msig: MultiSignature,
    current_block: int,
    *,
    threshold: int,
    backend: MockBackend | None = None,
) -> str:
    """Unlock path: confirmation depth and group multisignature gate the birth."""
    rec = ks.lock_for(request.matron_id)
    if rec is None:
        return "ignored"
    if current_block - rec.block_num < CONFIRMATION_DEPTH:
        return "rejected-confirmations"
    if not multisignature_verify(
        ems, rec.group_id, unlock_message(child_genes, request), msig, threshold, backend
    ):
        return "rejected-auth"
    ks.kitties.append(Kitty(genes=child_genes))
    ks.locks.remove(rec)
    if request in ems.tasks[rec.group_id]:
        ems.tasks[rec.group_id].remove(request)
    return "applied"


def child_genes_for(ks: KittiesState, request: BirthRequest) -> bytes:
    matron = ks.kitties[request.matron_id]
    sire = ks.kitties[matron.siring_with]
    return mix_genes(matron.genes, sire.genes, request.submit_block)


@dataclass
class PipelineLog:
    applied: list[int] = field(default_factory=list)
    rejected: list[int] = field(default_factory=list)
    cached_retries: int = 0
    final_block: int = 0


def build_manager(
    m: int,
    group_size: int,
    backend: MockBackend,
    seed: int = 0,
) -> tuple[ExecutionManagerState, dict[bytes, KeyPair]]:
    """Register m * group_size nodes and shuffle them with a fresh beacon."""
    ems = ExecutionManagerState(m=m)
    keys: dict[bytes, KeyPair] = {}
    for i in range(m * group_size):
        kp = crypto.key_gen((seed << 20) + 7_000_000 + i, backend)
        keys[kp.public_key] = kp
        em_register(ems, kp.public_key, deposit=10_000 - i)
    # Deal equal-sized groups in deposit order; the hash-based shuffle is a
    # separate contract call and may leave groups uneven, which a signing
    # quorum cannot tolerate here.
    for bucket in ems.groups:
        bucket.clear()
    for i, (pk, _) in enumerate(ems.ens):
        ems.groups[i % m].append(pk)
    return ems, keys


def run_birth_pipeline(
    ks0: KittiesState,
    requests: Sequence[BirthRequest],
    *,
    m: int = 4,
    group_size: int = 3,
    threshold: Optional[int] = None,
    backend: MockBackend | None = None,
    seed: int = 0,
) -> tuple[KittiesState, PipelineLog]:
    """Drive the lock/execute/unlock pipeline over a block clock.

    Cached requests retry automatically at the next block.  A lock's group
    signs the child off-chain immediately; the unlock lands on the first
    block at least CONFIRMATION_DEPTH past the lock.
    """
    backend = backend or MockBackend()
    ks = ks0.clone()
    ems, keys = build_manager(m, group_size, backend, seed)
    threshold = threshold if threshold is not None else (group_size // 2 + 1)
    log = PipelineLog()

    by_block: dict[int, list[BirthRequest]] = {}
    for req in requests:
        by_block.setdefault(req.submit_block, []).append(req)
    cached: deque[BirthRequest] = deque()
    ready: list[tuple[int, BirthRequest, bytes, MultiSignature, int]] = []

    block = 0
    horizon = max((r.submit_block for r in requests), default=0) + 1
    while block <= horizon or ks.locks or cached or ready:
        # Unlocks whose confirmation depth has matured.
        for item in sorted(ready, key=lambda it: it[4]):
            due_block, req, child, msig, _ = item[0], item[1], item[2], item[3], item[4]
            if block - due_block >= CONFIRMATION_DEPTH:
                status = give_birth_unlock(
                    ks, ems, req, child, msig, block, threshold=threshold, backend=backend
                )
                if status != "applied":
                    raise ParameterError(f"pipeline unlock failed: {status}")
                log.applied.append(req.req_id)
                ready.remove(item)
        # Cached retries go before fresh submissions.
        for req in list(cached):
            cached.remove(req)
            self_status = _lock_and_schedule(ks, ems, req, block, keys, threshold, backend, ready)
            if self_status == "cached":
                cached.append(req)
                log.cached_retries += 1
            elif self_status == "rejected":
                log.rejected.append(req.req_id)
        for req in by_block.get(block, []):
            status = _lock_and_schedule(ks, ems, req, block, keys, threshold, backend, ready)
            if status == "cached":
                cached.append(req)
            elif status == "rejected":
                log.rejected.append(req.req_id)
        block += 1
        if block > horizon + (len(requests) + 2) * (CONFIRMATION_DEPTH + 2):
            raise ParameterError("pipeline failed to quiesce")
    log.final_block = block
    return ks, log


def _lock_and_schedule(
    ks: KittiesState,
    ems: ExecutionManagerState,
    req: BirthRequest,
    block: int,
    keys: dict[bytes, KeyPair],
    threshold: int,
    backend: MockBackend,
    ready: list,
) -> str:
    status = give_birth_lock(ks, ems, req, block)
    if status != "locked":
        return status
    rec = ks.lock_for(req.matron_id)
    child = child_genes_for(ks, req)
    group = ems.groups[rec.group_id]
    sigs = [
        crypto.sign(keys[pk], unlock_message(child, req), backend)
        for pk in group[:threshold]
    ]
    msig = crypto.aggregate(sigs, group, backend)
    ready.append((rec.block_num, req, child, msig, req.req_id))
    return status


def run_birth_sequential(
    ks0: KittiesState, requests: Sequence[BirthRequest]
) -> tuple[KittiesState, list[int]]:
    """Monolithic oracle: validity check plus inline gene mixing, in order."""
    ks = ks0.clone()
    rejected = []
    for req in requests:
        if not matron_validity(ks, req.matron_id, req.submit_block):
            rejected.append(req.req_id)
            continue
        ks.kitties.append(Kitty(genes=child_genes_for(ks, req)))
    return ks, rejected


def equivalence_check(
    ks0: KittiesState,
    requests: Sequence[BirthRequest],
    *,
    m: int = 4,
    group_size: int = 3,
    seed: int = 0,
) -> bool:
    """Same kitten gene multiset from the pipeline and the sequential oracle."""
    piped, log = run_birth_pipeline(ks0, requests, m=m, group_size=group_size, seed=seed)
    sequential, rejected = run_birth_sequential(ks0, requests)
    if sorted(log.rejected) != sorted(rejected):
        return False
    return piped.gene_multiset() == sequential.gene_multiset()


def random_breedable_state(n_kitties: int, seed: int) -> KittiesState:
    """Kitties that are all pregnant and due, so validity never flaps."""
    rng = random.Random(seed)
    ks = KittiesState()
    for i in range(n_kitties):
        ks.kitties.append(
            Kitty(
                genes=rng.randbytes(32),
                siring_with=rng.randrange(n_kitties),
                due_at_block=0,
            )
        )
    return ks
