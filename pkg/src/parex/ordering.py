"""Consensus-node layer: classification, validity, locks, rounds, results.

Consensus nodes never execute complex transactions.  Each round they
confirm simple payments directly, give every lock-free complex transaction
to an execution group under a per-group sequence number, and certify each
emitted block with a multisignature from the consensus keys.  Lock
conflicts never abort a transaction: the loser waits in a per-object FIFO
and is promoted one round after the holder's result arrives, which is what
removes livelocks from the paradigm.

The consensus protocol itself is abstracted as a rate model (a round every
1/rounds_per_second certifying up to tx_per_block transactions per lane),
with real commit certificates signed by simulated consensus keys.
"""

from __future__ import annotations

import enum
from bisect import insort
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import crypto
from .crypto import KeyPair, MultiSignature, Signature, hash_bytes
from .errors import ParameterError
from .storage import CacheDirectory, RouteKind

SIMPLE = "simple"
COMPLEX = "complex"

MAX_TX_PER_BLOCK = 9000  # ~115-byte transactions in a 1 MB payload


def classify(t1_s: float, t2_s: float, k: int, m: int) -> str:
    """Developer rule of thumb: simple iff one consensus round outlasts the
    transaction's amortized execution share, t1 > (k/m) * t2.  Ties are
    complex."""
    if t1_s <= 0:
        raise ParameterError("consensus round time must be positive")
    if t2_s < 0:
        raise ParameterError("execution time must be non-negative")
    if k <= 0 or m <= 0:
        raise ParameterError("batch size and group count must be positive")
    return SIMPLE if t1_s > (k / m) * t2_s else COMPLEX


@dataclass(slots=True)
class Transaction:
    tx_id: int
    kind: str
    sender: str
    receiver: str = ""
    amount: int = 0
    contract_id: str = ""
    payload: bytes = b""
    touched: tuple[str, ...] = ()
    exec_cost_us: int = 0
    signature: Optional[Signature] = None
    submit_us: int = 0
    digest: bytes = b""

    def __post_init__(self) -> None:
        if not self.digest:
            self.digest = hash_bytes(self.canonical_bytes())

    def canonical_bytes(self) -> bytes:
        return b"|".join(
            (
                b"tx",
                str(self.tx_id).encode(),
                self.kind.encode(),
                self.sender.encode(),
                self.receiver.encode(),
                str(self.amount).encode(),
                self.contract_id.encode(),
                self.payload.hex().encode(),
                ",".join(self.touched).encode(),
                str(self.exec_cost_us).encode(),
            )
        )


def signed_transaction(kp: KeyPair, backend=None, **kwargs) -> Transaction:
    """Build a transaction and sign its digest with the sender's key."""
    tx = Transaction(**kwargs)
    tx.signature = crypto.sign(kp, tx.digest, backend)
    return tx


@dataclass(frozen=True, slots=True)
class SimpleBlock:
    round_no: int
    transactions: tuple[Transaction, ...]
    digest: bytes


@dataclass(frozen=True, slots=True)
class TransactionBlock:
    group_index: int
    sequence_number: int
    transactions: tuple[Transaction, ...]
    digest: bytes
    commit_certificate: Optional[MultiSignature]
    created_us: int = 0

    @property
    def exec_cost_us(self) -> int:
        return sum(tx.exec_cost_us for tx in self.transactions)


def block_digest(group_index: int, sequence_number: int, txs: Sequence[Transaction]) -> bytes:
    h = b"".join(tx.digest for tx in txs)
    return hash_bytes(
        b"blk" + group_index.to_bytes(4, "big") + sequence_number.to_bytes(8, "big") + h
    )


def cc_message(group_index: int, sequence_number: int, digest: bytes) -> bytes:
    return b"cc|" + group_index.to_bytes(4, "big") + sequence_number.to_bytes(8, "big") + digest


@dataclass(frozen=True, slots=True)
class ConsensusModel:
    """Rate/latency abstraction of the consensus layer."""

    rounds_per_second: float = 1.0
    tx_per_block: int = 2000
    block_payload_bytes: int = 1_000_000
    nodes: int = 4
    faulty: int = 1

    def __post_init__(self) -> None:
        if self.rounds_per_second <= 0:
            raise ParameterError("rounds_per_second must be positive")
        if not 1 <= self.tx_per_block <= MAX_TX_PER_BLOCK:
            raise ParameterError(f"tx_per_block must be in [1, {MAX_TX_PER_BLOCK}]")
        if self.nodes < 3 * self.faulty + 1:
            raise ParameterError("consensus needs n >= 3f+1 nodes")

    @property
    def round_interval_us(self) -> int:
        return round(1_000_000 / self.rounds_per_second)

    @property
    def certificate_threshold(self) -> int:
        return 2 * self.faulty + 1


class AcquireResult(enum.Enum):
    LOCKED = "locked"
    CACHED = "cached"


@dataclass(slots=True)
class LockEntry:
    holder_tx: int
    group_index: int
    acquired_round: int


class LockTable:
    """Object locks plus per-object FIFO caches of deferred transactions.

    An object has at most one holder.  A transaction either locks all of
    its declared objects atomically or none, queueing behind the first held
    object it meets.  Releasing an object makes its queue head eligible the
    following round.

    Queues are kept in transaction-arrival order (not queue-entry order):
    a multi-object transaction re-queued behind a second object must not
    fall behind younger transactions, or the conflicting-predecessors
    latency bound breaks.
    """

    def __init__(self) -> None:
        self.locks: dict[str, LockEntry] = {}
        self.waiting: dict[str, list[Transaction]] = {}
        self.free_with_waiters: set[str] = set()
        self.cached_events = 0

    def held(self, object_id: str) -> bool:
        return object_id in self.locks

    def acquire(self, tx: Transaction, group_index: int, round_no: int) -> AcquireResult:
        for obj in tx.touched:
            if obj in self.locks:
                queue = self.waiting.setdefault(obj, [])
                insort(queue, tx, key=lambda t: t.tx_id)
                self.cached_events += 1
                return AcquireResult.CACHED
        for obj in tx.touched:
            self.locks[obj] = LockEntry(tx.tx_id, group_index, round_no)
            self.free_with_waiters.discard(obj)
        return AcquireResult.LOCKED

    def release_block(self, txs: Sequence[Transaction]) -> list[str]:
        """Release every lock held by the block's transactions."""
        freed = []
        for tx in txs:
            for obj in tx.touched:
                entry = self.locks.get(obj)
                if entry is not None and entry.holder_tx == tx.tx_id:
                    del self.locks[obj]
                    freed.append(obj)
                    if self.waiting.get(obj):
                        self.free_with_waiters.add(obj)
        return freed

    def promotion_candidates(self) -> list[tuple[int, str]]:
        """Queue heads of free objects, ordered by transaction id."""
        heads = []
        for obj in self.free_with_waiters:
            queue = self.waiting.get(obj)
            if queue:
                heads.append((queue[0].tx_id, obj))
        heads.sort()
        return heads

    def pop_waiting_head(self, object_id: str) -> Optional[Transaction]:
        queue = self.waiting.get(object_id)
        if not queue or object_id in self.locks:
            return None
        tx = queue.pop(0)
        if not queue:
            del self.waiting[object_id]
            self.free_with_waiters.discard(object_id)
        return tx

    def waiter_count(self) -> int:
        return sum(len(q) for q in self.waiting.values())


def acquire_locks(tx: Transaction, lock_table: LockTable, round_no: int, group_index: int = -1) -> AcquireResult:
    """Atomically lock every object a valid transaction touches, or cache it."""
    return lock_table.acquire(tx, group_index, round_no)


@dataclass
class LedgerView:
    """Consensus-node view of balances, object versions, and account keys."""

    balances: dict[str, int] = field(default_factory=dict)
    objects: dict[str, int] = field(default_factory=dict)  # object id -> version
    object_values: dict[str, bytes] = field(default_factory=dict)
    accounts: dict[str, bytes] = field(default_factory=dict)  # account -> public key


def check_validity(
    tx: Transaction,
    ledger: LedgerView,
    lock_table: LockTable | None = None,
    backend=None,
) -> Optional[str]:
    """Return a rejection reason, or None when the transaction is valid.

    Lock conflicts are deliberately not a validity failure: a conflicting
    transaction is cached for a later round, while an invalid one is
    rejected within the round that inspected it.
    """
    pk = ledger.accounts.get(tx.sender)
    if pk is None:
        return "unknown-sender"
    if tx.signature is None or tx.signature.signer != pk:
        return "bad-signature"
    if not crypto.verify(pk, tx.digest, tx.signature, backend):
        return "bad-signature"
    if tx.kind == SIMPLE:
        if tx.receiver not in ledger.accounts:
            return "unknown-receiver"
        if tx.amount <= 0:
            return "bad-amount"
        if ledger.balances.get(tx.sender, 0) < tx.amount:
            return "insufficient-balance"
        return None
    if tx.kind == COMPLEX:
        if not tx.touched:
            return "no-declared-objects"
        for obj in tx.touched:
            if obj not in ledger.objects:
                return "unknown-object"
        return None
    return "unknown-kind"


@dataclass
class RoundOutput:
    round_no: int
    simple_block: Optional[SimpleBlock]
    tx_blocks: list[TransactionBlock]
    confirmed_simple: list[Transaction]
    rejected: list[tuple[Transaction, str]]
    newly_cached: int
    deferred: list[Transaction]
    writeback_groups: set[int]


RR_ASSIGNMENT = "round_robin"
HASH_ASSIGNMENT = "hash"


class ConsensusCore:
    """State machine the simulator drives once per consensus round.

    Intake capacity is tx_per_block per lane per round: one block of simple
    payments rides alongside the m per-group complex blocks, which is what
    keeps payment confirmation independent of the complex backlog.
    """

    def __init__(
        self,
        cm: ConsensusModel,
        group_count: int,
        consensus_keys: Sequence[KeyPair],
        decision_threshold: int,
        *,
        assignment_mode: str = RR_ASSIGNMENT,
        caching: bool = True,
        assignment_salt: bytes = b"",
        backend=None,
    ) -> None:
        if group_count < 1:
            raise ParameterError("need at least one execution group")
        if assignment_mode not in (RR_ASSIGNMENT, HASH_ASSIGNMENT):
            raise ParameterError(f"unknown assignment mode {assignment_mode!r}")
        self.cm = cm
        self.m = group_count
        self.keys = list(consensus_keys)
        self.decision_threshold = decision_threshold
        self.assignment_mode = assignment_mode
        self.assignment_salt = assignment_salt
        self.caching = caching
        self.backend = backend

        self.ledger = LedgerView()
        self.lock_table = LockTable()
        self.cache_dir = CacheDirectory()
        self.sn_counters = [0] * group_count
        self.outstanding: list[OrderedDict[int, TransactionBlock]] = [
            OrderedDict() for _ in range(group_count)
        ]
        self.pending_simple: deque[Transaction] = deque()
        self.pending_complex: deque[Transaction] = deque()
        self.deferred: deque[Transaction] = deque()
        self.rr_pointer = 0
        self.round_no = 0

    # -- intake -----------------------------------------------------------

    def submit(self, tx: Transaction) -> None:
        if tx.kind == SIMPLE:
            self.pending_simple.append(tx)
        else:
            self.pending_complex.append(tx)

    def backlog(self) -> int:
        return (
            len(self.pending_simple)
            + len(self.pending_complex)
            + len(self.deferred)
            + self.lock_table.waiter_count()
            + sum(len(o) for o in self.outstanding)
        )

    # -- round construction ------------------------------------------------

    def build_round(self, round_no: int, now_us: int = 0, dispatch_complex: bool = True) -> RoundOutput:
        self.round_no = round_no
        out = RoundOutput(round_no, None, [], [], [], 0, [], set())

        self._fill_simple_block(out)
        if dispatch_complex:
            self._dispatch_complex(out, round_no, now_us)
        return out

    def _fill_simple_block(self, out: RoundOutput) -> None:
        taken: list[Transaction] = []
        while self.pending_simple and len(taken) < self.cm.tx_per_block:
            tx = self.pending_simple.popleft()
            reason = check_validity(tx, self.ledger, self.lock_table, self.backend)
            if reason is not None:
                out.rejected.append((tx, reason))
                continue
            self.ledger.balances[tx.sender] -= tx.amount
            self.ledger.balances[tx.receiver] = (
                self.ledger.balances.get(tx.receiver, 0) + tx.amount
            )
            taken.append(tx)
        if taken:
            digest = hash_bytes(b"sblk" + out.round_no.to_bytes(8, "big") + b"".join(t.digest for t in taken))
            out.simple_block = SimpleBlock(out.round_no, tuple(taken), digest)
            out.confirmed_simple = taken

    def _dispatch_complex(self, out: RoundOutput, round_no: int, now_us: int) -> None:
        budget = self.cm.tx_per_block
        batches: dict[int, list[Transaction]] = {}

        def dispatched() -> int:
            return sum(len(b) for b in batches.values())

        # Promotions first: heads of freed object queues, oldest ids first.
        # A promoted transaction that re-queues behind a different object
        # exposes its old queue's next head, so iterate to a fixpoint.  Each
        # transaction is popped at most once per round (it can only re-queue
        # behind a held object, which is no promotion candidate), so the
        # pass count is bounded by the waiting population.
        for _ in range(self.lock_table.waiter_count() + 1):
            if dispatched() >= budget:
                break
            popped_any = False
            for _, obj in self.lock_table.promotion_candidates():
                if dispatched() >= budget:
                    break
                tx = self.lock_table.pop_waiting_head(obj)
                if tx is None:
                    continue
                popped_any = True
                self._try_dispatch(tx, batches, out, round_no)
            if not popped_any:
                break

        # Transactions deferred for cache write-back last round.
        retry = list(self.deferred)
        self.deferred.clear()
        for tx in retry:
            if dispatched() >= budget:
                self.deferred.append(tx)
                continue
            self._try_dispatch(tx, batches, out, round_no)

        # Fresh intake; invalid transactions are rejected in this round and
        # never consume dispatch budget.
        while self.pending_complex and dispatched() < budget:
            tx = self.pending_complex.popleft()
            reason = check_validity(tx, self.ledger, self.lock_table, self.backend)
            if reason is not None:
                out.rejected.append((tx, reason))
                continue
            self._try_dispatch(tx, batches, out, round_no)

        for g in sorted(batches):
            txs = tuple(batches[g])
            sn = self.sn_counters[g]
            self.sn_counters[g] += 1
            digest = block_digest(g, sn, txs)
            cert = self._certify(g, sn, digest)
            block = TransactionBlock(g, sn, txs, digest, cert, created_us=now_us)
            self.outstanding[g][sn] = block
            out.tx_blocks.append(block)

    def _try_dispatch(
        self,
        tx: Transaction,
        batches: dict[int, list[Transaction]],
        out: RoundOutput,
        round_no: int,
    ) -> None:
        pinned = -1
        if self.caching:
            route = self.cache_dir.route(tx.touched)
            if route.kind is RouteKind.WRITEBACK_REQUIRED:
                out.writeback_groups.update(route.groups)
                out.deferred.append(tx)
                self.deferred.append(tx)
                return
            if route.kind is RouteKind.PINNED:
                pinned = route.groups[0]
        group = pinned if pinned >= 0 else self._next_group(tx)
        result = self.lock_table.acquire(tx, group, round_no)
        if result is AcquireResult.CACHED:
            out.newly_cached += 1
            return
        if pinned < 0 and self.assignment_mode == RR_ASSIGNMENT:
            self.rr_pointer = (self.rr_pointer + 1) % self.m
        batches.setdefault(group, []).append(tx)

    def _next_group(self, tx: Transaction) -> int:
        if self.assignment_mode == RR_ASSIGNMENT:
            return self.rr_pointer
        digest = hash_bytes(self.assignment_salt + tx.tx_id.to_bytes(8, "big"))
        return int.from_bytes(digest, "big") % self.m

    def _certify(self, group_index: int, sn: int, digest: bytes) -> MultiSignature:
        msg = cc_message(group_index, sn, digest)
        signers = self.keys[: self.cm.certificate_threshold]
        sigs = [crypto.sign(kp, msg, self.backend) for kp in signers]
        return crypto.aggregate(sigs, [kp.public_key for kp in self.keys], self.backend)

    # -- result intake ------------------------------------------------------

    def accept_result(
        self,
        rb,  # execution.ResultBlock
        group_pks: Sequence[bytes],
    ) -> tuple[str, Optional[str], list[Transaction], list[str]]:
        """Apply a result block, or explain why it was rejected.

        Returns (status, reason, confirmed transactions, freed objects).
        """
        from .execution import result_message  # local import to avoid a cycle

        g = rb.group_index
        if rb.multisig is None or rb.multisig.signer_count() < self.decision_threshold:
            return ("rejected", "insufficient-votes", [], [])
        if not crypto.verify_aggregate(
            group_pks, rb.multisig, result_message(g, rb.sequence_number, rb.digest), self.backend
        ):
            return ("rejected", "bad-multisig", [], [])
        queue = self.outstanding[g]
        if not queue or next(iter(queue)) != rb.sequence_number:
            return ("rejected", "sequence", [], [])
        block = queue.pop(rb.sequence_number)

        declared = {obj for tx in block.transactions for obj in tx.touched}
        for obj, version, value in rb.updates:
            if obj not in declared:
                # Undeclared writes would defeat the lock discipline.
                queue[rb.sequence_number] = block
                queue.move_to_end(rb.sequence_number, last=False)
                return ("rejected", "undeclared-object", [], [])
            if version != self.ledger.objects.get(obj, 0) + 1:
                queue[rb.sequence_number] = block
                queue.move_to_end(rb.sequence_number, last=False)
                return ("rejected", "version-gap", [], [])
        for obj, version, value in rb.updates:
            self.ledger.objects[obj] = version
            self.ledger.object_values[obj] = value
            if self.caching:
                self.cache_dir.assign(obj, g)
        freed = self.lock_table.release_block(block.transactions)
        return ("applied", None, list(block.transactions), freed)
