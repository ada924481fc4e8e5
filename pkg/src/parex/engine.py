"""Experiment engine: wires ordering, execution, storage, and the beacon
over the discrete-event core into one deterministic simulated deployment.

Layout of a run:

* One logical consensus side (``ConsensusCore``) fires a round every
  1/rounds_per_second of virtual time.  Each round confirms a block of
  simple payments and hands out per-group transaction blocks under gapless
  sequence numbers, certified by the consensus keys.
* m execution groups of 2f'+1 nodes execute blocks in sequence order.
  All honest replicas of a group compute identical results, so the block
  transition is evaluated once per group and每 member only contributes its
  timing, its signature, and its fault behavior.  Crashed members stay
  silent, byzantine members sign a shared corrupted digest and emit
  under-signed result blocks when they act as leader.
* Signature collection follows rank order with timeout-driven failover,
  and the consensus side re-sends a block to the next rank when a result
  does not land in time.
* Storage is sharded with quorum reads and multisig-gated sequential
  writes.  With caching on, groups accumulate writes locally and flush at
  epoch boundaries or when a transaction straddles two groups' caches.

Everything runs in integer microseconds off one event queue; a run is a
pure function of (config, seed) and its trace digest proves it.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

from . import beacon, crypto, execution, storage
from .config import ExperimentConfig, MODE_PARALLEL
from .crypto import KeyPair, MockBackend
from .errors import CertificateError, ConfigError, DisputeError, ParameterError
from .execution import (
    ExecNodeState,
    ResultBlock,
    SignedResult,
    compute_block_result,
    corrupt_digest,
    leader_aggregate,
    result_message,
)
from .membership import Identity, IdentityLedger, register
from .metrics import MetricsRecord
from .ordering import (
    COMPLEX,
    SIMPLE,
    ConsensusCore,
    Transaction,
    TransactionBlock,
)
from .simnet import (
    LINK_CN_EN,
    LINK_INTRA_GROUP,
    FifoNet,
    LatencyModel,
    Simulator,
    inject_fault,
    ms_to_us,
)
from .storage import GroupStateCache, StorageNetwork, write_back
from .workload import WorkloadBundle

FAILOVER_TIMEOUT_FACTOR = 4  # member failover waits 4 * delta_bound


def _cc_message(tb: TransactionBlock) -> bytes:
    from .ordering import cc_message

    return cc_message(tb.group_index, tb.sequence_number, tb.digest)


@dataclass
class _Collect:
    """Per-(group, sn) signature collection and failover state."""

    sigs: dict[bytes, dict[int, SignedResult]] = field(default_factory=dict)
    emitted_by: set[int] = field(default_factory=set)
    observed_by: set[int] = field(default_factory=set)
    acting: dict[int, int] = field(default_factory=dict)  # rank -> pointer
    attempts: dict[int, int] = field(default_factory=dict)  # rank -> timeouts fired
    applied: bool = False


class GroupRuntime:
    """One execution group: replicas, shared cache, collection state."""

    def __init__(
        self,
        engine: "ExperimentEngine",
        index: int,
        keypairs: list[KeyPair],
        first_sn: int,
    ) -> None:
        self.engine = engine
        self.index = index
        self.nodes = [
            ExecNodeState(kp, index, rank, next_sn=first_sn)
            for rank, kp in enumerate(keypairs)
        ]
        for node in self.nodes:
            node.fault_mode = engine.fault_modes.get(node.public_key, "honest")
        self.pks = [kp.public_key for kp in keypairs]
        self.keypairs = keypairs
        self.cache = GroupStateCache(index)
        self.busy_until = [engine.sim.now_us] * len(keypairs)
        self.sched_sn = [first_sn] * len(keypairs)
        self.buffer: list[dict[int, TransactionBlock]] = [dict() for _ in keypairs]
        self.requested: set[tuple[int, int]] = set()
        self.blocks: dict[int, TransactionBlock] = {}
        self.canonical: dict[int, tuple[tuple, bytes, int]] = {}
        self.canonical_next = first_sn
        self.collect: dict[int, _Collect] = {}
        self.exec_us_total = 0

    # -- helpers ------------------------------------------------------------

    def _id(self, rank: int) -> str:
        return f"en:{self.index}:{rank}"

    def _coll(self, sn: int) -> _Collect:
        return self.collect.setdefault(sn, _Collect())

    def honest_signers(self) -> list[KeyPair]:
        return [
            kp
            for kp, node in zip(self.keypairs, self.nodes)
            if node.fault_mode == "honest"
        ]

    def _read_object(self, obj: str) -> tuple[int, bytes]:
        if self.engine.caching:
            hit = self.cache.get(obj)
            if hit is not None:
                return hit
        value, version = self.engine.storage.read_state(obj)
        return (version, value)

    # -- block delivery and execution ---------------------------------------

    def deliver_block(self, rank: int, tb: TransactionBlock, from_rank: int) -> None:
        node = self.nodes[rank]
        sn = tb.sequence_number
        coll = self._coll(sn)
        coll.acting[rank] = max(coll.acting.get(rank, 0), min(from_rank, len(self.nodes) - 1))
        if node.fault_mode == "crashed":
            return
        first_sight = sn not in self.blocks
        if first_sight:
            # One certificate check per block per group; replicas would each
            # verify, but they are deterministic copies of this one.
            if tb.commit_certificate is None or not crypto.verify_aggregate(
                self.engine.consensus_pks,
                tb.commit_certificate,
                _cc_message(tb),
                self.engine.backend,
            ):
                raise CertificateError(
                    f"group {self.index} received block sn={sn} with a bad certificate"
                )
            if (
                tb.commit_certificate.signer_count()
                < self.engine.config.consensus.certificate_threshold
            ):
                raise CertificateError(f"certificate for sn={sn} below 2f+1")
        self.blocks[sn] = tb
        if from_rank < 0 or first_sight:
            # Acting recipient fans the block out to the rest of the group.
            for other in range(len(self.nodes)):
                if other == rank:
                    continue
                self.engine.net.send(
                    self._id(rank),
                    self._id(other),
                    LINK_INTRA_GROUP,
                    "block_fwd",
                    self._deliver_cb(other, tb, rank),
                    note=f"g{self.index}sn{sn}r{other}",
                )
        if sn in self.buffer[rank] or sn < self.sched_sn[rank]:
            self._try_emit(rank, sn)
            return
        self.buffer[rank][sn] = tb
        self._request_missing(rank, sn)
        self._drain_schedule(rank)
        self._try_emit(rank, sn)

    def _deliver_cb(self, rank: int, tb: TransactionBlock, from_rank: int):
        return lambda: self.deliver_block(rank, tb, from_rank)

    def _request_missing(self, rank: int, observed_sn: int) -> None:
        """Sequence-gap recovery: pull missing blocks, leader first."""
        for sn in range(self.sched_sn[rank], observed_sn):
            if sn in self.buffer[rank] or (rank, sn) in self.requested:
                continue
            self.requested.add((rank, sn))
            coll = self._coll(sn)
            leader_rank = coll.acting.get(rank, 0)
            leader = self.nodes[leader_rank]
            tb = self.blocks.get(sn)
            if tb is not None and leader.fault_mode != "crashed" and leader_rank != rank:
                self.engine.net.send(
                    self._id(leader_rank),
                    self._id(rank),
                    LINK_INTRA_GROUP,
                    "gap_fill",
                    self._deliver_cb(rank, tb, leader_rank),
                    note=f"g{self.index}sn{sn}r{rank}",
                )
                continue
            cn_tb = self.engine.block_archive.get((self.index, sn))
            if cn_tb is not None:
                self.engine.net.send(
                    "cn",
                    self._id(rank),
                    LINK_CN_EN,
                    "gap_fill_cn",
                    self._deliver_cb(rank, cn_tb, rank),
                    note=f"g{self.index}sn{sn}r{rank}",
                )

    def _drain_schedule(self, rank: int) -> None:
        node = self.nodes[rank]
        while self.sched_sn[rank] in self.buffer[rank]:
            sn = self.sched_sn[rank]
            tb = self.buffer[rank].pop(sn)
            start = max(self.engine.sim.now_us, self.busy_until[rank])
            done = start + tb.exec_cost_us
            self.busy_until[rank] = done
            self.sched_sn[rank] += 1
            self.engine.sim.schedule(
                done,
                "exec_done",
                lambda tb=tb, rank=rank: self._on_exec_done(rank, tb),
                note=f"g{self.index}sn{tb.sequence_number}r{rank}",
            )

    def _ensure_canonical(self, tb: TransactionBlock) -> tuple[tuple, bytes, int]:
        sn = tb.sequence_number
        hit = self.canonical.get(sn)
        if hit is not None:
            return hit
        if sn != self.canonical_next:
            raise ParameterError(
                f"group {self.index} canonical execution out of order: "
                f"{sn} vs {self.canonical_next}"
            )
        updates, digest = compute_block_result(tb, self._read_object)
        if self.engine.caching:
            for obj, version, value in updates:
                self.cache.put(obj, version, value)
        entry = (updates, digest, tb.exec_cost_us)
        self.canonical[sn] = entry
        self.canonical_next += 1
        self.exec_us_total += tb.exec_cost_us
        return entry

    def _on_exec_done(self, rank: int, tb: TransactionBlock) -> None:
        node = self.nodes[rank]
        if node.fault_mode == "crashed":
            return
        sn = tb.sequence_number
        _, digest, _ = self._ensure_canonical(tb)
        node.next_sn = max(node.next_sn, sn + 1)
        signed = digest if node.fault_mode != "byzantine" else corrupt_digest(digest)
        sig = crypto.sign(
            node.keypair, result_message(self.index, sn, signed), self.engine.backend
        )
        result = SignedResult(node.public_key, rank, signed, sig)
        coll = self._coll(sn)
        target = coll.acting.get(rank, 0)
        self._send_sig(rank, target, sn, result)
        self.engine.sim.schedule_in(
            self.engine.failover_timeout_us,
            "member_timeout",
            lambda: self._on_member_timeout(rank, sn, result),
            note=f"g{self.index}sn{sn}r{rank}",
        )
        self._try_emit(rank, sn)

    def _send_sig(self, rank: int, target: int, sn: int, result: SignedResult) -> None:
        if target == rank:
            self._on_sig(rank, sn, result)
            return
        self.engine.net.send(
            self._id(rank),
            self._id(target),
            LINK_INTRA_GROUP,
            "sig",
            lambda: self._on_sig(target, sn, result),
            note=f"g{self.index}sn{sn}r{rank}to{target}",
        )

    # -- collection, emission, failover --------------------------------------

    def _on_sig(self, rank: int, sn: int, result: SignedResult) -> None:
        node = self.nodes[rank]
        if node.fault_mode == "crashed":
            return
        coll = self._coll(sn)
        coll.sigs.setdefault(result.digest, {})[result.rank] = result
        self._try_emit(rank, sn)

    def _try_emit(self, rank: int, sn: int) -> None:
        node = self.nodes[rank]
        coll = self._coll(sn)
        if rank in coll.emitted_by or coll.applied:
            return
        if node.fault_mode == "crashed":
            return
        if node.fault_mode == "byzantine":
            # A lying leader pushes its corrupted result, signed only by the
            # liars; the consensus side will find it under threshold.
            if sn not in self.canonical:
                return
            _, digest, _ = self.canonical[sn]
            bad = corrupt_digest(digest)
            have = coll.sigs.get(bad, {})
            mine = have.get(rank)
            if mine is None:
                return
            coll.emitted_by.add(rank)
            msig = crypto.aggregate(
                [r.signature for r in have.values()], self.pks, self.engine.backend
            )
            rb = ResultBlock(self.index, sn, (), bad, msig)
            self._emit(rank, rb)
            return
        entry = self.canonical.get(sn)
        if entry is None:
            return
        updates, digest, _ = entry
        matching = coll.sigs.get(digest, {})
        if len(matching) < self.engine.decision_threshold:
            return
        try:
            rb = leader_aggregate(
                self.index,
                sn,
                updates,
                digest,
                sorted(matching.values(), key=lambda r: r.rank),
                self.pks,
                self.engine.decision_threshold,
                self.engine.backend,
            )
        except DisputeError:
            self.engine.disputes += 1
            raise
        coll.emitted_by.add(rank)
        self._emit(rank, rb)
        for other in range(len(self.nodes)):
            if other == rank:
                coll.observed_by.add(rank)
                continue
            self.engine.net.send(
                self._id(rank),
                self._id(other),
                LINK_INTRA_GROUP,
                "observe",
                lambda other=other, digest=digest: self._on_observe(other, sn, digest),
                note=f"g{self.index}sn{sn}r{other}",
            )

    def _emit(self, rank: int, rb: ResultBlock) -> None:
        self.engine.net.send(
            self._id(rank),
            "cn",
            LINK_CN_EN,
            "result",
            lambda: self.engine.on_result(rb),
            note=f"g{self.index}sn{rb.sequence_number}r{rank}",
        )

    def _on_observe(self, rank: int, sn: int, digest: bytes) -> None:
        coll = self._coll(sn)
        entry = self.canonical.get(sn)
        if entry is not None and entry[1] == digest:
            coll.observed_by.add(rank)

    def _on_member_timeout(self, rank: int, sn: int, result: SignedResult) -> None:
        coll = self._coll(sn)
        if coll.applied or rank in coll.observed_by:
            return  # guard satisfied earlier; stale timeout is a no-op
        node = self.nodes[rank]
        if node.fault_mode == "crashed":
            return
        attempts = coll.attempts.get(rank, 0) + 1
        coll.attempts[rank] = attempts
        if attempts > 2 * len(self.nodes) + 2:
            raise DisputeError(
                f"group {self.index} sn {sn}: no result accepted after "
                f"{attempts} failover rounds; fault budget exceeded?"
            )
        pointer = coll.acting.get(rank, 0)
        if pointer < len(self.nodes) - 1:
            pointer += 1
            coll.acting[rank] = pointer
        self._send_sig(rank, pointer, sn, result)
        self.engine.sim.schedule_in(
            self.engine.failover_timeout_us,
            "member_timeout",
            lambda: self._on_member_timeout(rank, sn, result),
            note=f"g{self.index}sn{sn}r{rank}",
        )

    def flush_cache(self) -> int:
        if not self.engine.caching:
            return 0
        signers = self.honest_signers()
        return write_back(
            self.cache,
            self.engine.core.cache_dir,
            self.engine.storage,
            signers,
            self.pks,
            self.engine.decision_threshold,
            backend=self.engine.backend,
        )


class ExperimentEngine:
    """Builds a deployment from a config and runs it to completion."""

    def __init__(
        self,
        config: ExperimentConfig,
        bundle: WorkloadBundle,
        backend: MockBackend | None = None,
    ) -> None:
        if config.mode != MODE_PARALLEL:
            raise ConfigError("ExperimentEngine only runs parallel mode")
        config.validate()
        self.config = config
        self.bundle = bundle
        self.backend = backend if backend is not None else MockBackend()
        self.sim = Simulator()
        self.latency = LatencyModel(
            base_ms=dict(config.latency_base_ms),
            jitter_ms=config.latency_jitter_ms,
            delta_bound_ms=config.latency_delta_bound_ms,
        )
        self.net = FifoNet(self.sim, self.latency, seed=config.seed ^ 0x5EED)
        self.failover_timeout_us = FAILOVER_TIMEOUT_FACTOR * self.latency.delta_bound_us

        cm = config.consensus
        self.consensus_keys = [
            crypto.key_gen(_key_seed(config.seed, 0, i), self.backend)
            for i in range(cm.nodes)
        ]
        self.consensus_pks = [kp.public_key for kp in self.consensus_keys]

        m, size = config.groups.count, config.groups.size
        self.decision_threshold = config.decision_threshold_count()
        self.caching = config.storage.cache_enabled

        self.en_keys = [
            crypto.key_gen(_key_seed(config.seed, 1, i), self.backend)
            for i in range(m * size)
        ]
        ledger = IdentityLedger()
        for i, kp in enumerate(self.en_keys):
            ledger = register(ledger, kp.public_key, deposit=1_000_000 - i)
        self.ledger = ledger
        self.by_pk = {kp.public_key: kp for kp in self.en_keys}
        self.fault_modes: dict[bytes, str] = {}

        transcript = beacon.run_beacon(self.consensus_pks, cm.faulty, (), config.seed)
        if not beacon.verify_transcript(transcript):
            raise ConfigError("genesis beacon transcript failed verification")
        self.epoch_counter = 0
        self.group_keypairs = _deal_groups(ledger, m, size, transcript.output, self.by_pk)

        self.storage = StorageNetwork(config.storage.shard_count, config.storage.shard_size)
        self.core = ConsensusCore(
            cm,
            m,
            self.consensus_keys,
            self.decision_threshold,
            assignment_mode=config.assignment_mode,
            caching=self.caching,
            assignment_salt=transcript.output,
            backend=self.backend,
        )
        for name, kp, balance in bundle.accounts:
            self.core.ledger.accounts[name] = kp.public_key
            self.core.ledger.balances[name] = balance
        # Seed only the objects this workload can touch; the population as a
        # whole exists logically but untouched objects never leave genesis.
        used = sorted({obj for tx in bundle.transactions for obj in tx.touched})
        for cid in used:
            value = crypto.hash_bytes(b"genesis:" + cid.encode())
            self.storage.seed(cid, value)
            self.core.ledger.objects[cid] = 1
            self.core.ledger.object_values[cid] = value

        self.groups = [
            GroupRuntime(self, g, self.group_keypairs[g], 0) for g in range(m)
        ]
        self.cn_acting = [0] * m
        self.block_archive: dict[tuple[int, int], TransactionBlock] = {}
        self.result_stash: dict[tuple[int, int], ResultBlock] = {}

        self._schedule_faults()

        # Metrics accumulators.
        self.first_submit_us = 0
        self.last_confirm_us = 0
        self.confirmed_simple = 0
        self.confirmed_complex = 0
        self.latency_sum = {SIMPLE: 0, COMPLEX: 0}
        self.latency_max = {SIMPLE: 0, COMPLEX: 0}
        self.confirm_round = {}
        self.dispatch_round = {}
        self.rejected: list[tuple[int, str]] = []
        self.result_rejections: dict[str, int] = {}
        self.disputes = 0
        self.simple_chain = 0
        self.round_no = 0
        self.draining = False
        self._round_scheduled = False
        self.initial_balance_total = sum(self.core.ledger.balances.values())

    # -- setup helpers -------------------------------------------------------

    def _schedule_faults(self) -> None:
        registry = {}
        for g, runtime in enumerate(self.groups):
            for rank, node in enumerate(runtime.nodes):
                registry[f"en:{g}:{rank}"] = node
        for node in self.storage.all_nodes():
            registry[node.node_id] = node
        for spec in self.config.fault_schedule:
            node_id = spec.node_id()
            inject_fault(self.sim, registry, node_id, spec.mode, ms_to_us(spec.at_ms))
            node = registry[node_id]
            if hasattr(node, "public_key"):
                record = node.public_key
                self.sim.schedule(
                    ms_to_us(spec.at_ms),
                    "fault_record",
                    lambda record=record, mode=spec.mode: self.fault_modes.__setitem__(record, mode),
                    note=node_id,
                )

    # -- run loop -------------------------------------------------------------

    def run(self) -> "RunResult":
        for tx in self.bundle.transactions:
            self.core.submit(tx)
        self.sim.schedule(
            0,
            "submit",
            None,
            note=f"txs={len(self.bundle.transactions)}",
        )
        self._schedule_next_round()
        self.sim.run_until(None)
        if self.config.storage.final_flush:
            # Flush so storage matches the consensus view at quiescence.
            for runtime in self.groups:
                runtime.flush_cache()
            self._flush_balances()
        return self._collect_results()

    def _schedule_next_round(self) -> None:
        if self._round_scheduled:
            return
        self._round_scheduled = True
        fire = (self.round_no + 1) * self.config.consensus.round_interval_us
        self.sim.schedule(fire, "round", self._on_round, note=f"r{self.round_no + 1}")

    def _on_round(self) -> None:
        self._round_scheduled = False
        self.round_no += 1
        now = self.sim.now_us

        epoch_len = self.config.epoch.length_rounds
        if epoch_len > 0 and self.round_no % epoch_len == 0:
            self.draining = True

        out = self.core.build_round(self.round_no, now, dispatch_complex=not self.draining)

        for tx in out.confirmed_simple:
            self._confirm(tx, now)
        if out.simple_block is not None:
            self._persist_simple_block(out.simple_block)
        for tx, reason in out.rejected:
            self.rejected.append((tx.tx_id, reason))
        for g in sorted(out.writeback_groups):
            self.groups[g].flush_cache()
        for tb in out.tx_blocks:
            self.block_archive[(tb.group_index, tb.sequence_number)] = tb
            for tx in tb.transactions:
                self.dispatch_round[tx.tx_id] = self.round_no
            self._dispatch_block(tb)

        if self.draining:
            self._maybe_finish_epoch()
        if self.core.backlog() > 0 or self.draining:
            self._schedule_next_round()

    def _dispatch_block(self, tb: TransactionBlock) -> None:
        g = tb.group_index
        rank = self.cn_acting[g]
        runtime = self.groups[g]
        self.net.send(
            "cn",
            f"en:{g}:{rank}",
            LINK_CN_EN,
            "block",
            runtime._deliver_cb(rank, tb, -1),
            note=f"g{g}sn{tb.sequence_number}",
        )
        timeout = tb.exec_cost_us + 6 * self.latency.delta_bound_us
        self.sim.schedule_in(
            timeout,
            "cn_timeout",
            lambda: self._on_cn_timeout(tb),
            note=f"g{g}sn{tb.sequence_number}",
        )

    def _on_cn_timeout(self, tb: TransactionBlock) -> None:
        g, sn = tb.group_index, tb.sequence_number
        if sn not in self.core.outstanding[g]:
            return  # applied; timeout guard satisfied earlier
        runtime = self.groups[g]
        if self.cn_acting[g] < len(runtime.nodes) - 1:
            self.cn_acting[g] += 1
        rank = self.cn_acting[g]
        self.net.send(
            "cn",
            f"en:{g}:{rank}",
            LINK_CN_EN,
            "block_resend",
            runtime._deliver_cb(rank, tb, rank),
            note=f"g{g}sn{sn}r{rank}",
        )
        self.sim.schedule_in(
            tb.exec_cost_us + 6 * self.latency.delta_bound_us,
            "cn_timeout",
            lambda: self._on_cn_timeout(tb),
            note=f"g{g}sn{sn}",
        )

    def on_result(self, rb: ResultBlock) -> None:
        g = rb.group_index
        runtime = self.groups[g]
        status, reason, confirmed, _freed = self.core.accept_result(rb, runtime.pks)
        if status == "rejected":
            self.result_rejections[reason] = self.result_rejections.get(reason, 0) + 1
            if reason == "sequence" and rb.sequence_number in self.core.outstanding[g]:
                # Out-of-order arrival across failover channels: hold and retry.
                self.result_stash[(g, rb.sequence_number)] = rb
            return
        coll = runtime._coll(rb.sequence_number)
        coll.applied = True
        now = self.sim.now_us
        for tx in confirmed:
            self._confirm(tx, now)
        if not self.caching:
            self._write_now(runtime, rb)
        if self.draining:
            self._maybe_finish_epoch()
        queue = self.core.outstanding[g]
        if queue:
            nxt = next(iter(queue))
            stashed = self.result_stash.pop((g, nxt), None)
            if stashed is not None:
                self.on_result(stashed)

    def _write_now(self, runtime: GroupRuntime, rb: ResultBlock) -> None:
        signers = runtime.honest_signers()
        for obj, version, value in rb.updates:
            sigs = [
                crypto.sign(kp, storage.write_message(obj, version, value), self.backend)
                for kp in signers
            ]
            msig = crypto.aggregate(sigs, runtime.pks, self.backend)
            ok, why = self.storage.write_state(
                obj, value, version, msig, runtime.pks, self.decision_threshold, self.backend
            )
            if not ok:
                raise ParameterError(f"direct write of {obj!r} v{version} rejected: {why}")

    def _persist_simple_block(self, block) -> None:
        self.simple_chain += 1
        obj = f"sys:simple:{block.round_no}"
        sigs = [
            crypto.sign(kp, storage.write_message(obj, 1, block.digest), self.backend)
            for kp in self.consensus_keys[: self.config.consensus.certificate_threshold]
        ]
        msig = crypto.aggregate(sigs, self.consensus_pks, self.backend)
        ok, why = self.storage.write_state(
            obj,
            block.digest,
            1,
            msig,
            self.consensus_pks,
            self.config.consensus.certificate_threshold,
            self.backend,
        )
        if not ok:
            raise ParameterError(f"simple block persist rejected: {why}")

    def _flush_balances(self) -> None:
        threshold = self.config.consensus.certificate_threshold
        for name in sorted(self.core.ledger.balances):
            obj = f"sys:bal:{name}"
            value = self.core.ledger.balances[name].to_bytes(8, "big")
            sigs = [
                crypto.sign(kp, storage.write_message(obj, 1, value), self.backend)
                for kp in self.consensus_keys[:threshold]
            ]
            msig = crypto.aggregate(sigs, self.consensus_pks, self.backend)
            self.storage.write_state(
                obj, value, 1, msig, self.consensus_pks, threshold, self.backend
            )

    # -- epochs ---------------------------------------------------------------

    def _maybe_finish_epoch(self) -> None:
        if any(self.core.outstanding[g] for g in range(self.core.m)):
            return
        self.draining = False
        self.epoch_counter += 1
        for runtime in self.groups:
            runtime.flush_cache()
        transcript = beacon.run_beacon(
            self.consensus_pks,
            self.config.consensus.faulty,
            (),
            self.config.seed + self.epoch_counter,
        )
        if not beacon.verify_transcript(transcript):
            raise ConfigError("epoch beacon transcript failed verification")
        self.group_keypairs = _rotate_groups(
            self.group_keypairs,
            transcript.output,
            self.config.epoch.rotation_fraction,
        )
        self.groups = [
            GroupRuntime(self, g, self.group_keypairs[g], self.core.sn_counters[g])
            for g in range(self.core.m)
        ]
        self.cn_acting = [0] * self.core.m

    # -- metrics ---------------------------------------------------------------

    def _confirm(self, tx: Transaction, now: int) -> None:
        latency = now - tx.submit_us
        self.latency_sum[tx.kind] += latency
        self.latency_max[tx.kind] = max(self.latency_max[tx.kind], latency)
        self.last_confirm_us = max(self.last_confirm_us, now)
        self.confirm_round[tx.tx_id] = self.round_no
        if tx.kind == SIMPLE:
            self.confirmed_simple += 1
        else:
            self.confirmed_complex += 1

    def _collect_results(self) -> "RunResult":
        confirmed = self.confirmed_simple + self.confirmed_complex
        submitted = len(self.bundle.transactions)
        in_flight = self.core.backlog()
        busy_us = max(self.last_confirm_us - self.first_submit_us, 1)
        span = max(self.sim.now_us, 1)
        cfg = self.config
        record = MetricsRecord(
            run_id=cfg.run_id,
            m=cfg.groups.count,
            group_size=cfg.groups.size,
            consensus_tps=cfg.consensus.tx_per_block * cfg.consensus.rounds_per_second,
            workload=cfg.workload.kind,
            throughput_tps=confirmed / (busy_us / 1e6) if confirmed else 0.0,
            simple_latency_ms=(
                self.latency_sum[SIMPLE] / self.confirmed_simple / 1000.0
                if self.confirmed_simple
                else 0.0
            ),
            complex_latency_ms=(
                self.latency_sum[COMPLEX] / self.confirmed_complex / 1000.0
                if self.confirmed_complex
                else 0.0
            ),
            processing_time_s=busy_us / 1e6 if confirmed else 0.0,
            aborts=0,
            submitted=submitted,
            confirmed=confirmed,
            rejected=len(self.rejected),
            cached_in_flight=in_flight,
            cached_events=self.core.lock_table.cached_events,
            per_group_utilization=[
                min(runtime.exec_us_total / span, 1.0) for runtime in self.groups
            ],
        )
        balances_total = sum(self.core.ledger.balances.values())
        return RunResult(
            metrics=record,
            trace_digest=self.sim.trace_digest(),
            rounds=self.round_no,
            confirm_round=self.confirm_round,
            dispatch_round=self.dispatch_round,
            max_latency_us=dict(self.latency_max),
            rejected=list(self.rejected),
            result_rejections=dict(self.result_rejections),
            balance_conserved=(balances_total == self.initial_balance_total),
            object_versions=dict(self.core.ledger.objects),
            object_values=dict(self.core.ledger.object_values),
            balances=dict(self.core.ledger.balances),
            epochs=self.epoch_counter,
        )


@dataclass
class RunResult:
    metrics: MetricsRecord
    trace_digest: str
    rounds: int
    confirm_round: dict
    dispatch_round: dict
    max_latency_us: dict
    rejected: list
    result_rejections: dict
    balance_conserved: bool
    object_versions: dict
    object_values: dict
    balances: dict
    epochs: int


def _key_seed(seed: int, domain: int, index: int) -> int:
    return (
        int.from_bytes(
            crypto.hash_bytes(
                b"keyseed" + seed.to_bytes(8, "big", signed=True) + bytes([domain]) + index.to_bytes(4, "big")
            )[:8],
            "big",
        )
    )


def _deal_groups(
    ledger: IdentityLedger,
    m: int,
    size: int,
    r: bytes,
    by_pk: dict[bytes, KeyPair],
) -> list[list[KeyPair]]:
    """Equal-size beacon shuffle: order by hash(r || pk), deal round-robin,
    then rank each group by deposit so index 0 is the leader."""
    members = ledger.execution_members()
    if len(members) != m * size:
        raise ConfigError(f"need exactly {m * size} execution identities")
    dealt = sorted(members, key=lambda i: (crypto.hash_bytes(r + i.public_key), i.public_key))
    groups: list[list[Identity]] = [[] for _ in range(m)]
    for i, ident in enumerate(dealt):
        groups[i % m].append(ident)
    out = []
    for bucket in groups:
        ranked = sorted(bucket, key=lambda i: (-i.deposit, i.public_key))
        out.append([by_pk[i.public_key] for i in ranked])
    return out


def _rotate_groups(
    current: list[list[KeyPair]],
    r: bytes,
    fraction: float,
) -> list[list[KeyPair]]:
    """Partial rotation preserving group sizes: the ceil(fraction * total)
    members with the lowest hash(r || pk) trade places via a fresh deal."""
    all_members = [kp for group in current for kp in group]
    total = len(all_members)
    count = min(max(-(-int(fraction * total * 10**9) // 10**9), 1), total)
    ranked = sorted(
        all_members, key=lambda kp: (crypto.hash_bytes(r + kp.public_key), kp.public_key)
    )
    selected = {kp.public_key for kp in ranked[:count]}
    vacancies: list[tuple[int, int]] = []
    result: list[list[Optional[KeyPair]]] = []
    for g, group in enumerate(current):
        row: list[Optional[KeyPair]] = []
        for slot, kp in enumerate(group):
            if kp.public_key in selected:
                row.append(None)
                vacancies.append((g, slot))
            else:
                row.append(kp)
        result.append(row)
    movers = [kp for kp in ranked[:count]]
    for (g, slot), kp in zip(vacancies, movers):
        result[g][slot] = kp
    return [[kp for kp in row if kp is not None] for row in result]
