"""Versioned distributed storage: sharded replicas, quorum reads, caching.

Each shard replicates its objects across 2f''+1 state nodes.  Reads are
answered by f''+1 consistent replies; writes carry a group multisignature
and are accepted only when sequential (version = stored version + 1), so
every object's history is a fork-free chain 1, 2, 3, ...

Execution groups may cache objects they have written.  The consensus side
tracks which group caches what and keeps routing transactions on a cached
object to the same group; a transaction spanning two groups' caches forces
both to write back first.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from . import crypto
from .crypto import KeyPair, MultiSignature, hash_bytes
from .errors import AvailabilityError, NotFoundError, ParameterError


@dataclass(slots=True)
class StateObject:
    object_id: str
    version: int
    value: bytes

    @property
    def digest(self) -> bytes:
        return hash_bytes(self.value)


def write_message(object_id: str, version: int, value: bytes) -> bytes:
    return b"st|" + object_id.encode() + b"|" + version.to_bytes(8, "big") + b"|" + hash_bytes(value)


_MISSING = ("missing", -1, b"")


class StateNode:
    """One replica.  Byzantine replicas answer with deterministic garbage."""

    def __init__(self, node_id: str) -> None:
        self.node_id = node_id
        self.objects: dict[str, StateObject] = {}
        self.fault_mode = "honest"

    def respond(self, object_id: str) -> tuple[str, int, bytes]:
        if self.fault_mode == "crashed":
            return ("silent", -1, b"")
        if self.fault_mode == "byzantine":
            forged = hash_bytes(b"forged" + self.node_id.encode() + object_id.encode())
            return ("value", 10**9, forged)
        obj = self.objects.get(object_id)
        if obj is None:
            return _MISSING
        return ("value", obj.version, obj.value)


class StateShard:
    def __init__(self, index: int, size: int) -> None:
        if size < 1 or size % 2 == 0:
            raise ParameterError("shard size must be odd (2f''+1)")
        self.index = index
        self.nodes = [StateNode(f"st:{index}:{rank}") for rank in range(size)]

    @property
    def read_quorum(self) -> int:
        return len(self.nodes) // 2 + 1  # f'' + 1

    def seed(self, object_id: str, value: bytes) -> None:
        """Genesis install at version 1 on every replica."""
        for node in self.nodes:
            node.objects[object_id] = StateObject(object_id, 1, value)

    def read(self, object_id: str) -> tuple[bytes, int]:
        """Value and version attested by at least f''+1 identical replies."""
        tally: dict[tuple[str, int, bytes], int] = {}
        for node in self.nodes:
            reply = node.respond(object_id)
            if reply[0] == "silent":
                continue
            tally[reply] = tally.get(reply, 0) + 1
        for reply, count in tally.items():
            if count >= self.read_quorum:
                if reply[0] == "missing":
                    raise NotFoundError(f"object {object_id!r} not stored in shard {self.index}")
                return reply[2], reply[1]
        raise AvailabilityError(
            f"no {self.read_quorum}-consistent reply set for {object_id!r} in shard {self.index}"
        )

    def stored_version(self, object_id: str) -> int:
        try:
            _, version = self.read(object_id)
            return version
        except NotFoundError:
            return 0

    def write(
        self,
        object_id: str,
        value: bytes,
        version: int,
        msig: Optional[MultiSignature],
        signer_list: Sequence[bytes],
        threshold: int,
        backend=None,
    ) -> tuple[bool, Optional[str]]:
        """Multisig-gated sequential write; applied on every honest replica."""
        if (
            msig is None
            or msig.signer_count() < threshold
            or not crypto.verify_aggregate(
                signer_list, msig, write_message(object_id, version, value), backend
            )
        ):
            return (False, "auth")
        if version != self.stored_version(object_id) + 1:
            return (False, "sequence")
        for node in self.nodes:
            if node.fault_mode == "honest":
                node.objects[object_id] = StateObject(object_id, version, value)
        return (True, None)


class StorageNetwork:
    """Object-id-sharded collection of state shards."""

    def __init__(self, shard_count: int, shard_size: int) -> None:
        if shard_count < 1:
            raise ParameterError("need at least one shard")
        self.shards = [StateShard(i, shard_size) for i in range(shard_count)]

    def shard_of(self, object_id: str) -> StateShard:
        digest = hash_bytes(object_id.encode())
        return self.shards[int.from_bytes(digest[:8], "big") % len(self.shards)]

    def seed(self, object_id: str, value: bytes) -> None:
        self.shard_of(object_id).seed(object_id, value)

    def read_state(self, object_id: str) -> tuple[bytes, int]:
        return self.shard_of(object_id).read(object_id)

    def write_state(
        self,
        object_id: str,
        value: bytes,
        version: int,
        msig: Optional[MultiSignature],
        signer_list: Sequence[bytes],
        threshold: int,
        backend=None,
    ) -> tuple[bool, Optional[str]]:
        return self.shard_of(object_id).write(
            object_id, value, version, msig, signer_list, threshold, backend
        )

    def all_nodes(self) -> list[StateNode]:
        return [node for shard in self.shards for node in shard.nodes]


class RouteKind(enum.Enum):
    NONE = "none"
    PINNED = "pinned"
    WRITEBACK_REQUIRED = "writeback-required"


@dataclass(frozen=True, slots=True)
class Route:
    kind: RouteKind
    groups: tuple[int, ...] = ()


class CacheDirectory:
    """Which execution group currently caches which object (at most one)."""

    def __init__(self) -> None:
        self.by_object: dict[str, int] = {}

    def assign(self, object_id: str, group_index: int) -> None:
        self.by_object[object_id] = group_index

    def clear(self, object_id: str) -> None:
        self.by_object.pop(object_id, None)

    def group_of(self, object_id: str) -> Optional[int]:
        return self.by_object.get(object_id)

    def route(self, touched: Sequence[str]) -> Route:
        groups = sorted({self.by_object[o] for o in touched if o in self.by_object})
        if not groups:
            return Route(RouteKind.NONE)
        if len(groups) == 1:
            return Route(RouteKind.PINNED, (groups[0],))
        return Route(RouteKind.WRITEBACK_REQUIRED, tuple(groups))


def cache_route(directory: CacheDirectory, touched: Sequence[str]) -> Route:
    """Pin to the caching group, or demand write-backs when two groups cache."""
    return directory.route(touched)


class GroupStateCache:
    """A group's working copy of objects it has executed on.

    ``pending`` keeps every intermediate version so a flush can replay them
    in order; storage insists on sequential versions.
    """

    def __init__(self, group_index: int) -> None:
        self.group_index = group_index
        self.current: dict[str, tuple[int, bytes]] = {}
        self.pending: dict[str, list[tuple[int, bytes]]] = {}

    def get(self, object_id: str) -> Optional[tuple[int, bytes]]:
        return self.current.get(object_id)

    def put(self, object_id: str, version: int, value: bytes, *, dirty: bool = True) -> None:
        self.current[object_id] = (version, value)
        if dirty:
            self.pending.setdefault(object_id, []).append((version, value))

    def dirty_objects(self) -> list[str]:
        return sorted(self.pending)


def write_back(
    cache: GroupStateCache,
    directory: CacheDirectory,
    storage: StorageNetwork,
    signer_keys: Sequence[KeyPair],
    signer_list: Sequence[bytes],
    threshold: int,
    *,
    objects: Optional[Sequence[str]] = None,
    backend=None,
) -> int:
    """Flush cached updates (all, or a subset) to storage in version order.

    Returns the number of accepted writes.  Flushed directory entries are
    cleared so the consensus side stops pinning those objects.
    """
    targets = list(objects) if objects is not None else cache.dirty_objects()
    written = 0
    for object_id in sorted(targets):
        for version, value in cache.pending.get(object_id, ()):
            sigs = [
                crypto.sign(kp, write_message(object_id, version, value), backend)
                for kp in signer_keys
            ]
            msig = crypto.aggregate(sigs, signer_list, backend)
            ok, reason = storage.write_state(
                object_id, value, version, msig, signer_list, threshold, backend
            )
            if not ok:
                raise ParameterError(
                    f"write-back of {object_id!r} v{version} rejected: {reason}"
                )
            written += 1
        cache.pending.pop(object_id, None)
        cache.current.pop(object_id, None)
        if directory.group_of(object_id) == cache.group_index:
            directory.clear(object_id)
    return written
