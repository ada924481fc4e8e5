"""Deterministic discrete-event engine: virtual clock, latencies, faults.

Virtual time is integer microseconds.  Events fire in (time, tiebreak)
order where the tiebreak is a monotone counter assigned at scheduling time,
so two runs that schedule the same events in the same order replay
identically.  A running SHA-256 over the processed event stream gives each
run a trace digest that doubles as a determinism check.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import ParameterError, SchedulingError, UnknownNodeError

US_PER_MS = 1000


def ms_to_us(ms: float) -> int:
    return round(ms * US_PER_MS)


@dataclass(order=True, slots=True)
class Event:
    fire_us: int
    tiebreak: int
    kind: str = field(compare=False)
    note: str = field(compare=False)
    action: Optional[Callable[[], None]] = field(compare=False, repr=False)


class Simulator:
    """Virtual clock plus an ordered event queue with a trace hasher."""

    def __init__(self) -> None:
        self.now_us = 0
        self._queue: list[Event] = []
        self._counter = 0
        self._hasher = hashlib.sha256()
        self.events_processed = 0

    def schedule(
        self,
        fire_us: int,
        kind: str,
        action: Optional[Callable[[], None]] = None,
        note: str = "",
    ) -> Event:
        if fire_us < self.now_us:
            raise SchedulingError(
                f"event {kind!r} at {fire_us}us is before now ({self.now_us}us)"
            )
        event = Event(fire_us, self._counter, kind, note, action)
        self._counter += 1
        heapq.heappush(self._queue, event)
        return event

    def schedule_in(
        self,
        delay_us: int,
        kind: str,
        action: Optional[Callable[[], None]] = None,
        note: str = "",
    ) -> Event:
        return self.schedule(self.now_us + delay_us, kind, action, note)

    def peek_time(self) -> int | None:
        return self._queue[0].fire_us if self._queue else None

    def run_until(self, horizon_us: int | None = None) -> int:
        """Process events in order until quiescence or the horizon."""
        while self._queue:
            if horizon_us is not None and self._queue[0].fire_us > horizon_us:
                self.now_us = horizon_us
                return self.now_us
            event = heapq.heappop(self._queue)
            self.now_us = event.fire_us
            self.events_processed += 1
            self._hasher.update(
                f"{event.fire_us}|{event.tiebreak}|{event.kind}|{event.note}\n".encode()
            )
            if event.action is not None:
                event.action()
        if horizon_us is not None and horizon_us > self.now_us:
            self.now_us = horizon_us
        return self.now_us

    def trace_digest(self) -> str:
        return self._hasher.hexdigest()


LINK_CLIENT_CN = "client_cn"
LINK_CN_EN = "cn_en"
LINK_INTRA_GROUP = "intra_group"
LINK_EN_STORAGE = "en_storage"

_DEFAULT_BASE_MS = {
    LINK_CLIENT_CN: 50.0,
    LINK_CN_EN: 50.0,
    LINK_INTRA_GROUP: 50.0,
    LINK_EN_STORAGE: 50.0,
}


@dataclass(frozen=True)
class LatencyModel:
    """Per-link-class base latency with seeded uniform jitter, bounded by delta."""

    base_ms: dict[str, float] = field(default_factory=lambda: dict(_DEFAULT_BASE_MS))
    jitter_ms: float = 20.0
    delta_bound_ms: float = 200.0

    def __post_init__(self) -> None:
        if self.delta_bound_ms <= 0:
            raise ParameterError("delivery bound must be positive")
        for link, base in self.base_ms.items():
            if base < 0 or base > self.delta_bound_ms:
                raise ParameterError(f"base latency for {link} outside [0, bound]")

    def sample_us(self, link: str, rng: random.Random) -> int:
        base = self.base_ms.get(link)
        if base is None:
            raise ParameterError(f"unknown link class {link!r}")
        ms = base + rng.uniform(-self.jitter_ms, self.jitter_ms)
        ms = min(max(ms, 0.0), self.delta_bound_ms)
        return ms_to_us(ms)

    @property
    def delta_bound_us(self) -> int:
        return ms_to_us(self.delta_bound_ms)


class FifoNet:
    """Message delivery with per-channel FIFO ordering.

    Latencies are sampled per message, but arrival on one (src, dst) channel
    never overtakes an earlier send on the same channel; without this, jitter
    could reorder a group's result stream and break sequence checks.
    """

    def __init__(self, sim: Simulator, model: LatencyModel, seed: int) -> None:
        self.sim = sim
        self.model = model
        self.rng = random.Random(seed)
        self._last_arrival: dict[tuple[str, str], int] = {}
        self.drop_filter: Optional[Callable[[str, str, str], bool]] = None
        self.dropped = 0

    def send(
        self,
        src: str,
        dst: str,
        link: str,
        kind: str,
        action: Callable[[], None],
        note: str = "",
    ) -> None:
        if self.drop_filter is not None and self.drop_filter(src, dst, kind):
            self.dropped += 1
            return
        arrival = self.sim.now_us + self.model.sample_us(link, self.rng)
        channel = (src, dst)
        previous = self._last_arrival.get(channel, 0)
        if arrival <= previous:
            arrival = previous + 1
        self._last_arrival[channel] = arrival
        self.sim.schedule(arrival, kind, action, note)


def inject_fault(
    sim: Simulator,
    registry: dict[str, "FaultableNode"],
    node_id: str,
    mode: str,
    at_us: int,
) -> None:
    """Flip a node's behavior at a virtual instant."""
    if node_id not in registry:
        raise UnknownNodeError(f"no node {node_id!r}")
    if mode not in ("crash", "byzantine", "honest"):
        raise ParameterError(f"unknown fault mode {mode!r}")
    node = registry[node_id]
    sim.schedule(
        at_us,
        "fault",
        lambda: setattr(node, "fault_mode", mode),
        note=f"{node_id}:{mode}",
    )


class FaultableNode:
    """Anything with a mutable fault_mode attribute; structural helper."""

    fault_mode: str = "honest"
