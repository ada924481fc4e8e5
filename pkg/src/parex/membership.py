"""Identity ledger, beacon-driven group construction, and group-size math.

Participants register with a deposit and are ranked by it.  Execution
groups are rebuilt each epoch by hashing the beacon output with each public
key; the deepest-pocketed member of each group is its leader.  The module
also computes, exactly, the probability that random sampling hands an
adversary control of a group, for both the one-third (BFT-style) and the
majority (2f'+1 voting) fault thresholds.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

from .crypto import hash_bytes
from .errors import ParameterError, RegistrationError, UnreachableTargetError

AlphaLike = Union[Fraction, float, int, str]


@dataclass(frozen=True, slots=True)
class Identity:
    public_key: bytes
    deposit: int
    consensus_eligible: bool = True
    execution_eligible: bool = True


def _rank_key(ident: Identity) -> tuple[int, bytes]:
    # Deposit descending; lexicographic public key breaks ties.
    return (-ident.deposit, ident.public_key)


@dataclass(frozen=True)
class IdentityLedger:
    """Immutable snapshot of registered identities, deposit-descending."""

    identities: tuple[Identity, ...] = ()

    def __contains__(self, public_key: bytes) -> bool:
        return any(i.public_key == public_key for i in self.identities)

    def __len__(self) -> int:
        return len(self.identities)

    def execution_members(self) -> tuple[Identity, ...]:
        return tuple(i for i in self.identities if i.execution_eligible)


def register(
    ledger: IdentityLedger,
    public_key: bytes,
    deposit: int,
    *,
    consensus_eligible: bool = True,
    execution_eligible: bool = True,
) -> IdentityLedger:
    """Add an identity; the stored order stays deposit-descending."""
    if deposit <= 0:
        raise ParameterError("deposit must be positive")
    if public_key in ledger:
        raise RegistrationError(f"key {public_key.hex()[:16]} already registered")
    ident = Identity(public_key, deposit, consensus_eligible, execution_eligible)
    ordered = sorted(ledger.identities + (ident,), key=_rank_key)
    return IdentityLedger(identities=tuple(ordered))


@dataclass(frozen=True)
class GroupAssignment:
    epoch: int
    groups: tuple[tuple[bytes, ...], ...]

    def group_of(self, public_key: bytes) -> int:
        for i, group in enumerate(self.groups):
            if public_key in group:
                return i
        raise ParameterError(f"key {public_key.hex()[:16]} not assigned")

    def leader(self, index: int) -> bytes:
        return self.groups[index][0]


def _group_index(r: bytes, public_key: bytes, m: int) -> int:
    return int.from_bytes(hash_bytes(r + public_key), "big") % m


def shuffle(members: Sequence[Identity], m: int, r: bytes, epoch: int = 0) -> GroupAssignment:
    """Partition members into m groups keyed by hash(r || pk) mod m.

    Within each group members are ordered deposit-descending (public key
    breaks ties), so index 0 is the leader.
    """
    if m < 1:
        raise ParameterError("group count must be >= 1")
    buckets: list[list[Identity]] = [[] for _ in range(m)]
    for ident in members:
        buckets[_group_index(r, ident.public_key, m)].append(ident)
    groups = tuple(
        tuple(i.public_key for i in sorted(bucket, key=_rank_key))
        for bucket in buckets
    )
    return GroupAssignment(epoch=epoch, groups=groups)


def rotate_epoch(
    assignment: GroupAssignment,
    ledger: IdentityLedger,
    r: bytes,
    rotation_fraction: float,
) -> GroupAssignment:
    """Reshuffle only the ceil(fraction * total) members with lowest hash(r || pk).

    Members not selected keep their current group; newly registered members
    always join via the shuffle rule.  Leader ranks are recomputed from
    deposits afterwards.
    """
    if not 0 < rotation_fraction <= 1:
        raise ParameterError("rotation fraction must be in (0, 1]")
    members = ledger.execution_members()
    by_key = {i.public_key: i for i in members}
    total = len(members)
    count = -(-int(rotation_fraction * total * 10**9) // 10**9)  # ceil without float drift
    count = min(max(count, 1 if total else 0), total)

    ranked = sorted(members, key=lambda i: (hash_bytes(r + i.public_key), i.public_key))
    selected = {i.public_key for i in ranked[:count]}

    m = len(assignment.groups)
    buckets: list[list[Identity]] = [[] for _ in range(m)]
    assigned: set[bytes] = set()
    for gi, group in enumerate(assignment.groups):
        for pk in group:
            ident = by_key.get(pk)
            if ident is None or pk in selected:
                continue
            buckets[gi].append(ident)
            assigned.add(pk)
    for ident in members:
        if ident.public_key in selected or ident.public_key not in assigned:
            buckets[_group_index(r, ident.public_key, m)].append(ident)
    groups = tuple(
        tuple(i.public_key for i in sorted(set(bucket), key=_rank_key))
        for bucket in buckets
    )
    return GroupAssignment(epoch=assignment.epoch + 1, groups=groups)


class ThresholdFamily(enum.Enum):
    """How many faults it takes to break a group of size n."""

    ONE_THIRD = "third"
    MAJORITY = "majority"

    def fault_threshold(self, n: int) -> int:
        if self is ThresholdFamily.ONE_THIRD:
            return -(-n // 3)  # ceil(n/3)
        return -(-n // 2)  # ceil(n/2)

    @property
    def fraction(self) -> Fraction:
        return Fraction(1, 3) if self is ThresholdFamily.ONE_THIRD else Fraction(1, 2)


def _as_fraction(alpha: AlphaLike) -> Fraction:
    # Floats go through str() so 0.25 means 1/4 and 0.1 means 1/10, exactly.
    if isinstance(alpha, float):
        return Fraction(str(alpha))
    return Fraction(alpha)


def group_failure_prob(n: int, alpha: AlphaLike, family: ThresholdFamily) -> Fraction:
    """Exact probability that >= threshold members of a random group are faulty.

    Each member is independently adversarial with probability alpha, so the
    fault count is binomial; the tail is summed with integer arithmetic
    (no floating point, no overflow for any practical n).
    """
    if n < 1:
        raise ParameterError("group size must be >= 1")
    a = _as_fraction(alpha)
    if not 0 <= a <= 1:
        raise ParameterError(f"alpha {alpha} outside [0, 1]")
    if a == 0:
        return Fraction(0)
    if a == 1:
        return Fraction(1)
    threshold = family.fault_threshold(n)
    num, den = a.numerator, a.denominator
    comp = den - num
    below = 0
    term = comp**n  # C(n,0) * num^0 * comp^n
    for k in range(threshold):
        below += term
        term = term * (n - k) * num // ((k + 1) * comp)
    d = den**n
    return Fraction(d - below, d)


def min_group_size(
    alpha: AlphaLike,
    family: ThresholdFamily,
    target_prob: AlphaLike,
    *,
    max_n: int = 100_000,
) -> int:
    """Smallest group size whose failure probability is below the target."""
    a = _as_fraction(alpha)
    target = _as_fraction(target_prob)
    if not 0 < target < 1:
        raise ParameterError("target probability must be in (0, 1)")
    if a >= family.fraction:
        raise UnreachableTargetError(
            f"alpha {a} >= {family.fraction}: tail does not vanish with group size"
        )
    for n in range(1, max_n + 1):
        if group_failure_prob(n, a, family) < target:
            return n
    raise UnreachableTargetError(f"no group size <= {max_n} reaches {target}")
