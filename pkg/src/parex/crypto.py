"""Hashing and an aggregatable signature scheme with participation bitmaps.

Consensus nodes certify transaction blocks and group leaders combine
execution-node signatures into one compact object, so the scheme exposes
``key_gen`` / ``sign`` / ``aggregate`` / ``verify_aggregate`` plus a bitmap
saying which signers of a known list participated.

The default backend is a deterministic mock: a signature is a keyed digest
of (secret key, message) and an aggregate is a digest over the sorted
constituent signatures.  Verification re-derives every flagged signer's
signature, so it answers exactly the question the protocol cares about,
namely *who signed what*.  A pairing-based backend can be swapped in behind
the same interface without touching any caller.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DuplicateSignerError, MembershipError, ShapeError

DIGEST_SIZE = 32


def hash_bytes(data: bytes) -> bytes:
    """SHA-256, the single hash function used by every protocol component."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True, slots=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes


@dataclass(frozen=True, slots=True)
class Signature:
    value: bytes
    signer: bytes  # public key of the signer


@dataclass(frozen=True, slots=True)
class MultiSignature:
    value: bytes
    bitmap: tuple[bool, ...]

    def signer_count(self) -> int:
        return sum(self.bitmap)


class MockBackend:
    """Deterministic stand-in for a pairing-based multisignature scheme.

    ``key_gen`` records the secret key under its public key so that
    verification can re-derive signatures.  The keyring is append-only;
    values are immutable and freely shareable.
    """

    def __init__(self) -> None:
        self._keyring: dict[bytes, bytes] = {}

    def key_gen(self, seed: int) -> KeyPair:
        sk = hash_bytes(b"parex/sk" + seed.to_bytes(8, "big"))
        pk = hash_bytes(b"parex/pk" + sk)
        self._keyring[pk] = sk
        return KeyPair(public_key=pk, secret_key=sk)

    def sign(self, kp: KeyPair, msg: bytes) -> Signature:
        value = hash_bytes(b"parex/sig" + kp.secret_key + hash_bytes(msg))
        return Signature(value=value, signer=kp.public_key)

    def verify(self, public_key: bytes, msg: bytes, sig: Signature) -> bool:
        sk = self._keyring.get(public_key)
        if sk is None:
            return False
        expected = hash_bytes(b"parex/sig" + sk + hash_bytes(msg))
        return expected == sig.value

    def aggregate(
        self, sigs: Sequence[Signature], signer_list: Sequence[bytes]
    ) -> MultiSignature:
        if not sigs:
            raise ShapeError("cannot aggregate an empty signature list")
        seen: set[bytes] = set()
        bitmap = [False] * len(signer_list)
        index = {pk: i for i, pk in enumerate(signer_list)}
        for sig in sigs:
            if sig.signer not in index:
                raise MembershipError(f"signer {sig.signer.hex()[:16]} not in list")
            if sig.signer in seen:
                raise DuplicateSignerError(
                    f"signer {sig.signer.hex()[:16]} appears twice"
                )
            seen.add(sig.signer)
            bitmap[index[sig.signer]] = True
        return MultiSignature(
            value=_combine(s.value for s in sigs), bitmap=tuple(bitmap)
        )

    def verify_aggregate(
        self, signer_list: Sequence[bytes], msig: MultiSignature, msg: bytes
    ) -> bool:
        if len(msig.bitmap) != len(signer_list):
            raise ShapeError(
                f"bitmap length {len(msig.bitmap)} != signer list {len(signer_list)}"
            )
        values = []
        for pk, flagged in zip(signer_list, msig.bitmap):
            if not flagged:
                continue
            sk = self._keyring.get(pk)
            if sk is None:
                return False
            values.append(hash_bytes(b"parex/sig" + sk + hash_bytes(msg)))
        if not values:
            return False
        return _combine(values) == msig.value


def _combine(values: Iterable[bytes]) -> bytes:
    # Sorted so the aggregate is independent of signing order, mirroring a
    # commutative product of group elements.
    h = hashlib.sha256(b"parex/agg")
    for v in sorted(values):
        h.update(v)
    return h.digest()


_DEFAULT = MockBackend()


def default_backend() -> MockBackend:
    return _DEFAULT


def key_gen(seed: int, backend: MockBackend | None = None) -> KeyPair:
    """Derive a key pair from a 64-bit seed, deterministically."""
    return (backend or _DEFAULT).key_gen(seed)


def sign(kp: KeyPair, msg: bytes, backend: MockBackend | None = None) -> Signature:
    return (backend or _DEFAULT).sign(kp, msg)


def verify(
    public_key: bytes,
    msg: bytes,
    sig: Signature,
    backend: MockBackend | None = None,
) -> bool:
    return (backend or _DEFAULT).verify(public_key, msg, sig)


def aggregate(
    sigs: Sequence[Signature],
    signer_list: Sequence[bytes],
    backend: MockBackend | None = None,
) -> MultiSignature:
    """Combine signatures over one message into a multisignature with bitmap."""
    return (backend or _DEFAULT).aggregate(sigs, signer_list)


def verify_aggregate(
    signer_list: Sequence[bytes],
    msig: MultiSignature,
    msg: bytes,
    backend: MockBackend | None = None,
) -> bool:
    """True iff every bitmap-flagged signer signed exactly ``msg``."""
    return (backend or _DEFAULT).verify_aggregate(signer_list, msig, msg)
