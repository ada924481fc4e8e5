"""Commit-then-reveal distributed randomness over n simulated participants.

Every participant commits to a 32-byte secret, splits it into n Shamir
shares with threshold f+1, and later reveals.  Withholders cannot bias the
output: the honest majority reconstructs their secrets from shares, and the
final value is the XOR of all n secrets, so it equals the zero-withholder
output byte for byte.

Secrets are split into sixteen 16-bit limbs shared independently over the
Fermat prime 65537.  Every 16-bit value is strictly below the modulus, so
arbitrary 32-byte secrets round-trip exactly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .crypto import hash_bytes
from .errors import ParameterError, ReconstructionError, ShapeError

PRIME = 65537
LIMB_BYTES = 2
SECRET_BYTES = 32
LIMBS = SECRET_BYTES // LIMB_BYTES


def commit(secret: bytes) -> bytes:
    """Binding commitment to a secret: its SHA-256 digest."""
    return hash_bytes(secret)


def _poly_eval(coeffs: Sequence[int], x: int) -> int:
    y = 0
    for c in reversed(coeffs):
        y = (y * x + c) % PRIME
    return y


def share_secret(secret: int, n: int, threshold: int, rng_seed: int) -> list[int]:
    """Split one field element into n shares; any `threshold` reconstruct it."""
    if not 0 <= secret < PRIME:
        raise ParameterError(f"secret {secret} outside field [0, {PRIME})")
    if n < 1 or threshold < 1 or threshold > n:
        raise ParameterError(f"invalid sharing parameters n={n} threshold={threshold}")
    rng = random.Random(rng_seed)
    coeffs = [secret] + [rng.randrange(PRIME) for _ in range(threshold - 1)]
    return [_poly_eval(coeffs, x) for x in range(1, n + 1)]


def reconstruct_secret(points: Sequence[tuple[int, int]]) -> int:
    """Lagrange interpolation at zero from (x, share) pairs."""
    if not points:
        raise ParameterError("no shares given")
    if len({x for x, _ in points}) != len(points):
        raise ParameterError("duplicate share indices")
    total = 0
    xs = [x for x, _ in points]
    for xi, yi in points:
        num, den = 1, 1
        for xj in xs:
            if xj == xi:
                continue
            num = num * (-xj) % PRIME
            den = den * (xi - xj) % PRIME
        total = (total + yi * num * pow(den, PRIME - 2, PRIME)) % PRIME
    return total


def share_bytes(secret: bytes, n: int, threshold: int, rng_seed: int) -> list[tuple[int, ...]]:
    """Share a 32-byte secret limb-wise; returns one share vector per node."""
    if len(secret) != SECRET_BYTES:
        raise ShapeError(f"secret must be {SECRET_BYTES} bytes, got {len(secret)}")
    limbs = [
        int.from_bytes(secret[i * LIMB_BYTES : (i + 1) * LIMB_BYTES], "big")
        for i in range(LIMBS)
    ]
    per_limb = [
        share_secret(limb, n, threshold, rng_seed * LIMBS + j)
        for j, limb in enumerate(limbs)
    ]
    return [tuple(per_limb[j][i] for j in range(LIMBS)) for i in range(n)]


def reconstruct_bytes(points: Sequence[tuple[int, Sequence[int]]]) -> bytes:
    """Inverse of share_bytes from any threshold-many (x, share vector) pairs."""
    out = bytearray()
    for j in range(LIMBS):
        limb = reconstruct_secret([(x, vec[j]) for x, vec in points])
        if limb >= 1 << (8 * LIMB_BYTES):
            raise ReconstructionError(f"limb {j} reconstructed outside 16-bit range")
        out += limb.to_bytes(LIMB_BYTES, "big")
    return bytes(out)


@dataclass(frozen=True, slots=True)
class BeaconTranscript:
    """Everything a third party needs to re-verify one beacon round."""

    participants: tuple[bytes, ...]
    commitments: tuple[bytes, ...]
    shares: tuple[tuple[tuple[int, ...], ...], ...]  # shares[i][j]: node i's secret, share for node j
    reveals: tuple[bytes | None, ...]
    secrets: tuple[bytes, ...]  # revealed or reconstructed
    output: bytes


def run_beacon(
    participants: Sequence[bytes],
    f: int,
    withholding_set: Sequence[int] = (),
    rng_seed: int = 0,
) -> BeaconTranscript:
    """One beacon round: commit, share with threshold f+1, reveal, reconstruct.

    ``withholding_set`` lists participant indices that refuse to reveal.
    Their secrets are rebuilt from the shares held by the remaining nodes,
    which exist as long as at least f+1 nodes stay honest.
    """
    n = len(participants)
    if n < 1:
        raise ParameterError("at least one participant required")
    if f < 0 or f >= n:
        raise ParameterError(f"f={f} must satisfy 0 <= f < n={n}")
    withhold = set(withholding_set)
    if not withhold <= set(range(n)):
        raise ParameterError("withholding set references unknown participant")
    threshold = f + 1
    honest = [j for j in range(n) if j not in withhold]
    if len(honest) < threshold:
        raise ReconstructionError(
            f"{len(withhold)} withholders leave {len(honest)} nodes, "
            f"below sharing threshold {threshold}"
        )

    secrets = [
        hash_bytes(b"parex/beacon" + rng_seed.to_bytes(8, "big") + i.to_bytes(4, "big"))
        for i in range(n)
    ]
    commitments = [commit(s) for s in secrets]
    shares = [
        tuple(share_bytes(secrets[i], n, threshold, rng_seed * n + i))
        for i in range(n)
    ]

    reveals: list[bytes | None] = []
    effective: list[bytes] = []
    for i in range(n):
        if i in withhold:
            reveals.append(None)
            points = [(j + 1, shares[i][j]) for j in honest[:threshold]]
            effective.append(reconstruct_bytes(points))
        else:
            reveals.append(secrets[i])
            effective.append(secrets[i])

    output = bytes(SECRET_BYTES)
    for s in effective:
        output = bytes(a ^ b for a, b in zip(output, s))

    return BeaconTranscript(
        participants=tuple(participants),
        commitments=tuple(commitments),
        shares=tuple(shares),
        reveals=tuple(reveals),
        secrets=tuple(effective),
        output=output,
    )


def verify_transcript(t: BeaconTranscript) -> bool:
    """Third-party check: commitments bind the secrets, output is their XOR."""
    n = len(t.participants)
    if not (len(t.commitments) == len(t.reveals) == len(t.secrets) == n):
        return False
    if len(t.shares) != n or any(len(row) != n for row in t.shares):
        return False
    for i in range(n):
        if commit(t.secrets[i]) != t.commitments[i]:
            return False
        if t.reveals[i] is not None and t.reveals[i] != t.secrets[i]:
            return False
        if t.reveals[i] is None:
            # Withheld: the claimed secret must match what the shares rebuild.
            # All honest points lie on the same low-degree polynomial, so
            # interpolating through every one of them is exact.
            points = [(j + 1, t.shares[i][j]) for j in range(n) if t.reveals[j] is not None]
            if not points:
                return False
            try:
                rebuilt = reconstruct_bytes(points)
            except ReconstructionError:
                return False
            if rebuilt != t.secrets[i]:
                return False
    expected = bytes(SECRET_BYTES)
    for s in t.secrets:
        expected = bytes(a ^ b for a, b in zip(expected, s))
    return expected == t.output
