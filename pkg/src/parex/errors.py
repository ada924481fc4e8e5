"""Exception hierarchy shared across the protocol library and the simulator."""


class ParexError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(ParexError, ValueError):
    """An argument is outside its documented domain."""


class MembershipError(ParexError):
    """A signer or node is not part of the referenced list."""


class DuplicateSignerError(ParexError):
    """The same signer contributed twice to one aggregate."""


class ShapeError(ParexError):
    """A bitmap or share vector does not match its expected length."""


class ReconstructionError(ParexError):
    """Too few shares survive to reconstruct a withheld secret."""


class RegistrationError(ParexError):
    """An identity is already registered on the ledger."""


class UnreachableTargetError(ParexError):
    """No finite group size can reach the requested failure probability."""


class SchedulingError(ParexError):
    """An event was scheduled before the current virtual time."""


class UnknownNodeError(ParexError):
    """A fault was injected on a node id that does not exist."""


class SequenceGapError(ParexError):
    """A block arrived ahead of the next expected sequence number."""

    def __init__(self, expected: int, observed: int):
        super().__init__(f"expected sequence {expected}, observed {observed}")
        self.expected = expected
        self.observed = observed


class CertificateError(ParexError):
    """A commit certificate failed verification."""


class DisputeError(ParexError):
    """No execution result reached the decision threshold for a block."""


class StorageError(ParexError):
    """Base class for distributed-storage failures."""


class NotFoundError(StorageError):
    """The requested object id is not stored in the shard."""


class AvailabilityError(StorageError):
    """No quorum of consistent replies could be assembled."""


class TraceFormatError(ParexError):
    """A workload trace file line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ConfigError(ParexError):
    """An experiment configuration is inconsistent or incomplete."""
