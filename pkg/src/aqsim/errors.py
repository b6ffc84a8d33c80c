"""Exception hierarchy shared by all aqsim modules."""


class AqsimError(Exception):
    """Base class for all package errors."""


class ConfigError(AqsimError):
    """Invalid or inconsistent configuration input."""


class IoError(AqsimError):
    """Malformed snapshot, config file, or output failure."""


class DimensionMismatch(AqsimError):
    """Operands disagree on Hilbert-space dimension or shape."""


class NotHermitian(AqsimError):
    """Matrix handed to a Hermitian-only routine is not Hermitian."""


class UnsupportedKind(AqsimError):
    """Block kind outside the supported Pauli/phase set."""


class NonRealCoefficient(AqsimError):
    """Second-quantized term coefficient is neither real nor purely imaginary."""


class EmptyDecomposition(AqsimError):
    """Hamiltonian decomposes to no blocks (zero matrix)."""


class AllCountsZero(AqsimError):
    """Readout requested from a bubble with no net amplitude anywhere."""


class CountOverflow(AqsimError):
    """A per-type count exceeded the configured cap."""


class EscapedQuantum(AqsimError):
    """A quantum left the bubble geometry; the step size is too large."""


class Timeout(AqsimError):
    """Tick budget exhausted before the requested condition was reached."""


class AlreadyReal(AqsimError):
    """Arrival processed on a virtual state that has already completed."""


class InvalidOutcome(AqsimError):
    """Rebuild requested for an outcome with zero probability weight."""


class EmptyBubble(AqsimError):
    """Membrane update would remove the last interior grain."""


class NoSplit(AqsimError):
    """Split detection found a single connected component."""


class NoTouchingArea(AqsimError):
    """Coupling requested between bubbles that do not touch."""


class SpectatorMismatch(AqsimError):
    """Chain rule would alter particles outside its declared slots."""


class DegenerateExpected(AqsimError):
    """Chi-square expectation has empty bins or zero total."""


class TooFewWorkers(AqsimError):
    """Partitioned run needs more workers than configured."""


class CannotDelete(AqsimError):
    """Replenishment cannot delete a (+,-) pair.

    Defined for contract completeness; deletions always remove one quantum of
    each sign, so this is never raised by the shipped code paths.
    """
