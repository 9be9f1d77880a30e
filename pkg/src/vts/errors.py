"""Exception types shared across the solver."""


class VtsError(Exception):
    """Base class for all errors raised by this package."""


class ZeroMatrixPair(VtsError):
    """Both input matrices have zero Frobenius mass."""


class DegeneratePivot(VtsError):
    """|a00|^2 + |b00|^2 is too small after normalization for the loss
    extraction formula to be usable."""


class SingularPencil(VtsError):
    """det(A - lambda*B) is degenerate (identically zero or not of full
    degree), so the pencil has no well-defined spectrum of size N."""


class NoConvergence(VtsError):
    """An iterative routine failed to reach its tolerance."""


class LengthMismatch(VtsError):
    """Two sequences that must have equal length do not."""


class ExhaustedResampling(VtsError):
    """Instance generation did not find an admissible draw within the
    attempt budget."""


class DegenerateAbscissa(VtsError):
    """All x values of a line fit coincide."""


class BadParameterCount(VtsError):
    """Parameter vector length does not match the ansatz shape."""


class IndexOutOfRange(VtsError):
    """Parameter index outside the vector."""


class LayoutMismatch(VtsError):
    """State, program or parameters disagree on the register layout."""


class NotNormalized(VtsError):
    """State or instance does not carry unit probability mass."""


class ImpossibleOutcome(VtsError):
    """Conditioning on a measurement outcome of (near-)zero probability."""


class KindMismatch(VtsError):
    """Problem kind ('gev'/'ev') does not match the operation or the
    parameter vector."""


class NoSuccessfulShots(VtsError):
    """Every sampled run was discarded by the ancilla post-selection."""


class InvalidShiftAngle(VtsError):
    """Shift angle for the four-point derivative rule is a multiple of
    pi/2, where the rule degenerates."""


class DegenerateMass(VtsError):
    """Reference amplitude mass is non-positive."""


class NonPositiveDelta(VtsError):
    """Step size must stay positive."""


class IoFailure(VtsError):
    """Reading or writing a result file failed."""
