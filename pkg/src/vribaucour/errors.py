"""Exception hierarchy shared by all modules.

Each class carries a distinct exit code so the command line front end can map
failures without inspecting messages.
"""


class RibaucourError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class SchemaError(RibaucourError, ValueError):
    """Malformed input: wrong shapes, missing fields, bad values."""

    exit_code = 2


class SpectrumClash(RibaucourError):
    """Two eigenvalues of the operator sum to (numerically) zero."""

    exit_code = 3


class UnlistedCase(RibaucourError):
    """Curvature pair not covered by the explicit eigenvalue classification."""

    exit_code = 2


class NotAdmissibleSpectrum(RibaucourError):
    """Some eigenvalue admits no admissible triple for the curvature pair."""

    exit_code = 2


class NotCompatible(RibaucourError):
    """Input data fails a compatibility condition at the base node."""

    exit_code = 2


class ConstraintError(RibaucourError):
    """A pointwise algebraic constraint is violated."""

    exit_code = 1


class DuplicateOperator(RibaucourError):
    """Two scalar transforms of a cube share the same operator."""

    exit_code = 2


class SplitMismatch(RibaucourError):
    """Index split of a vectorial transform does not match its data."""

    exit_code = 2


class SingularOperator(RibaucourError):
    """A matrix that must be inverted is singular at some node."""

    exit_code = 3


class IntegrationDiverged(RibaucourError):
    """A sweep integration produced non-finite or exploding values."""

    exit_code = 3


class IntegrationDrift(RibaucourError):
    """An invariant that should be conserved by integration drifted."""

    exit_code = 1


class InvariantViolation(RibaucourError):
    """A verification check exceeded its tolerance."""

    exit_code = 1


class ConditioningWarning(UserWarning):
    """Result computed, but through a badly conditioned matrix."""
