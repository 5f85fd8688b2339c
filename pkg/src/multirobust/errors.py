"""Exception hierarchy shared across the toolkit.

Every error class carries a stable ``tag`` used in machine-readable output and
a distinct ``exit_code`` used by the command line interface, so callers can
branch on the failure class without parsing messages.
"""

from __future__ import annotations


class MultirobustError(Exception):
    """Base class for all toolkit errors."""

    tag = "Internal"
    exit_code = 1


class InvalidInputError(MultirobustError):
    """Malformed configuration, file, or argument."""

    tag = "InvalidInput"
    exit_code = 2


class EmptyGroupError(MultirobustError):
    """The treated or the control group has no members."""

    tag = "EmptyGroup"
    exit_code = 3


class NonBinaryTreatmentError(MultirobustError):
    """A treatment entry is neither 0 nor 1."""

    tag = "NonBinaryTreatment"
    exit_code = 4


class NonFiniteError(MultirobustError):
    """Non-finite values where finite numbers are required."""

    tag = "NonFinite"
    exit_code = 5


class DimensionMismatchError(MultirobustError):
    """Arrays that must align row-for-row do not."""

    tag = "DimensionMismatch"
    exit_code = 6


class NonConvergenceError(MultirobustError):
    """The calibration solver exhausted its iteration budget.

    Typically raised when no feasible reweighting exists, i.e. zero lies
    outside the convex hull of the group's constraint rows.
    """

    tag = "NonConvergence"
    exit_code = 7

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class SingularSystemError(MultirobustError):
    """A linear solve inside an iterative routine failed."""

    tag = "SingularSystem"
    exit_code = 8


class DegeneratePSError(MultirobustError):
    """Propensity values unusable for inverse weighting even after clipping."""

    tag = "DegeneratePS"
    exit_code = 9


class TooManyFailuresError(MultirobustError):
    """More than the tolerated share of bootstrap replicates failed."""

    tag = "TooManyFailures"
    exit_code = 10


class OneClassOnlyError(MultirobustError):
    """A ranking metric was requested but only one class is present."""

    tag = "OneClassOnly"
    exit_code = 11


class SingularDesignError(MultirobustError):
    """A regression design matrix is rank deficient and unregularized."""

    tag = "SingularDesign"
    exit_code = 12


class OracleUnavailableError(MultirobustError):
    """An oracle learner was requested outside a simulation context."""

    tag = "OracleUnavailable"
    exit_code = 13


class ImbalanceExhaustedError(MultirobustError):
    """Repeated draws never produced an acceptably balanced design."""

    tag = "ImbalanceExhausted"
    exit_code = 14


class AllReplicationsFailedError(MultirobustError):
    """Every replication of a Monte Carlo arm failed."""

    tag = "AllReplicationsFailed"
    exit_code = 15


ERROR_CLASSES = (
    InvalidInputError,
    EmptyGroupError,
    NonBinaryTreatmentError,
    NonFiniteError,
    DimensionMismatchError,
    NonConvergenceError,
    SingularSystemError,
    DegeneratePSError,
    TooManyFailuresError,
    OneClassOnlyError,
    SingularDesignError,
    OracleUnavailableError,
    ImbalanceExhaustedError,
    AllReplicationsFailedError,
)

EXIT_CODES = {cls.tag: cls.exit_code for cls in ERROR_CLASSES}
