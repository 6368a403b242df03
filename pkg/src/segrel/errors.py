"""Exception types shared across the toolkit.

Plain ``ValueError`` is used for argument-contract violations (mismatched
shapes, out-of-range parameters). The classes below distinguish failure
modes that callers handle differently: skipping a sample, aborting a run,
or reporting a degraded result.
"""


class SegrelError(Exception):
    """Base class for toolkit-specific errors."""


class FormatError(SegrelError):
    """A file or payload does not match its declared format."""


class CapacityError(FormatError):
    """Declared dimensions exceed what will be allocated."""


class DataError(SegrelError):
    """Well-formed input carries out-of-contract values (e.g. a class id
    outside the declared range)."""


class EmptyInputError(SegrelError):
    """The operation needs at least one element and got none."""


class DegenerateInputError(SegrelError):
    """Input admits no meaningful result (e.g. a one-sided score set)."""


class ZeroVarianceError(DegenerateInputError):
    """A statistic is undefined because an input vector is constant."""


class UndefinedResultError(SegrelError):
    """Every component of the requested aggregate is undefined."""


class GeometryError(SegrelError):
    """Requested geometry cannot be satisfied by the given image."""


class TransportError(SegrelError):
    """The generative service is unreachable or persistently failing."""


class RejectionError(SegrelError):
    """A generated sample failed a quality gate and was discarded."""


class ConsistencyError(SegrelError):
    """Cross-file references disagree (unknown ids, mismatched sets)."""
