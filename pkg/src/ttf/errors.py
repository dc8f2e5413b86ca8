"""Exception types raised across the package.

Everything derives from :class:`TtfError` so callers can catch one base
class at e.g. the CLI boundary.
"""


class TtfError(Exception):
    """Base class for all errors raised by this package."""


# --- dataset / domain ---------------------------------------------------

class ParseError(TtfError):
    """A dataset or config file is malformed."""


class DuplicateObservation(TtfError):
    """Two rows describe the same (channel, activation date, retention day)."""


class RetentionGap(TtfError):
    """A curve is missing a retention day between observed ones (or day 0)."""


class InsufficientHistory(TtfError):
    """A curve is shorter than an operation requires."""


class OutOfRange(TtfError):
    """An index or slice is outside the valid range."""


class MissingCurve(TtfError):
    """A required (channel, activation date) curve is absent."""


# --- preprocessing / model ----------------------------------------------

class InvalidBounds(TtfError):
    """clip() called with a > b."""


class ScaleTooLarge(TtfError):
    """Moving-average scale exceeds the series length."""


class ShapeMismatch(TtfError):
    """Array shapes do not match the configured window geometry."""


class UnknownBackbone(TtfError):
    """Backbone kind is not one of the supported names."""


class InvalidConfig(TtfError):
    """A configuration object violates its invariants."""


# --- training -----------------------------------------------------------

class EmptyDataset(TtfError):
    """Training was asked to run on an empty window set."""


class DivergenceDetected(TtfError):
    """A non-finite loss or target was encountered during training."""


# --- evaluation ---------------------------------------------------------

class EmptyInput(TtfError):
    """A metric was asked to aggregate zero records."""


class AllEntriesDegenerate(TtfError):
    """Every entry of a MAPE computation had a near-zero denominator."""


class DegenerateActual(TtfError):
    """A cumulative-LTV denominator is at or below the degeneracy threshold."""


# --- pipeline ops -------------------------------------------------------

class NoBaseline(TtfError):
    """Drift check requested before a baseline was set."""


class UnknownVersion(TtfError):
    """A hub version id does not exist."""


class NotApproved(TtfError):
    """Operation requires an approved model version."""
