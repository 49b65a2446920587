"""Exception taxonomy shared across the toolkit.

Three broad families map onto the CLI exit codes: configuration problems
(exit 1), data problems (exit 2), and verification failures (exit 3).
"""

from __future__ import annotations


class ForgeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ForgeError):
    """Invalid configuration, missing files referenced by config, bad flags."""

    exit_code = 1


class DataError(ForgeError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class VerificationError(ForgeError):
    """A declared check (manifest row, budget, plan validation) failed."""

    exit_code = 3


# -- geometry ----------------------------------------------------------------

class BoxError(DataError):
    pass


class InvertedBoxError(BoxError):
    """x1 > x2 or y1 > y2."""


class OutOfBoundsError(BoxError):
    """Coordinate outside the owning image (or grid) extent."""


class NonIntegerGridCoordinateError(BoxError):
    """Grid-space coordinate is not an integer."""


# -- ingest ------------------------------------------------------------------

class MalformedJsonError(DataError):
    pass


class MalformedRecordError(DataError):
    pass


class DanglingCategoryIdError(DataError):
    pass


class DanglingImageIdError(DataError):
    pass


class EmptyExpressionError(DataError):
    pass


class HasImageInTextSourceError(DataError):
    """A text-only source record unexpectedly carries an image field."""


# -- curation / consolidation -------------------------------------------------

class NoRegionsError(DataError):
    pass


class UnresolvedSourceError(ConfigError):
    """A mix entry matched no input stream and has a nonzero quota."""


# -- conversation protocol -----------------------------------------------------

class MissingTemplateError(ConfigError):
    pass


class NoBoxesFoundError(DataError):
    """Localization parse found no bracket group at all."""


# -- evaluation ----------------------------------------------------------------

class MissingQueryError(DataError):
    """Ground truth query without any prediction record."""


# -- planner -------------------------------------------------------------------

class UnknownScaleError(ConfigError):
    pass


class NotDivisibleError(DataError):
    pass


class DegenerateGridError(DataError):
    pass
