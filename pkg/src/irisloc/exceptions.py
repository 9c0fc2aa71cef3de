"""Exception hierarchy shared by all irisloc modules."""


class IrisError(Exception):
    """Base class for every error raised by irisloc."""


class ShapeError(IrisError, ValueError):
    """Array or tensor dimensions do not agree."""


class ConfigError(IrisError, ValueError):
    """A parameter or configuration value is out of its valid range."""


class NoForegroundError(IrisError):
    """An operation needed at least one foreground pixel or region."""


class NoIrisError(NoForegroundError):
    """The mask probability map has no confident iris region."""

    reason = "no-iris"


class DegenerateGeometryError(IrisError):
    """Points or circles do not define a usable geometry."""

    reason = "degenerate-geometry"


class InconsistentGeometryError(DegenerateGeometryError):
    """Inner circle is not smaller than the outer circle."""

    reason = "inconsistent-geometry"


class NoOverlapError(IrisError):
    """Two iris templates share no valid bits at any tested shift."""

    reason = "no-overlap"


class FormatError(IrisError, ValueError):
    """A file does not follow its declared on-disk format."""
