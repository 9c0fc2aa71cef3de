"""Iris localization from multi-task probability maps, with the matching
losses, recognition tail and evaluation protocols."""
from .estimators import IrisEncoder, IrisLocalizer
from .exceptions import (
    ConfigError,
    DegenerateGeometryError,
    InconsistentGeometryError,
    IrisError,
    NoForegroundError,
    NoIrisError,
    NoOverlapError,
    ShapeError,
)
from .imaging import Circle, Region
from .localization import BoundaryRange, LocalizationParams, LocalizationResult, PolarContour, ProbMapSet, localize
from .recognition import IrisTemplate, MatchScore, NormalizedIris, VerificationStats

__version__ = "0.1.0"

__all__ = [
    "BoundaryRange",
    "Circle",
    "ConfigError",
    "DegenerateGeometryError",
    "InconsistentGeometryError",
    "IrisEncoder",
    "IrisError",
    "IrisLocalizer",
    "IrisTemplate",
    "LocalizationParams",
    "LocalizationResult",
    "MatchScore",
    "NoForegroundError",
    "NoIrisError",
    "NoOverlapError",
    "NormalizedIris",
    "PolarContour",
    "ProbMapSet",
    "Region",
    "ShapeError",
    "VerificationStats",
    "localize",
]
