"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
anything else -> 3.
"""

from __future__ import annotations


class RoadRiskError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(RoadRiskError):
    """A configuration value violates an invariant (caught before any work)."""


class DataError(RoadRiskError):
    """Input data is missing, malformed, or inconsistent."""


class KmlParseError(DataError):
    """The road-network KML could not be parsed."""


class WeatherLoadError(DataError):
    """The weather CSV could not be loaded."""


class CollisionLoadError(DataError):
    """The collision CSV could not be loaded."""


class StageOrderError(DataError):
    """A pipeline stage was invoked before the stage it consumes."""
