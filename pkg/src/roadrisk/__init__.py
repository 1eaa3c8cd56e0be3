"""Hourly road-segment collision risk: data prep, balanced forests, evaluation."""

from .errors import (
    CollisionLoadError,
    ConfigError,
    DataError,
    KmlParseError,
    RoadRiskError,
    StageOrderError,
    WeatherLoadError,
)

__version__ = "0.1.0"

__all__ = [
    "CollisionLoadError",
    "ConfigError",
    "DataError",
    "KmlParseError",
    "RoadRiskError",
    "StageOrderError",
    "WeatherLoadError",
    "__version__",
]
