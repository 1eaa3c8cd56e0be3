"""Feature assembly for (segment, hour) examples.

The default matrix has 15 columns, in this order:

    accident_count        historical collisions on the segment (train window only)
    temperature           interpolated, degrees C
    visibility            interpolated, km
    humidity              interpolated, percent
    pressure              interpolated, kPa
    risky_weather         interpolated risky-phenomena EMA, [0, 1]
    day_of_year_cos/sin   cyclic encoding, period 365.25
    hour_cos/sin          cyclic encoding, period 24
    day_of_week           0 (Monday) .. 6 (Sunday), plain ordinal
    solar_elevation       degrees above the horizon
    street_length_m       segment length
    road_level_encoded    positive-proportion ordinal of the road level
    street_type_encoded   positive-proportion ordinal of the street type

Missing weather stays NaN; the forest routes NaN rows explicitly, so rows are
never dropped for missing weather. Encoders and the accident count are fitted
on the training window only to keep the test window leak-free.
"""

from __future__ import annotations

import math
import re
import unicodedata
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Mapping, Sequence

import numpy as np

from .examples import Example
from .road_network import GeoPoint, RoadNetwork, RoadSegment
from .weather import DEFAULT_CUTOFF_M, DEFAULT_EMA_ALPHA, DEFAULT_IDW_EXPONENT, WeatherTable, interpolate

FEATURE_COLUMNS = (
    "accident_count",
    "temperature",
    "visibility",
    "humidity",
    "pressure",
    "risky_weather",
    "day_of_year_cos",
    "day_of_year_sin",
    "hour_cos",
    "hour_sin",
    "day_of_week",
    "solar_elevation",
    "street_length_m",
    "road_level_encoded",
    "street_type_encoded",
)

DAY_PERIOD = 365.25
HOUR_PERIOD = 24.0
DEFAULT_REF_MERIDIAN_DEG = -75.0  # UTC-5 standard meridian; timestamps are naive local

# field name used by the interpolator, per weather-driven column
_WEATHER_FIELDS = {
    "temperature": "temperature",
    "visibility": "visibility",
    "humidity": "humidity",
    "pressure": "pressure",
    "risky_weather": "risky_ema",
}

STREET_TYPE_TABLE: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("rue", ("rue", "street")),
    ("boulevard", ("boulevard",)),
    ("avenue", ("avenue",)),
    ("autoroute", ("autoroute", "highway")),
    ("chemin", ("chemin", "road")),
    ("montee", ("montee",)),
    ("pont", ("pont", "bridge")),
)
OTHER_STREET_TYPE = "other"


def _strip_diacritics(text: str) -> str:
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch))


def street_type(
    name: str,
    table: tuple[tuple[str, tuple[str, ...]], ...] = STREET_TYPE_TABLE,
) -> str:
    """Coarse street category from the first keyword found in the name.

    Matching is case- and diacritic-insensitive on whole words; names missing
    every keyword (including empty names) fall back to "other".
    """
    words = set(re.findall(r"[a-z0-9]+", _strip_diacritics(name).casefold()))
    for category, keywords in table:
        if any(kw in words for kw in keywords):
            return category
    return OTHER_STREET_TYPE


@dataclass(frozen=True)
class CategoricalMap:
    """Ordinal encoding by ascending positive proportion.

    Unseen levels map to the ordinal of the fitted category with the median
    positive proportion (lower middle for even counts).
    """

    ordinals: Mapping[str, int]
    fallback: int

    def transform(self, value: str) -> int:
        return self.ordinals.get(value, self.fallback)


def fit_categorical(values: Sequence[str], labels: Sequence[int]) -> CategoricalMap:
    """Fit a positive-proportion ordinal encoder.

    Categories are ranked by (positive proportion, name) ascending and get
    0-based ordinals in that order. Raises ValueError on empty input.
    """
    if len(values) != len(labels):
        raise ValueError(f"values ({len(values)}) and labels ({len(labels)}) differ")
    if not values:
        raise ValueError("cannot fit a categorical encoding on no values")
    totals: dict[str, int] = {}
    positives: dict[str, int] = {}
    for v, y in zip(values, labels):
        totals[v] = totals.get(v, 0) + 1
        positives[v] = positives.get(v, 0) + int(y)
    ranked = sorted(totals, key=lambda c: (positives[c] / totals[c], c))
    ordinals = {c: i for i, c in enumerate(ranked)}
    fallback = ordinals[ranked[(len(ranked) - 1) // 2]]
    return CategoricalMap(ordinals=ordinals, fallback=fallback)


def cyclic_encode(value: float, period: float) -> tuple[float, float]:
    """(cos, sin) of the value's phase within the period."""
    angle = 2.0 * math.pi * (value / period)
    return math.cos(angle), math.sin(angle)


def solar_elevation_deg(
    day_of_year: int,
    hour: float,
    p: GeoPoint,
    ref_meridian_deg: float = DEFAULT_REF_MERIDIAN_DEG,
) -> float:
    """Approximate solar elevation in degrees for a naive local-standard hour.

    Declination uses the cosine approximation with the year anchored 10 days
    after the winter solstice; local solar time corrects the wall-clock hour
    by the longitude offset from the reference meridian (15 degrees per hour).
    """
    decl = math.radians(-23.44 * math.cos(2.0 * math.pi * (day_of_year + 10) / 365.0))
    solar_time = hour + (p.lon - ref_meridian_deg) / 15.0
    hour_angle = math.radians(15.0 * (solar_time - 12.0))
    lat = math.radians(p.lat)
    sin_elev = math.sin(lat) * math.sin(decl) + math.cos(lat) * math.cos(decl) * math.cos(
        hour_angle
    )
    return math.degrees(math.asin(max(-1.0, min(1.0, sin_elev))))


def count_positives_by_segment(
    examples: Sequence[Example], window: tuple[datetime, datetime]
) -> dict[str, int]:
    """Positive-example counts per segment within [window start, window end)."""
    start, end = window
    counts: dict[str, int] = {}
    for e in examples:
        if e.label == 1 and start <= e.timestamp < end:
            counts[e.segment_id] = counts.get(e.segment_id, 0) + 1
    return counts


@dataclass(frozen=True)
class FeatureSpec:
    """Feature configuration plus fitted state (encoders, historical counts).

    ``train_window`` is the [start, end) interval whose positives may inform
    features; fit() enforces it so the held-out window never leaks in.
    """

    train_window: tuple[datetime, datetime]
    enabled: tuple[str, ...] = FEATURE_COLUMNS
    ema_alpha: float = DEFAULT_EMA_ALPHA
    idw_exponent: float = DEFAULT_IDW_EXPONENT
    cutoff_m: float = DEFAULT_CUTOFF_M
    ref_meridian_deg: float = DEFAULT_REF_MERIDIAN_DEG
    day_period: float = DAY_PERIOD
    hour_period: float = HOUR_PERIOD
    categorical_maps: Mapping[str, CategoricalMap] = field(default_factory=dict)
    accident_counts: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.train_window[0] >= self.train_window[1]:
            raise ValueError("train_window start must precede its end")
        unknown = [c for c in self.enabled if c not in FEATURE_COLUMNS]
        if unknown:
            raise ValueError(f"unknown feature column(s): {', '.join(unknown)}")
        if len(set(self.enabled)) != len(self.enabled):
            raise ValueError("enabled feature list contains duplicates")

    def to_manifest(self) -> dict:
        return {
            "columns": list(self.enabled),
            "train_window": [t.isoformat() for t in self.train_window],
            "ema_alpha": self.ema_alpha,
            "idw_exponent": self.idw_exponent,
            "cutoff_m": self.cutoff_m,
            "ref_meridian_deg": self.ref_meridian_deg,
            "day_period": self.day_period,
            "hour_period": self.hour_period,
            "categorical_maps": {
                name: {"ordinals": dict(cm.ordinals), "fallback": cm.fallback}
                for name, cm in sorted(self.categorical_maps.items())
            },
        }


def fit(spec: FeatureSpec, examples: Sequence[Example], network: RoadNetwork) -> FeatureSpec:
    """Fit encoders and per-segment accident counts on the training window.

    Only examples inside spec.train_window participate; examples on segments
    absent from the network are ignored here (assemble drops them too).
    """
    start, end = spec.train_window
    train = [
        e
        for e in examples
        if start <= e.timestamp < end and e.segment_id in network.by_id
    ]
    if not train:
        raise ValueError("no training-window examples to fit features on")
    counts = count_positives_by_segment(train, spec.train_window)
    maps: dict[str, CategoricalMap] = {}
    labels = [e.label for e in train]
    if "road_level_encoded" in spec.enabled:
        values = [str(network.by_id[e.segment_id].road_level) for e in train]
        maps["road_level"] = fit_categorical(values, labels)
    if "street_type_encoded" in spec.enabled:
        values = [street_type(network.by_id[e.segment_id].street_name) for e in train]
        maps["street_type"] = fit_categorical(values, labels)
    return replace(spec, categorical_maps=maps, accident_counts=counts)


@dataclass
class FeatureMatrix:
    """Assembled rows: one per surviving example, NaN for missing values."""

    column_names: tuple[str, ...]
    rows: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    row_ids: tuple[tuple[str, datetime], ...] | None = None
    dropped_unknown_segment: int = 0

    def __post_init__(self) -> None:
        n, k = self.rows.shape
        if k != len(self.column_names):
            raise ValueError(f"rows have {k} columns, expected {len(self.column_names)}")
        if not (len(self.labels) == len(self.weights) == n):
            raise ValueError("rows, labels, and weights must align")
        if self.row_ids is not None and len(self.row_ids) != n:
            raise ValueError("row_ids must align with rows")

    def col(self, name: str) -> np.ndarray:
        return self.rows[:, self.column_names.index(name)]

    def subset(self, mask: np.ndarray) -> "FeatureMatrix":
        ids = None
        if self.row_ids is not None:
            ids = tuple(rid for rid, keep in zip(self.row_ids, mask) if keep)
        return FeatureMatrix(
            column_names=self.column_names,
            rows=self.rows[mask],
            labels=self.labels[mask],
            weights=self.weights[mask],
            row_ids=ids,
            dropped_unknown_segment=self.dropped_unknown_segment,
        )


def assemble(
    examples: Sequence[Example],
    network: RoadNetwork,
    weather_table: WeatherTable,
    spec: FeatureSpec,
) -> FeatureMatrix:
    """Build the feature matrix for examples using a fitted spec.

    Examples referencing segments missing from the network are dropped and
    counted in ``dropped_unknown_segment``. Weather columns interpolate over
    the station series (the risky EMA is computed here if absent).
    """
    needs_ema = "risky_weather" in spec.enabled and any(
        s.risky_ema is None for s in weather_table
    )
    if needs_ema:
        weather_table = weather_table.with_ema(spec.ema_alpha)

    per_segment: dict[str, tuple[RoadSegment, dict[str, float]]] = {}
    for seg in network.segments:
        static: dict[str, float] = {"street_length_m": seg.length_m}
        if "road_level_encoded" in spec.enabled:
            static["road_level_encoded"] = float(
                spec.categorical_maps["road_level"].transform(str(seg.road_level))
            )
        if "street_type_encoded" in spec.enabled:
            static["street_type_encoded"] = float(
                spec.categorical_maps["street_type"].transform(street_type(seg.street_name))
            )
        per_segment[seg.segment_id] = (seg, static)

    n_cols = len(spec.enabled)
    out_rows: list[np.ndarray] = []
    labels: list[int] = []
    ids: list[tuple[str, datetime]] = []
    dropped = 0
    weather_cache: dict[tuple[str, datetime, str], float | None] = {}
    for e in examples:
        entry = per_segment.get(e.segment_id)
        if entry is None:
            dropped += 1
            continue
        seg, static = entry
        row = np.full(n_cols, np.nan)
        ts = e.timestamp
        day_of_year = ts.timetuple().tm_yday
        for j, name in enumerate(spec.enabled):
            if name == "accident_count":
                row[j] = float(spec.accident_counts.get(e.segment_id, 0))
            elif name in _WEATHER_FIELDS:
                cache_key = (e.segment_id, ts, name)
                if cache_key in weather_cache:
                    v = weather_cache[cache_key]
                else:
                    v = interpolate(
                        weather_table,
                        seg.midpoint,
                        ts,
                        _WEATHER_FIELDS[name],
                        exponent=spec.idw_exponent,
                        cutoff_m=spec.cutoff_m,
                    )
                    weather_cache[cache_key] = v
                if v is not None:
                    row[j] = v
            elif name == "day_of_year_cos":
                row[j] = cyclic_encode(day_of_year, spec.day_period)[0]
            elif name == "day_of_year_sin":
                row[j] = cyclic_encode(day_of_year, spec.day_period)[1]
            elif name == "hour_cos":
                row[j] = cyclic_encode(ts.hour, spec.hour_period)[0]
            elif name == "hour_sin":
                row[j] = cyclic_encode(ts.hour, spec.hour_period)[1]
            elif name == "day_of_week":
                row[j] = float(ts.weekday())
            elif name == "solar_elevation":
                row[j] = solar_elevation_deg(
                    day_of_year, ts.hour, seg.midpoint, spec.ref_meridian_deg
                )
            else:
                row[j] = static[name]
        out_rows.append(row)
        labels.append(e.label)
        ids.append(e.key)

    rows = np.vstack(out_rows) if out_rows else np.empty((0, n_cols))
    return FeatureMatrix(
        column_names=spec.enabled,
        rows=rows,
        labels=np.asarray(labels, dtype=np.int8),
        weights=np.ones(len(labels)),
        row_ids=tuple(ids),
        dropped_unknown_segment=dropped,
    )
