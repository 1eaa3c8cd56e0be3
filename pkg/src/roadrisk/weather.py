"""Hourly weather series: parsing, risky-phenomena smoothing, spatial interpolation.

Stations report hourly observations; any field can be missing at any hour.
A grid cell's weather is an inverse-distance-weighted average over stations
within a cutoff radius. The "risky weather" signal is a binary flag over a
fixed list of winter/ice phenomena, smoothed per station with an hourly
exponential moving average before interpolation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from datetime import datetime
from typing import Iterator, Mapping

from .errors import WeatherLoadError
from .road_network import GeoPoint, haversine_m

DEFAULT_EMA_ALPHA = 0.5
DEFAULT_CUTOFF_M = 50_000.0
DEFAULT_IDW_EXPONENT = 2.0
DISTANCE_FLOOR_M = 1.0

RISKY_PHENOMENA = frozenset(
    {
        "freezing rain",
        "freezing drizzle",
        "snow",
        "snow grains",
        "ice crystals",
        "ice pellets",
        "ice pellet showers",
        "snow showers",
        "snow pellets",
        "ice fog",
        "drifting snow",
        "blowing snow",
    }
)

# semantic field name -> HourlyObservation attribute
FIELD_ATTRS = {
    "temperature": "temperature_c",
    "dew_point": "dew_point_c",
    "humidity": "humidity_pct",
    "wind_dir": "wind_dir_deg",
    "wind_speed": "wind_speed_kmh",
    "visibility": "visibility_km",
    "pressure": "pressure_kpa",
    "hmdx": "hmdx",
    "wind_chill": "wind_chill",
}

MANDATORY_COLUMNS = ("station_id", "timestamp", "latitude", "longitude")

DEFAULT_WEATHER_COLUMNS: dict[str, str] = {
    "station_id": "station_id",
    "timestamp": "timestamp",
    "latitude": "latitude",
    "longitude": "longitude",
    "temperature": "temperature",
    "dew_point": "dew_point",
    "humidity": "humidity",
    "wind_dir": "wind_dir",
    "wind_speed": "wind_speed",
    "visibility": "visibility",
    "pressure": "pressure",
    "hmdx": "hmdx",
    "wind_chill": "wind_chill",
    "phenomena": "phenomena",
}

_MISSING_TOKENS = frozenset({"", "na", "nan", "none", "null", "m"})


def _normalize_label(label: str) -> str:
    return " ".join(label.casefold().split())


@dataclass(frozen=True)
class HourlyObservation:
    """One station-hour of weather. Missing numeric fields are None."""

    station_id: str
    timestamp: datetime
    temperature_c: float | None = None
    dew_point_c: float | None = None
    humidity_pct: float | None = None
    wind_dir_deg: float | None = None
    wind_speed_kmh: float | None = None
    visibility_km: float | None = None
    pressure_kpa: float | None = None
    hmdx: float | None = None
    wind_chill: float | None = None
    phenomena: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ts = self.timestamp
        if ts.minute or ts.second or ts.microsecond:
            raise ValueError(f"timestamp {ts.isoformat()} is not on the hour")
        if self.humidity_pct is not None and not 0.0 <= self.humidity_pct <= 100.0:
            raise ValueError(f"humidity {self.humidity_pct} outside [0, 100]")
        if self.visibility_km is not None and self.visibility_km < 0.0:
            raise ValueError(f"visibility {self.visibility_km} is negative")


def risky_binary(obs: HourlyObservation) -> int:
    """1 if any reported phenomenon is in the risky list, else 0.

    Matching is case-insensitive on whitespace-normalized labels.
    """
    for label in obs.phenomena:
        if _normalize_label(label) in RISKY_PHENOMENA:
            return 1
    return 0


@dataclass(frozen=True)
class WeatherStation:
    station_id: str
    location: GeoPoint


@dataclass(frozen=True)
class StationSeries:
    """One station's observations, sorted by strictly increasing timestamp.

    ``risky_ema`` is parallel to ``observations`` once update_ema has run;
    it is None on freshly parsed series.
    """

    station: WeatherStation
    observations: tuple[HourlyObservation, ...]
    risky_ema: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        for prev, cur in zip(self.observations, self.observations[1:]):
            if cur.timestamp <= prev.timestamp:
                raise ValueError(
                    f"station {self.station.station_id}: timestamps not strictly "
                    f"increasing at {cur.timestamp.isoformat()}"
                )
        if self.risky_ema is not None and len(self.risky_ema) != len(self.observations):
            raise ValueError("risky_ema length does not match observations")

    def index_of(self, t: datetime) -> int | None:
        lo, hi = 0, len(self.observations) - 1
        while lo <= hi:
            mid = (lo + hi) // 2
            ts = self.observations[mid].timestamp
            if ts == t:
                return mid
            if ts < t:
                lo = mid + 1
            else:
                hi = mid - 1
        return None

    def value_at(self, t: datetime, field: str) -> float | None:
        """The field value observed at exactly t, or None if absent/missing."""
        idx = self.index_of(t)
        if idx is None:
            return None
        if field == "risky_ema":
            if self.risky_ema is None:
                raise ValueError("risky_ema not computed; call update_ema first")
            return self.risky_ema[idx]
        try:
            attr = FIELD_ATTRS[field]
        except KeyError:
            valid = ", ".join(sorted(FIELD_ATTRS) + ["risky_ema"])
            raise ValueError(f"unknown weather field {field!r} (valid: {valid})") from None
        return getattr(self.observations[idx], attr)


def update_ema(series: StationSeries, alpha: float = DEFAULT_EMA_ALPHA) -> StationSeries:
    """Attach the risky-weather EMA to a series.

    ema_t = alpha * b_t + (1 - alpha) * ema_{t-1} over the hourly timeline,
    seeded with ema_0 = b_0. Hours missing from the series contribute b = 0,
    so the average keeps decaying through gaps.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    values: list[float] = []
    ema = 0.0
    prev_ts: datetime | None = None
    for obs in series.observations:
        b = float(risky_binary(obs))
        if prev_ts is None:
            ema = b
        else:
            gap_hours = round((obs.timestamp - prev_ts).total_seconds() / 3600.0)
            ema *= (1.0 - alpha) ** (gap_hours - 1)
            ema = alpha * b + (1.0 - alpha) * ema
        values.append(ema)
        prev_ts = obs.timestamp
    return replace(series, risky_ema=tuple(values))


class WeatherTable:
    """All stations' series plus parse warnings. Iterable over StationSeries."""

    def __init__(self, series: tuple[StationSeries, ...], warnings: tuple[str, ...] = ()):
        self.series = series
        self.warnings = warnings
        self._by_id = {s.station.station_id: s for s in series}

    def __iter__(self) -> Iterator[StationSeries]:
        return iter(self.series)

    def __len__(self) -> int:
        return len(self.series)

    def get(self, station_id: str) -> StationSeries | None:
        return self._by_id.get(station_id)

    def with_ema(self, alpha: float = DEFAULT_EMA_ALPHA) -> "WeatherTable":
        return WeatherTable(
            tuple(update_ema(s, alpha) for s in self.series), self.warnings
        )


def interpolate(
    series: Iterator[StationSeries] | WeatherTable | list[StationSeries],
    p: GeoPoint,
    t: datetime,
    field: str,
    exponent: float = DEFAULT_IDW_EXPONENT,
    cutoff_m: float = DEFAULT_CUTOFF_M,
) -> float | None:
    """Inverse-distance-weighted field value at point p and hour t.

    Stations farther than cutoff_m, without an observation at t, or missing
    the field at t contribute nothing. Weights are 1 / max(d, 1 m)^exponent;
    exponent 0 degenerates to an unweighted mean. Returns None when no
    station contributes.
    """
    num = 0.0
    den = 0.0
    for s in series:
        d = haversine_m(p, s.station.location)
        if d > cutoff_m:
            continue
        v = s.value_at(t, field)
        if v is None:
            continue
        w = 1.0 if exponent == 0.0 else 1.0 / max(d, DISTANCE_FLOOR_M) ** exponent
        num += w * v
        den += w
    if den == 0.0:
        return None
    return num / den


def _parse_timestamp(raw: str) -> datetime:
    raw = raw.strip()
    for fmt in ("%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S"):
        try:
            return datetime.strptime(raw, fmt)
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {raw!r}")


def _parse_hour(raw: str) -> int:
    raw = raw.strip()
    if ":" in raw:
        raw = raw.split(":", 1)[0]
    return int(raw)


def _parse_optional_float(raw: str) -> float | None:
    if raw is None or raw.strip().casefold() in _MISSING_TOKENS:
        return None
    return float(raw)


def parse_weather_csv(
    data: bytes | str,
    columns: Mapping[str, str] | None = None,
) -> WeatherTable:
    """Parse a weather CSV into per-station series.

    ``columns`` maps semantic names (keys of DEFAULT_WEATHER_COLUMNS, plus
    optionally "date"/"hour" in place of "timestamp") to header names in the
    file. Mandatory semantics: station_id, timestamp (or date + hour),
    latitude, longitude; a header missing any of them raises WeatherLoadError
    naming the missing columns. Duplicate (station, timestamp) rows keep the
    last occurrence and add a warning. Unparseable optional numeric cells
    become missing values with a warning; unparseable mandatory cells raise.
    """
    colmap = dict(DEFAULT_WEATHER_COLUMNS if columns is None else columns)
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.DictReader(io.StringIO(data))
    if reader.fieldnames is None:
        raise WeatherLoadError("weather CSV is empty (no header row)")
    header = set(reader.fieldnames)

    split_timestamp = "timestamp" not in colmap and "date" in colmap and "hour" in colmap
    needed = {
        "station_id": colmap.get("station_id"),
        "latitude": colmap.get("latitude"),
        "longitude": colmap.get("longitude"),
    }
    if split_timestamp:
        needed["date"] = colmap.get("date")
        needed["hour"] = colmap.get("hour")
    else:
        needed["timestamp"] = colmap.get("timestamp")
    missing = sorted(
        semantic for semantic, col in needed.items() if col is None or col not in header
    )
    if missing:
        raise WeatherLoadError(
            "weather CSV missing mandatory column(s): " + ", ".join(missing)
        )

    warnings: list[str] = []
    stations: dict[str, WeatherStation] = {}
    rows: dict[str, dict[datetime, HourlyObservation]] = {}
    for line_no, row in enumerate(reader, start=2):
        sid = (row.get(colmap["station_id"]) or "").strip()
        if not sid:
            raise WeatherLoadError(f"row {line_no}: empty station id")
        try:
            if split_timestamp:
                day = datetime.strptime(row[colmap["date"]].strip(), "%Y-%m-%d")
                ts = day.replace(hour=_parse_hour(row[colmap["hour"]]))
            else:
                ts = _parse_timestamp(row[colmap["timestamp"]])
            lat = float(row[colmap["latitude"]])
            lon = float(row[colmap["longitude"]])
        except (ValueError, KeyError, TypeError) as exc:
            raise WeatherLoadError(f"row {line_no}: {exc}") from exc

        values: dict[str, float | None] = {}
        for semantic, attr in FIELD_ATTRS.items():
            col = colmap.get(semantic)
            if col is None or col not in row or row[col] is None:
                continue
            try:
                values[attr] = _parse_optional_float(row[col])
            except ValueError:
                warnings.append(
                    f"row {line_no}: bad {semantic} value {row[col]!r}, treated as missing"
                )
        phenomena: tuple[str, ...] = ()
        phen_col = colmap.get("phenomena")
        if phen_col and row.get(phen_col):
            phenomena = tuple(
                part.strip() for part in row[phen_col].split(",") if part.strip()
            )
        try:
            obs = HourlyObservation(
                station_id=sid, timestamp=ts, phenomena=phenomena, **values
            )
            station = stations.setdefault(
                sid, WeatherStation(station_id=sid, location=GeoPoint(lat, lon))
            )
        except ValueError as exc:
            raise WeatherLoadError(f"row {line_no}: {exc}") from exc
        per_station = rows.setdefault(station.station_id, {})
        if ts in per_station:
            warnings.append(
                f"row {line_no}: duplicate observation for station {sid} at "
                f"{ts.isoformat()}; keeping the later row"
            )
        per_station[ts] = obs

    series = tuple(
        StationSeries(
            station=stations[sid],
            observations=tuple(obs for _, obs in sorted(rows[sid].items())),
        )
        for sid in sorted(rows)
    )
    return WeatherTable(series, tuple(warnings))
