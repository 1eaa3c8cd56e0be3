"""Synthetic scenario generator: roads, weather, collisions with planted signal.

The generator lays segments on a jittered grid around a city center, puts
weather stations on a surrounding ring, draws a regional low-visibility
episode timeline, then samples collisions per segment-hour as Bernoulli
draws whose rate is boosted on hotspot segments and during episodes. All
randomness flows from one seeded generator consumed in a fixed order, so a
given config yields byte-identical artifacts. Outputs round-trip through the
real ingestion parsers with zero warnings, and a truth manifest records the
planted hotspots and low-visibility hours for verification.
"""

from __future__ import annotations

import csv
import io
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import date, datetime, timedelta

import numpy as np

_KML_NS = "http://www.opengis.net/kml/2.2"

_LAT_SPACING_DEG = 0.008
_LON_SPACING_DEG = 0.010
_HALF_LENGTH_LON_DEG = 0.0022

_STREET_TEMPLATES = (
    "Rue {}",
    "Boulevard {}",
    "Avenue {}",
    "Autoroute {}",
    "Chemin {}",
    "Montée {}",
    "Pont {}",
    "Voie {}",
)


@dataclass(frozen=True)
class SynthConfig:
    n_segments: int = 200
    n_stations: int = 5
    n_days: int = 120
    start_date: date = date(2021, 1, 1)
    hotspot_fraction: float = 0.05
    hotspot_multiplier: float = 20.0
    base_rate: float = 4e-4
    weather_effect: float = 3.0
    episode_enter_prob: float = 0.02
    episode_exit_prob: float = 0.15
    center_lat: float = 45.5
    center_lon: float = -73.6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_segments < 1 or self.n_stations < 1 or self.n_days < 1:
            raise ValueError("n_segments, n_stations, and n_days must be >= 1")
        if not 0.0 <= self.hotspot_fraction <= 1.0:
            raise ValueError(f"hotspot_fraction must be in [0, 1], got {self.hotspot_fraction}")
        if self.hotspot_multiplier < 1.0 or self.weather_effect < 1.0:
            raise ValueError("hotspot_multiplier and weather_effect must be >= 1")
        if self.base_rate < 0.0:
            raise ValueError(f"base_rate must be non-negative, got {self.base_rate}")
        peak = self.base_rate * self.hotspot_multiplier * self.weather_effect
        if peak > 1.0:
            raise ValueError(f"peak collision probability {peak:.3f} exceeds 1")
        if not (0.0 < self.episode_enter_prob < 1.0 and 0.0 < self.episode_exit_prob < 1.0):
            raise ValueError("episode transition probabilities must be in (0, 1)")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    @property
    def n_hours(self) -> int:
        return self.n_days * 24

    @property
    def end_date(self) -> date:
        return self.start_date + timedelta(days=self.n_days)


@dataclass
class SynthDataset:
    roads_kml: bytes
    weather_csv: bytes
    collisions_csv: bytes
    truth: dict


def _segment_geometry(config: SynthConfig, rng: np.random.Generator):
    """Per-segment (id, name, level, polyline lat/lon triples) on a jittered grid."""
    cols = max(1, math.ceil(math.sqrt(config.n_segments)))
    rows = math.ceil(config.n_segments / cols)
    segments = []
    for i in range(config.n_segments):
        r, c = divmod(i, cols)
        lat0 = config.center_lat + (r - rows / 2.0) * _LAT_SPACING_DEG
        lon0 = config.center_lon + (c - cols / 2.0) * _LON_SPACING_DEG
        half = _HALF_LENGTH_LON_DEG * (0.7 + 0.6 * rng.random())
        mid_jitter = (rng.random() - 0.5) * 0.0008
        points = (
            (lat0, lon0 - half),
            (lat0 + mid_jitter, lon0),
            (lat0, lon0 + half),
        )
        name = _STREET_TEMPLATES[i % len(_STREET_TEMPLATES)].format(
            f"{chr(65 + i % 26)}{i // 26}"
        )
        level = 1 if i % 10 == 0 else (2 if i % 3 == 0 else 3)
        segments.append((f"S{i:04d}", name, level, points))
    return segments


def _roads_kml(segments) -> bytes:
    ET.register_namespace("", _KML_NS)
    kml = ET.Element(f"{{{_KML_NS}}}kml")
    document = ET.SubElement(kml, f"{{{_KML_NS}}}Document")
    for seg_id, name, level, points in segments:
        placemark = ET.SubElement(document, f"{{{_KML_NS}}}Placemark")
        ET.SubElement(placemark, f"{{{_KML_NS}}}name").text = name
        extended = ET.SubElement(placemark, f"{{{_KML_NS}}}ExtendedData")
        for key, value in (
            ("segment_id", seg_id),
            ("street_name", name),
            ("road_level", str(level)),
        ):
            data = ET.SubElement(extended, f"{{{_KML_NS}}}Data", {"name": key})
            ET.SubElement(data, f"{{{_KML_NS}}}value").text = value
        linestring = ET.SubElement(placemark, f"{{{_KML_NS}}}LineString")
        ET.SubElement(linestring, f"{{{_KML_NS}}}coordinates").text = " ".join(
            f"{lon:.6f},{lat:.6f},0" for lat, lon in points
        )
    return ET.tostring(kml, encoding="utf-8", xml_declaration=True)


def _station_locations(config: SynthConfig):
    out = []
    for j in range(config.n_stations):
        angle = 2.0 * math.pi * j / config.n_stations
        out.append(
            (
                f"ST{j:02d}",
                config.center_lat + 0.05 * math.sin(angle),
                config.center_lon + 0.07 * math.cos(angle),
            )
        )
    return out


def _episode_timeline(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Boolean low-visibility flag per hour via a two-state Markov chain."""
    flips = rng.random(config.n_hours)
    episode = np.zeros(config.n_hours, dtype=bool)
    state = False
    for h in range(config.n_hours):
        if state:
            state = flips[h] >= config.episode_exit_prob
        else:
            state = flips[h] < config.episode_enter_prob
        episode[h] = state
    return episode


def _weather_csv(config: SynthConfig, stations, episode: np.ndarray, rng: np.random.Generator) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "station_id",
            "timestamp",
            "latitude",
            "longitude",
            "temperature",
            "humidity",
            "visibility",
            "pressure",
            "phenomena",
        ]
    )
    start = datetime(config.start_date.year, config.start_date.month, config.start_date.day)
    phen_risky = ("Snow", "Blowing Snow", "Snow,Ice Fog")
    phen_calm = ("", "", "", "", "Rain", "Cloudy")
    for sidx, (station_id, lat, lon) in enumerate(stations):
        noise_t = rng.normal(0.0, 1.5, config.n_hours)
        noise_v = rng.normal(0.0, 3.0, config.n_hours)
        noise_ve = rng.normal(0.0, 0.4, config.n_hours)
        noise_h = rng.normal(0.0, 5.0, config.n_hours)
        noise_p = rng.normal(0.0, 0.6, config.n_hours)
        phen_pick = rng.integers(0, 6, config.n_hours)
        drop_temp = rng.random(config.n_hours) < 0.02
        for h in range(config.n_hours):
            ts = start + timedelta(hours=h)
            doy = ts.timetuple().tm_yday
            temp = (
                8.0
                - 16.0 * math.cos(2.0 * math.pi * doy / 365.0)
                - 3.0 * math.cos(2.0 * math.pi * ts.hour / 24.0)
                + 0.3 * sidx
                + noise_t[h]
            )
            if episode[h]:
                visibility = min(2.5, max(0.1, 0.6 + abs(noise_ve[h])))
                humidity = min(100.0, max(20.0, 85.0 + noise_h[h] / 2.0))
                phenomena = phen_risky[phen_pick[h] % len(phen_risky)]
            else:
                visibility = max(8.0, 24.0 + noise_v[h])
                humidity = min(100.0, max(20.0, 60.0 + noise_h[h]))
                phenomena = phen_calm[phen_pick[h]]
            pressure = 101.3 + noise_p[h]
            writer.writerow(
                [
                    station_id,
                    ts.strftime("%Y-%m-%d %H:%M"),
                    f"{lat:.6f}",
                    f"{lon:.6f}",
                    "" if drop_temp[h] else f"{temp:.1f}",
                    f"{humidity:.0f}",
                    f"{visibility:.1f}",
                    f"{pressure:.2f}",
                    phenomena,
                ]
            )
    return buf.getvalue().encode("utf-8")


def _collisions_csv(
    config: SynthConfig,
    segments,
    hotspot_ids: set[str],
    episode: np.ndarray,
    rng: np.random.Generator,
) -> tuple[bytes, int]:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["date", "hour", "latitude", "longitude"])
    start = datetime(config.start_date.year, config.start_date.month, config.start_date.day)
    weather_boost = np.where(episode, config.weather_effect, 1.0)
    n_collisions = 0
    meters_per_deg = 6_371_000.0 * math.pi / 180.0
    for seg_id, _name, _level, points in segments:
        rate = config.base_rate * (
            config.hotspot_multiplier if seg_id in hotspot_ids else 1.0
        )
        p = rate * weather_boost
        hits = np.flatnonzero(rng.random(config.n_hours) < p)
        if hits.size == 0:
            continue
        t_along = rng.random(hits.size)
        jitter = rng.normal(0.0, 8.0, (hits.size, 2))  # meters
        (lat_a, lon_a), _mid, (lat_b, lon_b) = points
        for pos, h in enumerate(hits):
            ts = start + timedelta(hours=int(h))
            t = t_along[pos]
            lat = lat_a + t * (lat_b - lat_a) + jitter[pos, 0] / meters_per_deg
            lon = (
                lon_a
                + t * (lon_b - lon_a)
                + jitter[pos, 1]
                / (meters_per_deg * math.cos(math.radians(config.center_lat)))
            )
            writer.writerow(
                [ts.strftime("%Y-%m-%d"), f"{ts.hour:02d}:00", f"{lat:.6f}", f"{lon:.6f}"]
            )
            n_collisions += 1
    return buf.getvalue().encode("utf-8"), n_collisions


def generate(config: SynthConfig = SynthConfig()) -> SynthDataset:
    """Generate one deterministic synthetic scenario."""
    rng = np.random.default_rng(config.seed)
    segments = _segment_geometry(config, rng)
    stations = _station_locations(config)
    n_hot = int(round(config.n_segments * config.hotspot_fraction))
    hotspot_indices = sorted(
        rng.choice(config.n_segments, size=n_hot, replace=False).tolist()
    )
    hotspot_ids = {segments[i][0] for i in hotspot_indices}
    episode = _episode_timeline(config, rng)
    weather_csv = _weather_csv(config, stations, episode, rng)
    collisions_csv, n_collisions = _collisions_csv(
        config, segments, hotspot_ids, episode, rng
    )
    start = datetime(config.start_date.year, config.start_date.month, config.start_date.day)
    truth = {
        "config": {
            "n_segments": config.n_segments,
            "n_stations": config.n_stations,
            "n_days": config.n_days,
            "start_date": config.start_date.isoformat(),
            "end_date": config.end_date.isoformat(),
            "hotspot_fraction": config.hotspot_fraction,
            "hotspot_multiplier": config.hotspot_multiplier,
            "base_rate": config.base_rate,
            "weather_effect": config.weather_effect,
            "seed": config.seed,
        },
        "hotspot_segment_ids": sorted(hotspot_ids),
        "low_visibility_hours": [
            (start + timedelta(hours=int(h))).isoformat(sep=" ", timespec="minutes")
            for h in np.flatnonzero(episode)
        ],
        "n_collisions": n_collisions,
    }
    return SynthDataset(
        roads_kml=_roads_kml(segments),
        weather_csv=weather_csv,
        collisions_csv=collisions_csv,
        truth=truth,
    )
