"""Training example generation over the (segment, hour) grid.

Positive examples come from collisions matched to their nearest road segment;
negatives are a sparse uniform sample of the remaining segment-hour cells.
Negative draws are keyed per (seed, segment, calendar month), so the same
spec yields the same example set no matter how the work is batched or
parallelized.
"""

from __future__ import annotations

import calendar
import csv
import hashlib
import io
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CollisionLoadError
from .road_network import DEFAULT_MATCH_RADIUS_M, GeoPoint, RoadNetwork, match_segment

DEFAULT_SAMPLING_RATE = 0.001

DEFAULT_COLLISION_COLUMNS: dict[str, str] = {
    "date": "date",
    "hour": "hour",
    "latitude": "latitude",
    "longitude": "longitude",
}


@dataclass(frozen=True)
class CollisionRecord:
    """A collision event, localized to a point and truncated to the hour."""

    timestamp: datetime
    location: GeoPoint

    def __post_init__(self) -> None:
        ts = self.timestamp
        if ts.minute or ts.second or ts.microsecond:
            raise ValueError(f"collision timestamp {ts.isoformat()} is not on the hour")


@dataclass(frozen=True)
class Example:
    """One (segment, hour) cell with its label: 1 collision, 0 sampled negative."""

    segment_id: str
    timestamp: datetime
    label: int

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    @property
    def key(self) -> tuple[str, datetime]:
        return (self.segment_id, self.timestamp)


@dataclass(frozen=True)
class GridSpec:
    """The segment-hour grid to sample over.

    The time window is [start_date 00:00, end_date 00:00), end-exclusive.
    """

    start_date: date
    end_date: date
    segment_ids: tuple[str, ...]
    sampling_rate: float = DEFAULT_SAMPLING_RATE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.start_date >= self.end_date:
            raise ValueError(
                f"start_date {self.start_date} must precede end_date {self.end_date}"
            )
        if not 0.0 < self.sampling_rate <= 1.0:
            raise ValueError(f"sampling_rate must be in (0, 1], got {self.sampling_rate}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if len(set(self.segment_ids)) != len(self.segment_ids):
            raise ValueError("segment_ids contains duplicates")

    @property
    def start_ts(self) -> datetime:
        return datetime(self.start_date.year, self.start_date.month, self.start_date.day)

    @property
    def end_ts(self) -> datetime:
        return datetime(self.end_date.year, self.end_date.month, self.end_date.day)

    def n_hours(self) -> int:
        return int((self.end_ts - self.start_ts).total_seconds() // 3600)

    def months(self) -> list[tuple[int, int]]:
        """Calendar (year, month) pairs overlapping the window, in order."""
        out = []
        y, m = self.start_date.year, self.start_date.month
        while (y, m) <= (self.end_date.year, self.end_date.month):
            if datetime(y, m, 1) < self.end_ts:
                out.append((y, m))
            y, m = (y + 1, 1) if m == 12 else (y, m + 1)
        return out


@dataclass
class MatchReport:
    """Bookkeeping from collision-to-segment matching."""

    total: int = 0
    matched: int = 0
    unmatched: int = 0
    collapsed: int = 0


def positives(
    collisions: Iterable[CollisionRecord],
    network: RoadNetwork,
    max_radius_m: float = DEFAULT_MATCH_RADIUS_M,
) -> tuple[list[Example], MatchReport]:
    """Label-1 examples from collisions matched to their nearest segment.

    Collisions farther than max_radius_m from every segment are dropped and
    counted as unmatched. Multiple collisions on the same (segment, hour)
    collapse to a single example; the extras are counted as collapsed.
    Matching runs in calendar-month batches purely as a processing shape; the
    result is independent of batching.
    """
    report = MatchReport()
    seen: set[tuple[str, datetime]] = set()
    out: list[Example] = []
    by_month: dict[tuple[int, int], list[CollisionRecord]] = {}
    for rec in collisions:
        by_month.setdefault((rec.timestamp.year, rec.timestamp.month), []).append(rec)
    for month_key in sorted(by_month):
        for rec in by_month[month_key]:
            report.total += 1
            hit = match_segment(rec.location, network, max_radius_m)
            if hit is None:
                report.unmatched += 1
                continue
            report.matched += 1
            key = (hit[0], rec.timestamp)
            if key in seen:
                report.collapsed += 1
                continue
            seen.add(key)
            out.append(Example(segment_id=hit[0], timestamp=rec.timestamp, label=1))
    out.sort(key=lambda e: e.key)
    return out, report


def _segment_stream_entropy(segment_id: str) -> int:
    digest = hashlib.blake2b(segment_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _month_hours(year: int, month: int) -> list[datetime]:
    days = calendar.monthrange(year, month)[1]
    first = datetime(year, month, 1)
    return [first + timedelta(hours=h) for h in range(days * 24)]


def sample_negatives(grid: GridSpec, positive_examples: Sequence[Example]) -> list[Example]:
    """Label-0 examples drawn independently per grid cell at sampling_rate.

    Cells already holding a positive are excluded. Each (segment, calendar
    month) pair gets its own RNG stream derived from (seed, segment digest,
    year, month) and draws one uniform per hour of the *whole* month before
    masking to the window, so results are byte-identical however the grid is
    batched (by month, by segment, or by window split).
    """
    pos_keys = {e.key for e in positive_examples}
    start_ts, end_ts = grid.start_ts, grid.end_ts
    out: list[Example] = []
    for segment_id in grid.segment_ids:
        seg_entropy = _segment_stream_entropy(segment_id)
        for year, month in grid.months():
            hours = _month_hours(year, month)
            rng = np.random.default_rng(
                np.random.SeedSequence([grid.seed, seg_entropy, year, month])
            )
            draws = rng.random(len(hours))
            for i in np.flatnonzero(draws < grid.sampling_rate):
                ts = hours[i]
                if not start_ts <= ts < end_ts:
                    continue
                if (segment_id, ts) in pos_keys:
                    continue
                out.append(Example(segment_id=segment_id, timestamp=ts, label=0))
    out.sort(key=lambda e: e.key)
    return out


def _parse_collision_timestamp(
    row: Mapping[str, str], colmap: Mapping[str, str], split: bool
) -> datetime:
    if split:
        day = datetime.strptime(row[colmap["date"]].strip(), "%Y-%m-%d")
        raw_hour = row[colmap["hour"]].strip()
        if ":" in raw_hour:
            raw_hour = raw_hour.split(":", 1)[0]
        return day.replace(hour=int(raw_hour))
    raw = row[colmap["timestamp"]].strip()
    for fmt in ("%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S"):
        try:
            ts = datetime.strptime(raw, fmt)
            return ts.replace(minute=0, second=0, microsecond=0)
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {raw!r}")


def parse_collision_csv(
    data: bytes | str,
    columns: Mapping[str, str] | None = None,
) -> tuple[list[CollisionRecord], tuple[str, ...]]:
    """Parse collision records from CSV.

    ``columns`` maps semantic names to header names: either "timestamp" or
    "date" + "hour", plus "latitude" and "longitude". Rows missing any of
    those values, or with unparseable ones, are skipped with a warning (only
    fully localized and dated collisions are usable). Returns (records,
    warnings).
    """
    colmap = dict(DEFAULT_COLLISION_COLUMNS if columns is None else columns)
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.DictReader(io.StringIO(data))
    if reader.fieldnames is None:
        raise CollisionLoadError("collision CSV is empty (no header row)")
    header = set(reader.fieldnames)
    split = "timestamp" not in colmap
    needed = ["latitude", "longitude"] + (["date", "hour"] if split else ["timestamp"])
    missing = sorted(
        semantic
        for semantic in needed
        if colmap.get(semantic) is None or colmap[semantic] not in header
    )
    if missing:
        raise CollisionLoadError(
            "collision CSV missing mandatory column(s): " + ", ".join(missing)
        )

    records: list[CollisionRecord] = []
    warnings: list[str] = []
    for line_no, row in enumerate(reader, start=2):
        try:
            ts = _parse_collision_timestamp(row, colmap, split)
            lat = float(row[colmap["latitude"]])
            lon = float(row[colmap["longitude"]])
            records.append(CollisionRecord(timestamp=ts, location=GeoPoint(lat, lon)))
        except (ValueError, KeyError, TypeError) as exc:
            warnings.append(f"row {line_no}: skipped ({exc})")
    return records, tuple(warnings)
