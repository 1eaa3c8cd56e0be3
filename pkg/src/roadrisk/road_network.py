"""Road network geometry: points, segments, KML ingestion, nearest-segment lookup.

Distances are spherical (haversine, radius 6,371,000 m). Point-to-segment
distance projects into a local equirectangular plane centered on the query
point, clamps the projection parameter to the segment, and measures haversine
distance to the clamped point, so it degrades gracefully at city scale.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from functools import cached_property

from .errors import DataError, KmlParseError

EARTH_RADIUS_M = 6_371_000.0
_METERS_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0

DEFAULT_CELL_SIZE_DEG = 0.005
DEFAULT_MATCH_RADIUS_M = 100.0

_ID_KEYS = ("segment_id", "id", "nid", "id_trc")
_NAME_KEYS = ("street_name", "name", "nom_voie", "rue")
_LEVEL_KEYS = ("road_level", "level", "classe")


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 point in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat!r}, {self.lon!r})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat!r} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon!r} outside [-180, 180]")


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points, in meters."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    sin_dlat = math.sin((lat2 - lat1) / 2.0)
    sin_dlon = math.sin((lon2 - lon1) / 2.0)
    h = sin_dlat * sin_dlat + math.cos(lat1) * math.cos(lat2) * sin_dlon * sin_dlon
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class RoadSegment:
    """A polyline street segment with minimal attributes.

    road_level is a coarse importance category in {1, 2, 3} (1 = major),
    defaulting to 3 when the source data does not provide one.
    """

    segment_id: str
    polyline: tuple[GeoPoint, ...]
    street_name: str = ""
    road_level: int = 3

    def __post_init__(self) -> None:
        if len(self.polyline) < 2:
            raise ValueError(
                f"segment {self.segment_id!r} needs >= 2 points, got {len(self.polyline)}"
            )
        if self.road_level not in (1, 2, 3):
            raise ValueError(f"road_level {self.road_level!r} not in {{1, 2, 3}}")

    @cached_property
    def length_m(self) -> float:
        """Sum of haversine distances over consecutive polyline points."""
        pts = self.polyline
        return sum(haversine_m(pts[i], pts[i + 1]) for i in range(len(pts) - 1))

    @cached_property
    def bounds(self) -> tuple[float, float, float, float]:
        """(min_lat, min_lon, max_lat, max_lon) of the polyline."""
        lats = [p.lat for p in self.polyline]
        lons = [p.lon for p in self.polyline]
        return min(lats), min(lons), max(lats), max(lons)

    @cached_property
    def midpoint(self) -> GeoPoint:
        """The point at half the segment's length along the polyline.

        Used as the segment's representative location for weather
        interpolation and solar geometry.
        """
        half = self.length_m / 2.0
        run = 0.0
        pts = self.polyline
        for i in range(len(pts) - 1):
            step = haversine_m(pts[i], pts[i + 1])
            if run + step >= half and step > 0.0:
                t = (half - run) / step
                return GeoPoint(
                    pts[i].lat + t * (pts[i + 1].lat - pts[i].lat),
                    pts[i].lon + t * (pts[i + 1].lon - pts[i].lon),
                )
            run += step
        return pts[-1]


def point_to_segment_m(p: GeoPoint, segment: RoadSegment) -> float:
    """Shortest distance in meters from p to the segment's polyline."""
    kx = _METERS_PER_DEG * math.cos(math.radians(p.lat))
    ky = _METERS_PER_DEG
    best = math.inf
    pts = segment.polyline
    for i in range(len(pts) - 1):
        a, b = pts[i], pts[i + 1]
        ax = (a.lon - p.lon) * kx
        ay = (a.lat - p.lat) * ky
        bx = (b.lon - p.lon) * kx
        by = (b.lat - p.lat) * ky
        dx, dy = bx - ax, by - ay
        norm2 = dx * dx + dy * dy
        if norm2 == 0.0:
            t = 0.0
        else:
            t = max(0.0, min(1.0, -(ax * dx + ay * dy) / norm2))
        nearest = GeoPoint(a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon))
        d = haversine_m(p, nearest)
        if d < best:
            best = d
    return best


class RoadNetwork:
    """An immutable collection of segments with a uniform grid spatial index.

    The index buckets each segment into every cell its bounding box overlaps;
    cells are squares of ``cell_size_deg`` degrees on each side.
    """

    def __init__(
        self,
        segments: list[RoadSegment] | tuple[RoadSegment, ...],
        cell_size_deg: float = DEFAULT_CELL_SIZE_DEG,
        warnings: tuple[str, ...] = (),
    ) -> None:
        if cell_size_deg <= 0:
            raise ValueError(f"cell_size_deg must be positive, got {cell_size_deg}")
        self.segments: tuple[RoadSegment, ...] = tuple(segments)
        self.cell_size_deg = float(cell_size_deg)
        self.warnings = warnings
        self.by_id: dict[str, RoadSegment] = {}
        for seg in self.segments:
            if seg.segment_id in self.by_id:
                raise DataError(f"duplicate segment_id {seg.segment_id!r} in network")
            self.by_id[seg.segment_id] = seg
        self._cells: dict[tuple[int, int], list[int]] = {}
        cs = self.cell_size_deg
        for idx, seg in enumerate(self.segments):
            min_lat, min_lon, max_lat, max_lon = seg.bounds
            for iy in range(math.floor(min_lat / cs), math.floor(max_lat / cs) + 1):
                for ix in range(math.floor(min_lon / cs), math.floor(max_lon / cs) + 1):
                    self._cells.setdefault((ix, iy), []).append(idx)

    def __len__(self) -> int:
        return len(self.segments)

    def candidates_near(self, p: GeoPoint, radius_m: float) -> list[RoadSegment]:
        """Segments whose index cells overlap a radius_m box around p.

        A superset of all segments within radius_m of p (the box is padded by
        one cell and the longitude scale uses the most conservative latitude
        in the band).
        """
        cs = self.cell_size_deg
        dlat = radius_m / _METERS_PER_DEG
        band_lat = min(89.9, abs(p.lat) + dlat)
        cos_min = max(math.cos(math.radians(band_lat)), 1e-6)
        dlon = radius_m / (_METERS_PER_DEG * cos_min)
        iy0 = math.floor((p.lat - dlat) / cs) - 1
        iy1 = math.floor((p.lat + dlat) / cs) + 1
        ix0 = math.floor((p.lon - dlon) / cs) - 1
        ix1 = math.floor((p.lon + dlon) / cs) + 1
        seen: set[int] = set()
        for iy in range(iy0, iy1 + 1):
            for ix in range(ix0, ix1 + 1):
                seen.update(self._cells.get((ix, iy), ()))
        return [self.segments[i] for i in sorted(seen)]


def match_segment(
    p: GeoPoint,
    network: RoadNetwork,
    max_radius_m: float = DEFAULT_MATCH_RADIUS_M,
) -> tuple[str, float] | None:
    """Nearest segment within max_radius_m of p, or None.

    Returns (segment_id, distance_m). Distance ties break toward the
    lexicographically smaller segment_id so matching is order-independent.
    """
    best_id: str | None = None
    best_d = math.inf
    for seg in network.candidates_near(p, max_radius_m):
        d = point_to_segment_m(p, seg)
        if d < best_d or (d == best_d and best_id is not None and seg.segment_id < best_id):
            best_id, best_d = seg.segment_id, d
    if best_id is None or best_d > max_radius_m:
        return None
    return best_id, best_d


def _local_name(tag: str) -> str:
    return tag.rsplit("}", 1)[-1].lower()


def _placemark_attributes(placemark: ET.Element) -> dict[str, str]:
    """Flatten <name>, <Data>, and <SimpleData> entries into one dict, keys lowercased."""
    attrs: dict[str, str] = {}
    for elem in placemark.iter():
        name = _local_name(elem.tag)
        if name == "name" and elem.text:
            attrs.setdefault("name", elem.text.strip())
        elif name == "simpledata":
            key = (elem.get("name") or "").strip().lower()
            if key and elem.text is not None:
                attrs[key] = elem.text.strip()
        elif name == "data":
            key = (elem.get("name") or "").strip().lower()
            if key:
                for child in elem:
                    if _local_name(child.tag) == "value" and child.text is not None:
                        attrs[key] = child.text.strip()
    return attrs


def _first_key(attrs: dict[str, str], keys: tuple[str, ...]) -> str | None:
    for key in keys:
        value = attrs.get(key)
        if value:
            return value
    return None


def parse_kml(
    data: bytes | str,
    cell_size_deg: float = DEFAULT_CELL_SIZE_DEG,
    id_keys: tuple[str, ...] = _ID_KEYS,
    name_keys: tuple[str, ...] = _NAME_KEYS,
    level_keys: tuple[str, ...] = _LEVEL_KEYS,
) -> RoadNetwork:
    """Parse KML bytes into a RoadNetwork.

    Every LineString inside a Placemark becomes one segment. Attribute
    lookups (id, street name, road level) accept both <Data> and <SimpleData>
    encodings, matched case-insensitively against the given key tuples.
    Degenerate LineStrings (< 2 coordinates) are skipped and recorded in the
    returned network's ``warnings``; malformed coordinate tokens raise
    KmlParseError naming the offending Placemark.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise KmlParseError(f"malformed KML at line {line}, column {col}: {exc}") from exc

    segments: list[RoadSegment] = []
    warnings: list[str] = []
    placemark_count = 0
    for placemark in root.iter():
        if _local_name(placemark.tag) != "placemark":
            continue
        placemark_count += 1
        attrs = _placemark_attributes(placemark)
        base_id = _first_key(attrs, id_keys) or f"seg-{placemark_count - 1:06d}"
        label = _first_key(attrs, id_keys) or attrs.get("name") or f"#{placemark_count - 1}"
        street = _first_key(attrs, name_keys) or ""
        level = 3
        raw_level = _first_key(attrs, level_keys)
        if raw_level is not None:
            try:
                level = min(3, max(1, int(raw_level)))
            except ValueError:
                level = 3
        linestrings = [
            elem for elem in placemark.iter() if _local_name(elem.tag) == "linestring"
        ]
        for li, linestring in enumerate(linestrings):
            coords_text = ""
            for child in linestring.iter():
                if _local_name(child.tag) == "coordinates" and child.text:
                    coords_text = child.text
                    break
            points: list[GeoPoint] = []
            for token in coords_text.split():
                parts = token.split(",")
                if len(parts) < 2:
                    raise KmlParseError(
                        f"Placemark {label!r}: coordinate token {token!r} lacks lon,lat"
                    )
                try:
                    lon, lat = float(parts[0]), float(parts[1])
                    points.append(GeoPoint(lat, lon))
                except ValueError as exc:
                    raise KmlParseError(
                        f"Placemark {label!r}: bad coordinate token {token!r}: {exc}"
                    ) from exc
            if len(points) < 2:
                warnings.append(
                    f"Placemark {label!r}: LineString with {len(points)} point(s) skipped"
                )
                continue
            seg_id = base_id if len(linestrings) == 1 else f"{base_id}/{li}"
            segments.append(
                RoadSegment(
                    segment_id=seg_id,
                    polyline=tuple(points),
                    street_name=street,
                    road_level=level,
                )
            )
    return RoadNetwork(segments, cell_size_deg=cell_size_deg, warnings=tuple(warnings))
