"""Spill boundary ingestion: ESRI shapefile polygons, canonical spill JSON,
DMS coordinate strings.

Only polygon records (shape type 5) and null records (type 0, skipped) are
supported. Timestamps come from a manifest JSON mapping file name to an
ISO-8601 date, never from .dbf sidecars.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from datetime import datetime, timezone

from . import geo
from .errors import (
    BadMagic,
    GeometryError,
    InvalidRecord,
    ParseError,
    SchemaError,
    SpillnetError,
    TruncatedFile,
    UnsupportedShape,
)

SHAPEFILE_MAGIC = 9994
SHAPEFILE_VERSION = 1000
SHAPE_NULL = 0
SHAPE_POLYGON = 5
HEADER_BYTES = 100


@dataclass(frozen=True)
class SpillObservation:
    """One timestamped boundary snapshot; the unit of ingested ground truth."""

    timestamp: float  # UTC seconds since epoch
    boundary: geo.GeoPolygon
    source_tag: str = ""
    spill_id: str = ""


@dataclass(frozen=True)
class ShapefileRecord:
    record_number: int
    shape_type: int
    parts: tuple
    points: tuple  # ((x=lon, y=lat), ...)
    bbox: tuple  # (xmin, ymin, xmax, ymax)


class _Cursor:
    """Bounded byte reader; any read past the limit is a truncation."""

    def __init__(self, data: bytes, limit: int):
        self.data = data
        self.limit = limit
        self.pos = 0

    def read(self, fmt: str):
        size = struct.calcsize(fmt)
        end = self.pos + size
        if end > self.limit:
            raise TruncatedFile(
                f"need {size} bytes at offset {self.pos}, only {self.limit - self.pos} available"
            )
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos = end
        return out

    @property
    def remaining(self) -> int:
        return self.limit - self.pos


def parse_shapefile(data: bytes):
    """Decode a .shp byte sequence into ShapefileRecords.

    Raises BadMagic, UnsupportedShape, TruncatedFile, or InvalidRecord; never
    reads past the header's declared file length.
    """
    if len(data) < HEADER_BYTES:
        raise TruncatedFile(f"file shorter than the {HEADER_BYTES}-byte header: {len(data)}")
    (magic,) = struct.unpack_from(">i", data, 0)
    if magic != SHAPEFILE_MAGIC:
        raise BadMagic(f"file code {magic} != {SHAPEFILE_MAGIC}")
    (length_words,) = struct.unpack_from(">i", data, 24)
    declared = length_words * 2
    if declared > len(data):
        raise TruncatedFile(f"header declares {declared} bytes, file has {len(data)}")
    if declared < HEADER_BYTES:
        raise InvalidRecord(f"declared length {declared} below header size")
    (version,) = struct.unpack_from("<i", data, 28)
    if version != SHAPEFILE_VERSION:
        raise InvalidRecord(f"version {version} != {SHAPEFILE_VERSION}")
    (file_shape_type,) = struct.unpack_from("<i", data, 32)
    if file_shape_type not in (SHAPE_NULL, SHAPE_POLYGON):
        raise UnsupportedShape(f"file shape type {file_shape_type} unsupported")

    cur = _Cursor(data, declared)
    cur.pos = HEADER_BYTES
    records = []
    while cur.remaining > 0:
        rec_no, content_words = cur.read(">ii")
        content_bytes = content_words * 2
        if content_bytes > cur.remaining:
            raise TruncatedFile(
                f"record {rec_no} declares {content_bytes} content bytes, {cur.remaining} remain"
            )
        body_end = cur.pos + content_bytes
        (shape_type,) = cur.read("<i")
        if shape_type == SHAPE_NULL:
            cur.pos = body_end
            continue
        if shape_type != SHAPE_POLYGON:
            raise UnsupportedShape(f"record {rec_no} shape type {shape_type}")
        bbox = cur.read("<4d")
        num_parts, num_points = cur.read("<ii")
        if num_parts <= 0 or num_points <= 0:
            raise InvalidRecord(f"record {rec_no}: {num_parts} parts, {num_points} points")
        parts = cur.read(f"<{num_parts}i")
        prev = -1
        for off in parts:
            if off < 0 or off >= num_points:
                raise InvalidRecord(f"record {rec_no}: part offset {off} out of range")
            if off <= prev:
                raise InvalidRecord(f"record {rec_no}: part offsets not strictly increasing")
            prev = off
        flat = cur.read(f"<{2 * num_points}d")
        points = tuple((flat[2 * i], flat[2 * i + 1]) for i in range(num_points))
        if cur.pos != body_end:
            raise InvalidRecord(f"record {rec_no}: content length mismatch")
        records.append(
            ShapefileRecord(
                record_number=rec_no,
                shape_type=shape_type,
                parts=tuple(parts),
                points=points,
                bbox=tuple(bbox),
            )
        )
    return records


def _record_rings(rec: ShapefileRecord):
    bounds = list(rec.parts) + [len(rec.points)]
    return [list(rec.points[bounds[i]:bounds[i + 1]]) for i in range(len(rec.parts))]


def record_to_polygons(rec: ShapefileRecord):
    """Group a record's rings into polygons by the ESRI winding convention:
    clockwise rings open a component, counter-clockwise rings are holes of the
    most recent component. Ring 0 always opens the first component.
    """
    rings = _record_rings(rec)
    components = []  # [exterior, [holes...]]
    for idx, ring in enumerate(rings):
        deduped = geo._dedupe_ring(ring)
        if len(deduped) < 3:
            raise InvalidRecord(f"record {rec.record_number}: ring {idx} degenerate")
        cw = geo._signed_area(deduped) < 0
        if idx == 0 or cw or not components:
            components.append([deduped, []])
        else:
            components[-1][1].append(deduped)
    return [geo.GeoPolygon(exterior=ext, holes=tuple(holes)) for ext, holes in components]


def write_shapefile(polygon_records) -> bytes:
    """Serialize rings back into .shp bytes (exterior CW, holes CCW).

    Accepts an iterable of GeoPolygon or of raw ring lists. Coordinates are
    copied as doubles, never recomputed, so round-trips are bit-exact.
    """
    bodies = []
    for i, item in enumerate(polygon_records, start=1):
        if isinstance(item, geo.GeoPolygon):
            rings = [_close_ring(_to_cw(list(item.exterior)))]
            rings += [_close_ring(_to_ccw(list(h))) for h in item.holes]
        else:
            rings = [_close_ring(list(r)) for r in item]
        points = [p for r in rings for p in r]
        parts, off = [], 0
        for r in rings:
            parts.append(off)
            off += len(r)
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        content = struct.pack("<i", SHAPE_POLYGON)
        content += struct.pack("<4d", min(xs), min(ys), max(xs), max(ys))
        content += struct.pack("<ii", len(parts), len(points))
        content += struct.pack(f"<{len(parts)}i", *parts)
        flat = [c for p in points for c in p]
        content += struct.pack(f"<{len(flat)}d", *flat)
        bodies.append(struct.pack(">ii", i, len(content) // 2) + content)

    total = HEADER_BYTES + sum(len(b) for b in bodies)
    header = struct.pack(">i", SHAPEFILE_MAGIC) + b"\x00" * 20 + struct.pack(">i", total // 2)
    header += struct.pack("<ii", SHAPEFILE_VERSION, SHAPE_POLYGON)
    header += struct.pack("<8d", 0, 0, 0, 0, 0, 0, 0, 0)
    return header + b"".join(bodies)


def _close_ring(ring):
    return ring + [ring[0]] if ring[0] != ring[-1] else ring


def _to_cw(ring):
    return ring if geo._signed_area(ring) < 0 else [ring[0]] + ring[:0:-1]


def _to_ccw(ring):
    return ring if geo._signed_area(ring) > 0 else [ring[0]] + ring[:0:-1]


# -- canonical spill JSON -----------------------------------------------------


def parse_timestamp(text: str, pointer: str = "") -> float:
    """ISO-8601 into UTC epoch seconds; naive stamps are taken as UTC."""
    try:
        dt = datetime.fromisoformat(str(text).replace("Z", "+00:00"))
    except ValueError as exc:
        raise SchemaError(pointer, f"bad ISO-8601 timestamp {text!r}: {exc}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat().replace("+00:00", "Z")


def parse_spill_json(text: str):
    """Parse the canonical spill document into SpillObservations.

    Schema: {"spill_id": str, "observations": [{"timestamp_utc": ISO-8601,
    "exterior": [[lon, lat], ...], "holes": [...]}]}. Observations come back
    sorted by timestamp; duplicate timestamps are a schema violation.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("", "document root must be an object")
    spill_id = doc.get("spill_id")
    if not isinstance(spill_id, str) or not spill_id:
        raise SchemaError("/spill_id", "missing or non-string spill_id")
    obs_list = doc.get("observations")
    if not isinstance(obs_list, list) or not obs_list:
        raise SchemaError("/observations", "missing or empty observations array")

    observations = []
    for i, entry in enumerate(obs_list):
        ptr = f"/observations/{i}"
        if not isinstance(entry, dict):
            raise SchemaError(ptr, "observation must be an object")
        if "timestamp_utc" not in entry:
            raise SchemaError(f"{ptr}/timestamp_utc", "missing timestamp_utc")
        ts = parse_timestamp(entry["timestamp_utc"], f"{ptr}/timestamp_utc")
        exterior = entry.get("exterior")
        if not isinstance(exterior, list):
            raise SchemaError(f"{ptr}/exterior", "missing exterior ring")
        holes = entry.get("holes", [])
        if not isinstance(holes, list):
            raise SchemaError(f"{ptr}/holes", "holes must be an array of rings")
        try:
            boundary = geo.GeoPolygon(
                exterior=[tuple(p) for p in exterior],
                holes=tuple(tuple(tuple(q) for q in h) for h in holes),
            )
        except (SpillnetError, TypeError, ValueError) as exc:
            raise GeometryError(f"{ptr}/exterior", str(exc)) from None
        observations.append(
            SpillObservation(
                timestamp=ts,
                boundary=boundary,
                source_tag=str(entry.get("source_tag", "")),
                spill_id=spill_id,
            )
        )

    observations.sort(key=lambda o: o.timestamp)
    for a, b in zip(observations, observations[1:]):
        if a.timestamp == b.timestamp:
            raise SchemaError(
                "/observations", f"duplicate timestamp {format_timestamp(a.timestamp)}"
            )
    return observations


def spill_to_json(observations, spill_id: str = "") -> str:
    """Serialize observations into the canonical spill document."""
    obs = sorted(observations, key=lambda o: o.timestamp)
    if not spill_id and obs:
        spill_id = obs[0].spill_id or "spill"
    doc = {
        "schema_version": 1,
        "spill_id": spill_id,
        "observations": [
            {
                "timestamp_utc": format_timestamp(o.timestamp),
                "exterior": [[lon, lat] for lon, lat in o.boundary.exterior],
                "holes": [[[lon, lat] for lon, lat in h] for h in o.boundary.holes],
                "source_tag": o.source_tag,
            }
            for o in obs
        ],
    }
    return json.dumps(doc, indent=2)


def ingest_shapefile_series(named_blobs, manifest: dict, spill_id: str = "spill"):
    """Assemble a SpillObservation series from (name -> .shp bytes) plus a
    manifest {name: ISO-8601 timestamp}. Multi-component records collapse to
    the largest component.
    """
    observations = []
    for name, blob in named_blobs.items():
        if name not in manifest:
            raise SchemaError(f"/{name}", "file missing from manifest")
        ts = parse_timestamp(manifest[name], f"/{name}")
        polys = []
        for rec in parse_shapefile(blob):
            polys.extend(record_to_polygons(rec))
        if not polys:
            raise InvalidRecord(f"{name}: no polygon records")
        boundary = geo.largest_component(polys)
        observations.append(
            SpillObservation(timestamp=ts, boundary=boundary, source_tag=name, spill_id=spill_id)
        )
    observations.sort(key=lambda o: o.timestamp)
    for a, b in zip(observations, observations[1:]):
        if a.timestamp == b.timestamp:
            raise SchemaError("/", f"duplicate timestamp {format_timestamp(a.timestamp)}")
    return observations


# -- DMS ----------------------------------------------------------------------

_DMS_RE = re.compile(
    r"""^\s*(\d{1,3})\s*[°d]\s*(\d{1,2})\s*['’m]\s*(\d{1,2}(?:\.\d+)?)\s*["”s]?\s*([NSEW])\s*$""",
    re.IGNORECASE,
)


def dms_to_decimal(text: str) -> float:
    """Degrees-minutes-seconds string (e.g. 28°44'12"N) to signed degrees."""
    m = _DMS_RE.match(text)
    if not m:
        raise ParseError(f"unrecognized DMS string: {text!r}")
    deg, minutes, seconds = int(m.group(1)), int(m.group(2)), float(m.group(3))
    hemi = m.group(4).upper()
    if minutes >= 60 or seconds >= 60:
        raise ParseError(f"minutes/seconds out of range in {text!r}")
    limit = 90 if hemi in "NS" else 180
    value = deg + minutes / 60.0 + seconds / 3600.0
    if value > limit:
        raise ParseError(f"{value} degrees exceeds {limit} for hemisphere {hemi}")
    return -value if hemi in "SW" else value
