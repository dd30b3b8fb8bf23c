"""GPX ingestion: tracks, segments, points and per-point kinematics."""

from __future__ import annotations

import enum
import logging
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

import numpy as np

from .projection import TransverseMercator

log = logging.getLogger(__name__)


class Source(str, enum.Enum):
    HIKR = "hikr"
    OSM = "osm"
    OTHER = "other"


class GpxParseError(ValueError):
    """Malformed GPX input.  ``offset`` is the byte offset of the failure."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class TrackPoint:
    x: float
    y: float
    t: int
    lat: float = math.nan
    lon: float = math.nan
    elevation: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("track point position must be finite")


@dataclass(frozen=True)
class TrackSegment:
    """A continuous run of points.

    Kinematics arrays have one entry per point; entry ``i`` describes the hop
    from point ``i`` to ``i + 1`` and the last entry is NaN.  ``valid`` is False
    for the last point and for hops with zero duration but non-zero distance.
    """

    segment_id: str
    points: tuple[TrackPoint, ...]
    distance_m: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    duration_s: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    speed_kmh: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    valid: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_kinematics(self) -> bool:
        return self.speed_kmh is not None

    def xy(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=float).reshape(-1, 2)

    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points], dtype=np.int64)


@dataclass(frozen=True)
class Track:
    file_id: str
    source: Source
    segments: tuple[TrackSegment, ...]


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _children(elem: ET.Element, name: str) -> list[ET.Element]:
    return [c for c in elem if _local(c.tag) == name]


_FRACTION = re.compile(r"(?<=\d\d:\d\d:\d\d)[.,]\d+")


def parse_time(text: str) -> int:
    """Parse an ISO-8601 instant to integer UTC epoch seconds (sub-seconds truncated)."""
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    # fromisoformat on 3.10 only takes 3- or 6-digit fractions; sub-seconds are dropped anyway
    s = _FRACTION.sub("", s)
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return math.floor(dt.timestamp())


def format_time(t: int) -> str:
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _byte_offset(data: bytes, line: int, column: int) -> int:
    lines = data.split(b"\n")
    return sum(len(ln) + 1 for ln in lines[: max(line - 1, 0)]) + column


def parse_gpx(
    data: bytes,
    file_id: str,
    source: Source = Source.OTHER,
    projection: TransverseMercator | None = None,
) -> Track:
    """Parse GPX 1.0/1.1 bytes into a Track.

    All ``trk`` elements in one file are flattened into one Track; segments
    whose points lack timestamps, or whose timestamps run backwards, are
    dropped with a warning.  Kinematics are not computed here.
    """
    projection = projection or TransverseMercator()
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise GpxParseError(f"{file_id}: malformed XML: {exc}", _byte_offset(data, line, col)) from None
    if _local(root.tag) != "gpx":
        raise GpxParseError(f"{file_id}: root element is <{_local(root.tag)}>, not <gpx>", 0)

    segments: list[TrackSegment] = []
    n_seg = 0
    for trk in _children(root, "trk"):
        for seg in _children(trk, "trkseg"):
            seg_id = f"{file_id}:{n_seg}"
            n_seg += 1
            points = _parse_segment(seg, seg_id, projection)
            if points is not None:
                segments.append(TrackSegment(seg_id, tuple(points)))
    return Track(file_id=file_id, source=Source(source), segments=tuple(segments))


def _parse_segment(seg: ET.Element, seg_id: str, projection: TransverseMercator):
    points = []
    for pt in _children(seg, "trkpt"):
        try:
            lat = float(pt.attrib["lat"])
            lon = float(pt.attrib["lon"])
        except (KeyError, ValueError):
            log.warning("segment %s: trkpt without valid lat/lon, segment dropped", seg_id)
            return None
        times = _children(pt, "time")
        if not times or not (times[0].text or "").strip():
            log.warning("segment %s: point without timestamp, segment dropped", seg_id)
            return None
        try:
            t = parse_time(times[0].text)
        except ValueError:
            log.warning("segment %s: unparseable timestamp %r, segment dropped", seg_id, times[0].text)
            return None
        ele = _children(pt, "ele")
        elevation = float(ele[0].text) if ele and (ele[0].text or "").strip() else None
        x, y = projection.forward(lat, lon)
        points.append(TrackPoint(x, y, t, lat, lon, elevation))
    if any(b.t < a.t for a, b in zip(points, points[1:])):
        log.warning("segment %s: timestamps decrease, segment dropped", seg_id)
        return None
    return points


def write_gpx(track: Track) -> bytes:
    """Serialise a Track as GPX 1.1 (one trk holding every segment)."""
    ns = "http://www.topografix.com/GPX/1/1"
    root = ET.Element("gpx", {"version": "1.1", "creator": "trailspeed", "xmlns": ns})
    trk = ET.SubElement(root, "trk")
    ET.SubElement(trk, "name").text = track.file_id
    for seg in track.segments:
        tseg = ET.SubElement(trk, "trkseg")
        for p in seg.points:
            tp = ET.SubElement(tseg, "trkpt", {"lat": repr(p.lat), "lon": repr(p.lon)})
            if p.elevation is not None:
                ET.SubElement(tp, "ele").text = repr(p.elevation)
            ET.SubElement(tp, "time").text = format_time(p.t)
    return b'<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="utf-8")


def compute_kinematics(segment: TrackSegment) -> TrackSegment:
    """Attach hop distance (planar), duration and speed to every point."""
    if len(segment.points) < 2:
        raise ValueError(f"segment {segment.segment_id}: need at least 2 points for kinematics")
    xy = segment.xy()
    t = segment.times().astype(float)
    n = len(xy)
    dist = np.full(n, np.nan)
    dur = np.full(n, np.nan)
    dist[:-1] = np.hypot(*(xy[1:] - xy[:-1]).T)
    dur[:-1] = t[1:] - t[:-1]
    speed = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        moving = dur[:-1] > 0
        speed[:-1] = np.where(moving, dist[:-1] / np.where(moving, dur[:-1], 1.0) * 3.6, 0.0)
    stalled = (dur[:-1] == 0) & (dist[:-1] > 0)
    speed[:-1][stalled] = np.inf
    valid[:-1] = ~stalled
    return replace(segment, distance_m=dist, duration_s=dur, speed_kmh=speed, valid=valid)


def with_kinematics(track: Track) -> Track:
    """Compute kinematics for every segment, dropping segments with fewer than two points."""
    segs = []
    for seg in track.segments:
        if len(seg.points) < 2:
            log.warning("segment %s: fewer than 2 points, dropped", seg.segment_id)
            continue
        segs.append(seg if seg.has_kinematics else compute_kinematics(seg))
    return replace(track, segments=tuple(segs))


def _dedup_key(seg: TrackSegment):
    first, last = seg.points[0], seg.points[-1]
    return (first.x, first.y, last.x, last.y, first.t, last.t - first.t)


def deduplicate_segments(tracks: Sequence[Track]) -> list[Track]:
    """Keep only the first segment for each (start, end, start time, duration) key."""
    seen = set()
    out = []
    for track in tracks:
        kept = []
        for seg in track.segments:
            key = _dedup_key(seg)
            if key in seen:
                log.info("segment %s duplicates an earlier segment, dropped", seg.segment_id)
                continue
            seen.add(key)
            kept.append(seg)
        if kept:
            out.append(replace(track, segments=tuple(kept)))
    return out


def path_length(segments: Iterable[TrackSegment]) -> float:
    return float(sum(np.nansum(s.distance_m) for s in segments))
