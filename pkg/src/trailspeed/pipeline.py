"""End-to-end orchestration: GPX files to a track store to a section dataset."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .breakfinder import find_breaks
from .config import PipelineConfig
from .filtering import (
    FilterBounds,
    Hops,
    SegmentSections,
    apply_microbreak_policy,
    compute_filter_bounds,
    filter_segments,
    finalize_dataset,
    merge_sections,
    segment_by_key_points,
)
from .gpx import (
    GpxParseError,
    Source,
    Track,
    TrackPoint,
    TrackSegment,
    deduplicate_segments,
    parse_gpx,
    with_kinematics,
)
from .terrain import RasterGrid, RoadIndex, TerrainLayers, read_ascii_grid

log = logging.getLogger(__name__)


class InvariantViolation(RuntimeError):
    pass


# ---------------------------------------------------------------- ingestion


def gpx_files(paths: Iterable[str | Path]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.rglob("*") if q.suffix.lower() == ".gpx" and q.is_file()))
        else:
            out.append(p)
    return out


@dataclass
class IngestResult:
    tracks: list[Track]
    failures: list[dict]


def ingest(paths: Sequence[str | Path], config: PipelineConfig, source: Source = Source.OTHER) -> IngestResult:
    """Parse every file, logging and recording the ones that fail, then deduplicate."""
    tracks, failures = [], []
    seen_ids: set[str] = set()
    for path in gpx_files(paths):
        fid = path.stem
        k = 1
        while fid in seen_ids:
            k += 1
            fid = f"{path.stem}~{k}"
        seen_ids.add(fid)
        try:
            track = parse_gpx(path.read_bytes(), fid, source, config.projection)
        except (OSError, GpxParseError) as exc:
            log.warning("skipping %s: %s", path, exc)
            failures.append({"path": str(path), "error": str(exc)})
            continue
        track = with_kinematics(track)
        if not track.segments:
            failures.append({"path": str(path), "error": "no usable segments"})
            continue
        tracks.append(track)
    return IngestResult(deduplicate_segments(tracks), failures)


def _point_row(p: TrackPoint) -> list:
    return [p.x, p.y, p.t, p.lat, p.lon, p.elevation]


def tracks_to_json(tracks: Sequence[Track]) -> str:
    doc = [
        {
            "file_id": t.file_id,
            "source": t.source.value,
            "segments": [{"segment_id": s.segment_id, "points": [_point_row(p) for p in s.points]} for s in t.segments],
        }
        for t in tracks
    ]
    # NaN lat/lon (tracks built from planar points) is written as null
    return json.dumps(_nan_to_none(doc), allow_nan=False, separators=(",", ":")) + "\n"


def _nan_to_none(o):
    if isinstance(o, float) and math.isnan(o):
        return None
    if isinstance(o, list):
        return [_nan_to_none(x) for x in o]
    if isinstance(o, dict):
        return {k: _nan_to_none(v) for k, v in o.items()}
    return o


def tracks_from_json(text: str) -> list[Track]:
    out = []
    for t in json.loads(text):
        segs = []
        for s in t["segments"]:
            pts = tuple(
                TrackPoint(x, y, int(tt), math.nan if la is None else la, math.nan if lo is None else lo, e)
                for x, y, tt, la, lo, e in s["points"]
            )
            segs.append(TrackSegment(s["segment_id"], pts))
        out.append(with_kinematics(Track(t["file_id"], Source(t["source"]), tuple(segs))))
    return out


STORE_FILE = "tracks.json"


def save_store(directory: str | Path, tracks: Sequence[Track]) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    p = d / STORE_FILE
    p.write_text(tracks_to_json(tracks))
    return p


def load_store(path: str | Path) -> list[Track]:
    p = Path(path)
    if p.is_dir():
        p = p / STORE_FILE
    return tracks_from_json(p.read_text())


# ---------------------------------------------------------------- cleaning


def load_layers(config: PipelineConfig) -> TerrainLayers:
    src = config.terrain
    dtm: Optional[RasterGrid] = read_ascii_grid(src.dtm) if src.dtm else None
    lidar = [(read_ascii_grid(a), read_ascii_grid(b)) for a, b in src.lidar]
    roads = RoadIndex.from_geojson(src.roads) if src.roads else None
    return TerrainLayers(dtm, lidar, roads, src.params)


@dataclass
class PreparedSegment:
    """Per-segment work done before the dataset-wide bounds are known."""

    track_id: str
    source: Source
    segment_id: str
    hops: Optional[Hops]
    reasons: list
    in_region: bool
    dropped: Optional[str] = None
    distance_m: float = 0.0
    duration_s: float = 0.0


def prepare_track(track: Track, config: PipelineConfig, layers: TerrainLayers) -> list[PreparedSegment]:
    fp = config.filters
    out = []
    for seg in track.segments:
        d = float(np.nansum(seg.distance_m))
        dur = float(np.nansum(seg.duration_s))
        in_region = bool(config.exclude_region and config.region.contains_all(seg.xy()))
        base = dict(track_id=track.file_id, source=track.source, segment_id=seg.segment_id, in_region=in_region, distance_m=d, duration_s=dur)
        if track.file_id in fp.excluded_track_ids:
            out.append(PreparedSegment(hops=None, reasons=[], dropped="excluded_track", **base))
            continue
        speeds = seg.speed_kmh[:-1]
        if np.median(speeds) > fp.max_segment_median_kmh:
            out.append(PreparedSegment(hops=None, reasons=[], dropped="vehicle_median_speed", **base))
            continue
        attrs = layers.enrich(seg.xy(), seg.distance_m)
        hops = Hops.from_segment(track.file_id, seg, attrs)
        brk = apply_microbreak_policy(hops, find_breaks(seg, config.breaks).mask, fp)
        reasons = [
            "break" if brk[i] else "coverage" if not hops.covered[i] else None for i in range(len(hops))
        ]
        out.append(PreparedSegment(hops=hops, reasons=reasons, **base))
    return out


_WORKER: dict = {}


def _init_worker(config: PipelineConfig, layers: TerrainLayers) -> None:
    _WORKER["config"] = config
    _WORKER["layers"] = layers


def _prepare_in_worker(track: Track) -> list[PreparedSegment]:
    return prepare_track(track, _WORKER["config"], _WORKER["layers"])


def prepare_all(tracks: Sequence[Track], config: PipelineConfig, layers: TerrainLayers, jobs: int = 1) -> list[PreparedSegment]:
    if jobs <= 1 or len(tracks) < 2:
        results = [prepare_track(t, config, layers) for t in tracks]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(config, layers)) as pool:
            results = list(pool.map(_prepare_in_worker, tracks, chunksize=max(1, len(tracks) // (4 * jobs))))
    return [p for r in results for p in r]


def _sections(prep: PreparedSegment, config: PipelineConfig, bounds: Optional[FilterBounds]) -> SegmentSections:
    if prep.hops is None:
        return SegmentSections(prep.track_id, prep.segment_id, prep.source, [], prep.in_region, prep.dropped)
    reasons = list(prep.reasons)
    if bounds is not None and prep.source is not Source.HIKR:
        keep = np.zeros(len(reasons), dtype=bool)
        for a, b in segment_by_key_points(prep.hops, bounds, config.filters):
            keep[a : b + 1] = True
        reasons = [r if r is not None or keep[i] else "keypoint" for i, r in enumerate(reasons)]
    secs = merge_sections(prep.hops, reasons, config.filters)
    check_conservation(prep.hops, secs)
    return SegmentSections(prep.track_id, prep.segment_id, prep.source, secs, prep.in_region, None)


def check_conservation(hops: Hops, sections) -> None:
    dur = float(np.sum(hops.duration))
    dist = float(np.sum(hops.distance))
    sdur = float(sum(s.duration_s for s in sections))
    sdist = float(sum(s.distance_m for s in sections))
    if sdur != dur or not math.isclose(sdist, dist, rel_tol=1e-12, abs_tol=1e-9):
        raise InvariantViolation(f"segment {hops.segment_id}: merging changed totals ({dist}, {dur}) -> ({sdist}, {sdur})")


def hikr_bounds(prepared: Sequence[PreparedSegment], config: PipelineConfig) -> tuple[FilterBounds, str]:
    """Bounds from filtered Hikr segments, or the configured defaults when too few exist."""
    hikr = [_sections(p, config, None) for p in prepared if p.source is Source.HIKR]
    hikr = filter_segments(hikr, config.default_bounds, config.filters)
    speeds = [[s.speed_kmh for s in seg.usable()] for seg in hikr if seg.dropped is None and seg.usable()]
    if len(speeds) < max(config.min_bound_segments, 4):
        return config.default_bounds, "default"
    return compute_filter_bounds(speeds, config.filters.whisker_iqr), "hikr"


@dataclass
class CleanResult:
    segments: list[SegmentSections]
    bounds: FilterBounds
    bounds_source: str

    @property
    def sections(self):
        return [s for seg in self.segments for s in seg.sections]

    def usable(self):
        return [s for s in self.sections if s.exclusion is None]


def clean(tracks: Sequence[Track], config: PipelineConfig, layers: Optional[TerrainLayers] = None, jobs: int = 1) -> CleanResult:
    layers = layers if layers is not None else load_layers(config)
    prepared = prepare_all(tracks, config, layers, jobs)
    bounds, origin = hikr_bounds(prepared, config)
    segs = [_sections(p, config, bounds) for p in prepared]
    segs = filter_segments(segs, bounds, config.filters)
    segs = finalize_dataset(segs, config.filters)
    for seg in segs:
        for s in seg.sections:
            if s.exclusion is None and not (0 < s.speed_kmh <= config.filters.walking_ceiling_kmh):
                raise InvariantViolation(f"section in {seg.segment_id} kept with speed {s.speed_kmh}")
    return CleanResult(segs, bounds, origin)


def recheck(result: CleanResult, config: PipelineConfig) -> CleanResult:
    """Run the segment and dataset filters again over an existing result."""
    segs = filter_segments(result.segments, result.bounds, config.filters)
    return replace(result, segments=finalize_dataset(segs, config.filters))


DROP_COLUMNS = ["track_id", "segment_id", "source", "dropped", "sections", "excluded_sections", "reasons"]


def drop_manifest_rows(result: CleanResult) -> list[list]:
    rows = []
    for seg in result.segments:
        counts: dict[str, int] = {}
        for s in seg.sections:
            if s.exclusion is not None:
                counts[s.exclusion] = counts.get(s.exclusion, 0) + 1
        rows.append([
            seg.track_id, seg.segment_id, seg.source.value, seg.dropped or "",
            len(seg.sections), sum(counts.values()),
            ";".join(f"{k}={v}" for k, v in sorted(counts.items())),
        ])
    return rows
