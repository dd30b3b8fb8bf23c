"""Walking-data filtering: micro-breaks, 50 m section merging, speed bounds,
key-point segmentation, segment filters, outlier trimming, region exclusion.

Exclusions are recorded per section as a reason string.  Reasons fall in two
layers: segment-level ones (breaks, dropped segments) and dataset-level ones
applied by :func:`finalize_dataset` (trimming, the walking ceiling, region).
The dataset layer always recomputes from the sections that survived the
segment layer, which makes the whole pipeline idempotent.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .breakfinder import mask_runs
from .gpx import Source, Track, TrackSegment, format_time, parse_time
from .projection import grid_letters, grid_square, validate_code
from .terrain import TerrainClass, classify_obstruction


@dataclass(frozen=True)
class FilterParams:
    microbreak_max_s: float = 30.0
    microbreak_max_speed_kmh: float = 10.0
    microbreak_max_distance_m: float = 1000.0
    min_section_m: float = 50.0
    walking_ceiling_kmh: float = 10.0
    max_segment_median_kmh: float = 10.0
    hikr_max_mean_kmh: float = 10.0
    keypoint_distance_m: float = 500.0
    keypoint_duration_s: float = 180.0
    keypoint_speed_kmh: float = 100.0
    min_segment_duration_s: float = 150.0
    min_segment_distance_m: float = 250.0
    trim_fraction: float = 0.005
    whisker_iqr: float = 1.5
    heavy_obstruction_m: float = 0.10
    excluded_track_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class FilterBounds:
    max_q3: float = 6.0
    med_med: float = 3.2
    max_whisker: float = 8.1
    q3_min: float = 2.3


DATASET_REASONS = frozenset({"trim_slow", "trim_fast", "ceiling", "region"})


@dataclass(frozen=True)
class Section:
    track_id: str
    segment_id: str
    start_x: float
    start_y: float
    end_x: float
    end_y: float
    start_time: int
    duration_s: float
    distance_m: float
    speed_kmh: float
    elevation_m: float
    walking_slope_deg: float
    hill_slope_deg: float
    terrain: TerrainClass
    obstruction_m: Optional[float] = None
    exclusion: Optional[str] = None
    n_points: int = 1

    @property
    def is_break(self) -> bool:
        return self.exclusion is not None


@dataclass
class Hops:
    """Per-hop attributes of one segment (hop i joins point i to i + 1)."""

    track_id: str
    segment_id: str
    start_xy: np.ndarray
    end_xy: np.ndarray
    start_t: np.ndarray
    duration: np.ndarray
    distance: np.ndarray
    speed: np.ndarray
    elevation: np.ndarray
    walking_slope: np.ndarray
    hill_slope: np.ndarray
    obstruction: np.ndarray
    terrain: np.ndarray
    covered: np.ndarray

    def __len__(self) -> int:
        return len(self.distance)

    @classmethod
    def from_segment(cls, track_id: str, segment: TrackSegment, attrs: dict | None = None) -> "Hops":
        n = len(segment) - 1
        xy = segment.xy()
        if attrs is None:
            attrs = {
                "elevation": np.zeros(n + 1),
                "walking_slope": np.zeros(n + 1),
                "hill_slope": np.zeros(n + 1),
                "obstruction": np.full(n + 1, np.nan),
                "terrain": np.array([TerrainClass.OFFROAD_UNKNOWN] * (n + 1), dtype=object),
                "covered": np.ones(n + 1, dtype=bool),
            }
        return cls(
            track_id=track_id,
            segment_id=segment.segment_id,
            start_xy=xy[:-1],
            end_xy=xy[1:],
            start_t=segment.times()[:-1],
            duration=segment.duration_s[:-1],
            distance=segment.distance_m[:-1],
            speed=segment.speed_kmh[:-1],
            elevation=np.asarray(attrs["elevation"][:-1], dtype=float),
            walking_slope=np.asarray(attrs["walking_slope"][:-1], dtype=float),
            hill_slope=np.asarray(attrs["hill_slope"][:-1], dtype=float),
            obstruction=np.asarray(attrs["obstruction"][:-1], dtype=float),
            terrain=np.asarray(attrs["terrain"][:-1], dtype=object),
            covered=np.asarray(attrs["covered"][:-1], dtype=bool),
        )


def apply_microbreak_policy(hops: Hops, break_mask: np.ndarray, params: FilterParams = FilterParams()) -> np.ndarray:
    """Hop-level mask of breaks that stay excluded; short mid-segment pauses become data.

    ``break_mask`` may be point-aligned (one longer than the hops); the extra
    entry is ignored.
    """
    n = len(hops)
    mask = np.asarray(break_mask[:n], dtype=bool).copy()
    for a, b in mask_runs(mask):
        at_edge = a == 0 or b == n - 1
        dur = float(np.sum(hops.duration[a : b + 1]))
        bad = bool(
            np.any(hops.distance[a : b + 1] > params.microbreak_max_distance_m)
            or np.any(hops.speed[a : b + 1] > params.microbreak_max_speed_kmh)
        )
        if dur <= params.microbreak_max_s and not bad and not at_edge:
            mask[a : b + 1] = False
    return mask


def _weighted(values: np.ndarray, weights: np.ndarray) -> float:
    ok = np.isfinite(values)
    if not ok.any():
        return math.nan
    v, w = values[ok], weights[ok]
    total = float(np.sum(w))
    if total > 0:
        return float(np.sum(v * w) / total)
    return float(np.mean(v))


def _merge_terrain(classes: Sequence[TerrainClass], obstruction_m: Optional[float], heavy_m: float) -> TerrainClass:
    if any(c is TerrainClass.PAVED for c in classes):
        return TerrainClass.PAVED
    if any(c is TerrainClass.UNPAVED for c in classes):
        return TerrainClass.UNPAVED
    return TerrainClass.offroad(classify_obstruction(obstruction_m, heavy_m))


def make_section(hops: Hops, a: int, b: int, exclusion: Optional[str] = None, heavy_m: float = 0.10) -> Section:
    """Aggregate hops ``a..b`` (inclusive) into one Section."""
    sl = slice(a, b + 1)
    dur = hops.duration[sl]
    dist = float(np.sum(hops.distance[sl]))
    duration = float(np.sum(dur))
    if duration > 0:
        speed = dist / duration * 3.6
    else:
        speed = math.inf if dist > 0 else 0.0
    obs = _weighted(hops.obstruction[sl], dur)
    obs_val = None if math.isnan(obs) else obs
    return Section(
        track_id=hops.track_id,
        segment_id=hops.segment_id,
        start_x=float(hops.start_xy[a, 0]),
        start_y=float(hops.start_xy[a, 1]),
        end_x=float(hops.end_xy[b, 0]),
        end_y=float(hops.end_xy[b, 1]),
        start_time=int(hops.start_t[a]),
        duration_s=duration,
        distance_m=dist,
        speed_kmh=speed,
        elevation_m=float(hops.elevation[a]),
        walking_slope_deg=_weighted(hops.walking_slope[sl], dur),
        hill_slope_deg=_weighted(hops.hill_slope[sl], dur),
        terrain=_merge_terrain(list(hops.terrain[sl]), obs_val, heavy_m),
        obstruction_m=obs_val,
        exclusion=exclusion,
        n_points=b - a + 1,
    )


def merge_sections(
    hops: Hops,
    reasons: Sequence[Optional[str]] | np.ndarray | None = None,
    params: FilterParams = FilterParams(),
) -> list[Section]:
    """Cover every hop with exactly one Section.

    ``reasons[i]`` is None for usable hops, otherwise the exclusion reason.
    Each run of excluded hops sharing a reason becomes one excluded Section.
    Usable runs are merged greedily into sections of at least ``min_section_m``;
    a short trailing remainder joins the previous section, and a run that is
    too short overall is excluded as ``"short"``.
    """
    n = len(hops)
    if reasons is None:
        reasons = [None] * n
    reasons = list(reasons)
    out: list[Section] = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and reasons[j + 1] == reasons[i]:
            j += 1
        if reasons[i] is not None:
            out.append(make_section(hops, i, j, reasons[i], params.heavy_obstruction_m))
        else:
            out.extend(_merge_run(hops, i, j, params))
        i = j + 1
    return out


def _merge_run(hops: Hops, a: int, b: int, params: FilterParams) -> list[Section]:
    bounds: list[tuple[int, int]] = []
    start, acc = a, 0.0
    for k in range(a, b + 1):
        acc += hops.distance[k]
        if acc >= params.min_section_m:
            bounds.append((start, k))
            start, acc = k + 1, 0.0
    if start <= b:
        if bounds:
            bounds[-1] = (bounds[-1][0], b)
        else:
            return [make_section(hops, a, b, "short", params.heavy_obstruction_m)]
    return [make_section(hops, s, e, None, params.heavy_obstruction_m) for s, e in bounds]


def upper_whisker(values: np.ndarray, iqr_factor: float = 1.5) -> float:
    """Q3 + factor * IQR, capped at the largest observation."""
    q1, q3 = np.percentile(values, [25, 75])
    return float(min(q3 + iqr_factor * (q3 - q1), np.max(values)))


class InsufficientData(ValueError):
    pass


def compute_filter_bounds(speeds_by_segment: Iterable[Sequence[float]], iqr_factor: float = 1.5) -> FilterBounds:
    """Bounds from known-walking segments, each given as its section speeds."""
    medians, q3s, maxima = [], [], []
    for speeds in speeds_by_segment:
        s = np.asarray(speeds, dtype=float)
        s = s[np.isfinite(s)]
        if s.size == 0:
            continue
        medians.append(np.median(s))
        q3s.append(np.percentile(s, 75))
        maxima.append(np.max(s))
    if len(maxima) < 4:
        raise InsufficientData(f"need at least 4 walking segments for filter bounds, got {len(maxima)}")
    maxima = np.array(maxima)
    return FilterBounds(
        max_q3=float(np.percentile(maxima, 75)),
        med_med=float(np.median(medians)),
        max_whisker=upper_whisker(maxima, iqr_factor),
        q3_min=float(np.min(q3s)),
    )


def segment_by_key_points(hops: Hops, bounds: FilterBounds, params: FilterParams = FilterParams()) -> list[tuple[int, int]]:
    """Inclusive hop ranges kept after splitting a segment at key points.

    Key hops (very long, very slow to arrive, or implausibly fast) separate the
    segment into ranges and are excluded themselves.  A range holding a single
    hop is dropped, as is any range whose median speed exceeds ``max_q3``.
    """
    key = (
        (hops.distance > params.keypoint_distance_m)
        | (hops.duration > params.keypoint_duration_s)
        | (hops.speed > params.keypoint_speed_kmh)
    )
    kept = []
    for a, b in mask_runs(~key):
        if b == a:
            continue
        s = hops.speed[a : b + 1]
        s = s[np.isfinite(s)]
        if s.size and np.median(s) > bounds.max_q3:
            continue
        kept.append((a, b))
    return kept


@dataclass
class SegmentSections:
    track_id: str
    segment_id: str
    source: Source
    sections: list[Section]
    in_region: bool = False
    dropped: Optional[str] = None

    def usable(self) -> list[Section]:
        return [s for s in self.sections if s.exclusion is None]


def _retag_fast(sections: list[Section], ceiling: float) -> list[Section]:
    secs = list(sections)
    changed = True
    while changed:
        changed = False
        for i, s in enumerate(secs):
            if s.exclusion is not None or not s.speed_kmh > ceiling:
                continue
            at_edge = i == 0 or i == len(secs) - 1
            near_break = (i > 0 and secs[i - 1].exclusion is not None) or (
                i + 1 < len(secs) and secs[i + 1].exclusion is not None
            )
            if at_edge or near_break:
                secs[i] = replace(s, exclusion="fast_edge")
                changed = True
    return secs


def segment_drop_reason(
    usable: Sequence[Section], source: Source, bounds: FilterBounds, params: FilterParams = FilterParams()
) -> Optional[str]:
    if not usable:
        return "no_data"
    speeds = np.array([s.speed_kmh for s in usable])
    dist = float(sum(s.distance_m for s in usable))
    dur = float(sum(s.duration_s for s in usable))
    if dur < params.min_segment_duration_s:
        return "short_duration"
    if dist < params.min_segment_distance_m:
        return "short_distance"
    if source is Source.HIKR:
        if dist / dur * 3.6 > params.hikr_max_mean_kmh:
            return "mean_speed"
        return None
    if np.median(speeds) > bounds.max_q3:
        return "median_speed"
    if np.min(speeds) > bounds.med_med:
        return "min_speed"
    if np.percentile(speeds, 75) > bounds.max_whisker:
        return "q3_speed"
    if upper_whisker(speeds, params.whisker_iqr) < bounds.q3_min:
        return "whisker_speed"
    return None


def filter_segments(
    segments: Sequence[SegmentSections], bounds: FilterBounds, params: FilterParams = FilterParams()
) -> list[SegmentSections]:
    """Apply the segment-level filters, iterating each segment to a fixed point."""
    out = []
    for seg in segments:
        # dataset-level marks are recomputed later; this layer ignores them
        secs = [replace(s, exclusion=None) if s.exclusion in DATASET_REASONS else s for s in seg.sections]
        dropped = seg.dropped
        while dropped is None:
            before = [s.exclusion for s in secs]
            secs = _retag_fast(secs, params.walking_ceiling_kmh)
            reason = segment_drop_reason([s for s in secs if s.exclusion is None], seg.source, bounds, params)
            if reason is not None:
                dropped = reason
                secs = [s if s.exclusion is not None else replace(s, exclusion=f"segment:{reason}") for s in secs]
            if [s.exclusion for s in secs] == before:
                break
        out.append(replace(seg, sections=secs, dropped=dropped))
    return out


def trim_cutoffs(speeds: np.ndarray, fraction: float = 0.005) -> tuple[float, float]:
    return (
        float(np.percentile(speeds, 100 * fraction)),
        float(np.percentile(speeds, 100 * (1 - fraction))),
    )


def trim_outliers(sections: Sequence[Section], fraction: float = 0.005) -> list[Section]:
    """Mark sections strictly outside the [fraction, 1 - fraction] speed percentiles.

    Cutoffs are computed over sections that are usable or carry a dataset-level
    reason, so re-running on the output reproduces the same cutoffs.
    """
    pop = [i for i, s in enumerate(sections) if s.exclusion is None or s.exclusion in ("trim_slow", "trim_fast")]
    out = list(sections)
    if not pop:
        return out
    speeds = np.array([sections[i].speed_kmh for i in pop])
    lo, hi = trim_cutoffs(speeds, fraction)
    for i, v in zip(pop, speeds):
        reason = "trim_slow" if v < lo else "trim_fast" if v > hi else None
        out[i] = replace(sections[i], exclusion=reason)
    return out


@dataclass(frozen=True)
class GridRegion:
    """Region made of whole 100 km tiles plus listed sub-tiles, minus carve-outs."""

    tiles: tuple[str, ...] = ()
    subtiles: tuple[str, ...] = ()
    carve_out: tuple[str, ...] = ()

    def __post_init__(self):
        for code in (*self.tiles, *self.subtiles, *self.carve_out):
            validate_code(code)

    def contains(self, x: float, y: float) -> bool:
        letters = grid_letters(x, y)
        if not letters:
            return False
        inside = letters in self.tiles or any(
            grid_square(x, y, (len(c) - 2) // 2) == c for c in self.subtiles
        )
        if not inside:
            return False
        return not any(grid_square(x, y, (len(c) - 2) // 2) == c for c in self.carve_out)

    def contains_all(self, xy: np.ndarray) -> bool:
        return len(xy) > 0 and all(self.contains(float(x), float(y)) for x, y in xy)


SCOTLAND = GridRegion(
    tiles=tuple(
        "HP HT HU HW HX HY HZ NA NB NC ND NF NG NH NJ NK NL NM NN NO NR NS NT NU NW NX".split()
    ),
    subtiles=tuple(
        "NY" + c
        for c in "09 19 29 39 49 59 69 08 18 28 38 48 58 07 17 27 37 47 06 16 26 36".split()
    ),
)


def exclude_region(tracks: Sequence[Track], region: GridRegion = SCOTLAND) -> list[Track]:
    """Drop segments lying entirely inside ``region``."""
    out = []
    for track in tracks:
        segs = tuple(s for s in track.segments if not region.contains_all(s.xy()))
        out.append(replace(track, segments=segs))
    return out


def finalize_dataset(
    segments: Sequence[SegmentSections], params: FilterParams = FilterParams()
) -> list[SegmentSections]:
    """Dataset-level stage: trim, enforce the walking ceiling, exclude the region."""
    flat = []
    owners = []
    for k, seg in enumerate(segments):
        for s in seg.sections:
            if s.exclusion in DATASET_REASONS:
                s = replace(s, exclusion=None)
            flat.append(s)
            owners.append(k)
    flat = trim_outliers(flat, params.trim_fraction)
    for i, s in enumerate(flat):
        if s.exclusion is None and not (0 < s.speed_kmh <= params.walking_ceiling_kmh):
            flat[i] = replace(s, exclusion="ceiling")
        elif s.exclusion is None and segments[owners[i]].in_region:
            flat[i] = replace(s, exclusion="region")
    rebuilt = [replace(seg, sections=[]) for seg in segments]
    for k, s in zip(owners, flat):
        rebuilt[k].sections.append(s)
    return rebuilt


SECTION_COLUMNS = [
    "track_id", "segment_id", "start_x", "start_y", "end_x", "end_y", "start_time_iso",
    "duration_s", "distance_m", "speed_kmh", "elevation_m", "walking_slope_deg",
    "hill_slope_deg", "terrain_class", "is_break",
]


def _num(v: float) -> str:
    return repr(float(v))


def sections_to_csv(sections: Iterable[Section]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SECTION_COLUMNS)
    for s in sections:
        w.writerow([
            s.track_id, s.segment_id, _num(s.start_x), _num(s.start_y), _num(s.end_x), _num(s.end_y),
            format_time(s.start_time), _num(s.duration_s), _num(s.distance_m), _num(s.speed_kmh),
            _num(s.elevation_m), _num(s.walking_slope_deg), _num(s.hill_slope_deg),
            s.terrain.value, int(s.is_break),
        ])
    return buf.getvalue()


def write_sections_csv(sections: Iterable[Section], path: str | Path) -> None:
    Path(path).write_text(sections_to_csv(sections))


def read_sections_csv(path: str | Path) -> list[Section]:
    """Read a section CSV.  Break rows come back with exclusion ``"break"``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SECTION_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"section CSV missing columns: {sorted(missing)}")
        return [
            Section(
                track_id=r["track_id"],
                segment_id=r["segment_id"],
                start_x=float(r["start_x"]),
                start_y=float(r["start_y"]),
                end_x=float(r["end_x"]),
                end_y=float(r["end_y"]),
                start_time=parse_time(r["start_time_iso"]),
                duration_s=float(r["duration_s"]),
                distance_m=float(r["distance_m"]),
                speed_kmh=float(r["speed_kmh"]),
                elevation_m=float(r["elevation_m"]),
                walking_slope_deg=float(r["walking_slope_deg"]),
                hill_slope_deg=float(r["hill_slope_deg"]),
                terrain=TerrainClass(r["terrain_class"]),
                exclusion="break" if r["is_break"].strip() in ("1", "true", "True") else None,
            )
            for r in reader
        ]
