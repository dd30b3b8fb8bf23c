"""Synthetic tracks, terrain and section datasets with known ground truth."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fitting import FitData
from .gpx import Source, Track, TrackPoint, TrackSegment, compute_kinematics, write_gpx
from .models import DEFAULT_COEFFICIENTS, GlmCoefficients
from .projection import TransverseMercator
from .terrain import RasterGrid, TerrainClass

# A default origin well inside England, far from any excluded grid square.
ORIGIN = (430000.0, 380000.0)


def segment_from_arrays(segment_id: str, xy: np.ndarray, t: np.ndarray, projection: Optional[TransverseMercator] = None) -> TrackSegment:
    """Build a segment with kinematics; lat/lon are filled from ``projection`` when given."""
    pts = []
    for (x, y), ti in zip(np.asarray(xy, dtype=float), np.asarray(t)):
        if projection is not None:
            lat, lon = projection.inverse(x, y)
            pts.append(TrackPoint(float(x), float(y), int(ti), lat, lon))
        else:
            pts.append(TrackPoint(float(x), float(y), int(ti)))
    return compute_kinematics(TrackSegment(segment_id, tuple(pts)))


def walk_path(
    rng: np.random.Generator,
    n: int,
    speed_kmh: float = 4.5,
    dt_s: int = 10,
    heading_sd_deg: float = 3.0,
    heading_deg: Optional[float] = None,
    start: Sequence[float] = ORIGIN,
    speed_sd: float = 0.0,
) -> np.ndarray:
    """Points of a walk with a gently wandering heading (bearing from north)."""
    h0 = rng.uniform(0, 360) if heading_deg is None else heading_deg
    heading = np.radians(h0 + np.cumsum(rng.normal(0, heading_sd_deg, n - 1)))
    speed = np.full(n - 1, speed_kmh)
    if speed_sd:
        speed = np.clip(speed + rng.normal(0, speed_sd, n - 1), 0.5, 9.0)
    step = speed / 3.6 * dt_s
    d = np.column_stack([np.sin(heading) * step, np.cos(heading) * step])
    return np.vstack([np.zeros(2), np.cumsum(d, axis=0)]) + np.asarray(start, dtype=float)


def drift_bout(rng: np.random.Generator, centre: np.ndarray, n: int, radius: float) -> np.ndarray:
    """Stationary receiver jitter: random directions, distance below ``radius`` from ``centre``."""
    ang = rng.uniform(0, 2 * np.pi, n)
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    return centre + np.column_stack([np.cos(ang) * r, np.sin(ang) * r])


@dataclass(frozen=True)
class PlantedTrack:
    segment: TrackSegment
    truth: np.ndarray  # per point: True inside a planted stop


def track_with_stops(
    rng: np.random.Generator,
    segment_id: str = "synthetic:0",
    legs: int = 4,
    leg_points: int = 120,
    stop_points: tuple[int, int] = (30, 60),
    speed_kmh: float = 4.5,
    dt_s: int = 10,
    t0: int = 1_600_000_000,
    speed_sd: float = 0.0,
) -> PlantedTrack:
    """Walking legs separated by stops of at least five minutes of GPS drift.

    Drift stays within half the walking hop length of the stop location.
    """
    hop = speed_kmh / 3.6 * dt_s
    pieces, truth = [], []
    pos = np.asarray(ORIGIN, dtype=float)
    for k in range(legs):
        walk = walk_path(rng, leg_points, speed_kmh, dt_s, start=pos, speed_sd=speed_sd)
        if k:
            walk = walk[1:]
        pieces.append(walk)
        truth.append(np.zeros(len(walk), dtype=bool))
        pos = walk[-1]
        if k < legs - 1:
            m = int(rng.integers(stop_points[0], stop_points[1] + 1))
            pieces.append(drift_bout(rng, pos, m, 0.45 * hop))
            truth.append(np.ones(m, dtype=bool))
    xy = np.vstack(pieces)
    t = t0 + dt_s * np.arange(len(xy))
    return PlantedTrack(segment_from_arrays(segment_id, xy, t), np.concatenate(truth))


def clean_track(rng: np.random.Generator, segment_id: str = "clean:0", n: int = 400, speed_kmh: float = 4.5, dt_s: int = 10, t0: int = 1_600_000_000) -> TrackSegment:
    xy = walk_path(rng, n, speed_kmh, dt_s)
    return segment_from_arrays(segment_id, xy, t0 + dt_s * np.arange(n))


def northward_wobble(
    rng: np.random.Generator,
    segment_id: str = "wobble:0",
    n_walk: int = 60,
    n_wobble: int = 60,
    speed_kmh: float = 4.5,
    dt_s: int = 10,
    t0: int = 1_600_000_000,
) -> TrackSegment:
    """Slow, zig-zagging progress that keeps heading north, between two normal walks.

    The wobble is tight and slow enough to form a point cluster, but every hop
    bears into the north-east or north-west quadrant.
    """
    hop = speed_kmh / 3.6 * dt_s
    a = walk_path(rng, n_walk, speed_kmh, dt_s, heading_deg=0.0, heading_sd_deg=1.0)
    k = np.arange(1, n_wobble + 1)
    side = np.where(k % 2 == 1, 1.0, -1.0) * 0.3 * hop + rng.normal(0, 0.02 * hop, n_wobble)
    wobble = a[-1] + np.column_stack([side, k * 0.08 * hop])
    b = walk_path(rng, n_walk + 1, speed_kmh, dt_s, heading_deg=0.0, heading_sd_deg=1.0, start=wobble[-1])[1:]
    xy = np.vstack([a, wobble, b])
    return segment_from_arrays(segment_id, xy, t0 + dt_s * np.arange(len(xy)))


def drive_path(rng: np.random.Generator, n: int, speed_kmh: float = 50.0, dt_s: int = 10, start: Sequence[float] = ORIGIN) -> np.ndarray:
    return walk_path(rng, n, speed_kmh, dt_s, heading_sd_deg=1.0, start=start)


def corpus(
    n_tracks: int,
    points_per_track: int,
    seed: int = 0,
    source: Source = Source.HIKR,
    drives: int = 0,
    stops: bool = False,
    dt_s: int = 10,
    projection: Optional[TransverseMercator] = None,
) -> list[Track]:
    """Tracks spread over a 40 km square, ``drives`` of them replaced by car journeys."""
    rng = np.random.default_rng(seed)
    projection = projection or TransverseMercator()
    tracks = []
    for i in range(n_tracks):
        start = np.asarray(ORIGIN) + rng.uniform(0, 40000, 2)
        t0 = 1_600_000_000 + 86400 * i
        pace = rng.uniform(3.0, 6.0)
        if i < drives:
            xy = drive_path(rng, points_per_track, start=start, dt_s=dt_s)
        elif stops:
            pt = track_with_stops(rng, legs=3, leg_points=max(points_per_track // 4, 20), speed_kmh=pace, dt_s=dt_s, t0=t0, speed_sd=0.6)
            xy = pt.segment.xy() - np.asarray(ORIGIN) + start
        else:
            xy = walk_path(rng, points_per_track, pace, dt_s, start=start, speed_sd=0.6)
        t = t0 + dt_s * np.arange(len(xy))
        fid = f"{source.value}{i:04d}"
        seg = segment_from_arrays(f"{fid}:0", xy, t, projection)
        tracks.append(Track(fid, source, (seg,)))
    return tracks


def corpus_gpx(tracks: Sequence[Track]) -> dict[str, bytes]:
    return {t.file_id + ".gpx": write_gpx(t) for t in tracks}


def ridge_dtm(
    width: int = 400, height: int = 200, cell: float = 5.0, peak_m: float = 300.0, half_width_m: float = 300.0,
    origin: Sequence[float] = ORIGIN,
) -> RasterGrid:
    """A Gaussian ridge running north-south through the middle of the grid."""
    x = np.arange(width) * cell
    cx = x.mean()
    row = peak_m * np.exp(-0.5 * ((x - cx) / half_width_m) ** 2)
    values = np.tile(row, (height, 1))
    return RasterGrid(origin[0], origin[1], cell, values)


def plane_dtm(gx: float, gy: float, size: int = 5, cell: float = 5.0, offset: float = 0.0) -> RasterGrid:
    """z = offset + gx·x + gy·y sampled at cell centres."""
    c = np.arange(size) * cell
    values = offset + gx * c[None, :] + gy * c[:, None]
    return RasterGrid(0.0, 0.0, cell, values)


def road_geojson(lines: Sequence[tuple[str, Sequence[Sequence[float]]]]) -> dict:
    return {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": {"highway": kind}, "geometry": {"type": "LineString", "coordinates": [list(map(float, p)) for p in coords]}}
            for kind, coords in lines
        ],
    }


def write_geojson(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh)


def glm_dataset(
    rng: np.random.Generator,
    n: int = 100_000,
    n_tracks: int = 500,
    coefficients: GlmCoefficients = DEFAULT_COEFFICIENTS,
    terrains: Sequence[TerrainClass] = (TerrainClass.PAVED,),
    sigma: float = 0.1,
    track_sd: float = 0.0,
    slope_max: float = 30.0,
) -> FitData:
    """Sections drawn from the log-linear speed model with mean-one log-normal noise.

    ``track_sd`` adds a shared log-scale offset per track (within-track correlation).
    """
    theta = rng.uniform(-slope_max, slope_max, n)
    phi = np.abs(theta) + rng.uniform(0, 10, n)
    terrain = np.array([terrains[i] for i in rng.integers(0, len(terrains), n)], dtype=object)
    track = np.sort(rng.integers(0, n_tracks, n))
    coef = np.array([coefficients[TerrainClass(t)] for t in terrain])
    eta = coef[:, 0] + coef[:, 1] * phi + coef[:, 2] * theta + coef[:, 3] * theta**2
    if track_sd:
        eta = eta + rng.normal(0, track_sd, n_tracks)[track] - track_sd**2 / 2
    noise = rng.normal(0, sigma, n) - sigma**2 / 2 if sigma else 0.0
    speed = np.exp(eta + noise)
    return FitData(speed, theta, phi, terrain, np.array([f"t{k:05d}" for k in track], dtype=object))


def ridge_profile(dtm: RasterGrid, n: int = 200, heading_deg: float = 90.0) -> np.ndarray:
    """Points crossing the grid in a straight line through its centre."""
    w = dtm.width * dtm.cell_size
    h = dtm.height * dtm.cell_size
    cx, cy = dtm.origin_x + w / 2 - dtm.cell_size / 2, dtm.origin_y + h / 2 - dtm.cell_size / 2
    half = 0.45 * (w if heading_deg % 180 == 90 else h)
    s = np.linspace(-half, half, n)
    b = np.radians(heading_deg)
    return np.column_stack([cx + s * np.sin(b), cy + s * np.cos(b)])
