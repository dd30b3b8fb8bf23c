"""Terrain enrichment: elevation, walking and hill slope, road class, obstruction."""

from __future__ import annotations

import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class CoverageGap(LookupError):
    """A location falls outside a raster or on a nodata cell."""


class Obstruction(str, enum.Enum):
    LIGHT = "light"
    HEAVY = "heavy"
    UNKNOWN = "unknown"


class TerrainClass(str, enum.Enum):
    PAVED = "paved"
    UNPAVED = "unpaved"
    OFFROAD_UNKNOWN = "offroad_unknown"
    OFFROAD_LIGHT = "offroad_light"
    OFFROAD_HEAVY = "offroad_heavy"

    @property
    def on_road(self) -> bool:
        return self in (TerrainClass.PAVED, TerrainClass.UNPAVED)

    @property
    def road(self) -> str:
        return self.value if self.on_road else "offroad"

    @property
    def obstruction(self) -> Optional[Obstruction]:
        if self.on_road:
            return None
        return Obstruction(self.value.split("_", 1)[1])

    @classmethod
    def offroad(cls, obstruction: Obstruction) -> "TerrainClass":
        return cls(f"offroad_{Obstruction(obstruction).value}")


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """Regular grid; ``values[row, col]`` with row 0 the southern-most row.

    ``origin_x``/``origin_y`` are the centre of the lower-left cell.
    """

    origin_x: float
    origin_y: float
    cell_size: float
    values: np.ndarray
    nodata: float = -9999.0

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise ValueError("values must be a non-empty 2-D array")
        self.values.setflags(write=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell containing (x, y); raises CoverageGap outside the grid."""
        col = math.floor((x - self.origin_x) / self.cell_size + 0.5)
        row = math.floor((y - self.origin_y) / self.cell_size + 0.5)
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise CoverageGap(f"({x}, {y}) outside raster")
        return row, col

    def is_nodata(self, v: float) -> bool:
        return not math.isfinite(v) or v == self.nodata

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return self.origin_x + col * self.cell_size, self.origin_y + row * self.cell_size


def read_ascii_grid(source: str | Path) -> RasterGrid:
    """Read an ESRI ASCII grid (``.asc``) file."""
    text = Path(source).read_text()
    return parse_ascii_grid(text)


def parse_ascii_grid(text: str) -> RasterGrid:
    tokens = text.split()
    header: dict[str, str] = {}
    i = 0
    while i < len(tokens) and tokens[i][0].isalpha():
        header[tokens[i].lower()] = tokens[i + 1]
        i += 2
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        cs = float(header["cellsize"])
    except KeyError as exc:
        raise ValueError(f"ASCII grid header missing {exc.args[0]}") from None
    if "xllcenter" in header:
        ox, oy = float(header["xllcenter"]), float(header["yllcenter"])
    else:
        ox, oy = float(header["xllcorner"]) + cs / 2, float(header["yllcorner"]) + cs / 2
    nodata = float(header.get("nodata_value", -9999))
    data = np.array(tokens[i:], dtype=float)
    if data.size != ncols * nrows:
        raise ValueError(f"ASCII grid expects {ncols * nrows} values, found {data.size}")
    # file rows run north to south
    values = data.reshape(nrows, ncols)[::-1].copy()
    return RasterGrid(ox, oy, cs, values, nodata)


def write_ascii_grid(grid: RasterGrid, path: str | Path) -> None:
    cs = grid.cell_size
    lines = [
        f"ncols {grid.width}",
        f"nrows {grid.height}",
        f"xllcorner {grid.origin_x - cs / 2!r}",
        f"yllcorner {grid.origin_y - cs / 2!r}",
        f"cellsize {cs!r}",
        f"NODATA_value {grid.nodata!r}",
    ]
    for row in grid.values[::-1]:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def sample_elevation(grid: RasterGrid, x: float, y: float) -> float:
    """Value of the cell containing (x, y)."""
    row, col = grid.cell_of(x, y)
    v = float(grid.values[row, col])
    if grid.is_nodata(v):
        raise CoverageGap(f"({x}, {y}) on nodata cell")
    return v


def hill_slope(grid: RasterGrid, x: float, y: float) -> float:
    """Terrain slope in degrees from the Zevenbergen-Thorne quadratic surface fit.

    Only the first-order terms G and H of the fitted surface enter the slope,
    so the 3x3 window reduces to central differences across the centre cell.
    """
    row, col = grid.cell_of(x, y)
    if not (1 <= row < grid.height - 1 and 1 <= col < grid.width - 1):
        raise CoverageGap(f"({x}, {y}) has an incomplete 3x3 window")
    win = grid.values[row - 1 : row + 2, col - 1 : col + 2]
    if any(grid.is_nodata(float(v)) for v in win.flat):
        raise CoverageGap(f"({x}, {y}) window contains nodata")
    L = grid.cell_size
    g = (win[1, 2] - win[1, 0]) / (2 * L)
    h = (win[2, 1] - win[0, 1]) / (2 * L)
    return math.degrees(math.atan(math.hypot(g, h)))


def walking_slope(elev_start: float, elev_end: float, horiz_dist: float) -> float:
    """Signed slope of travel in degrees, positive uphill."""
    if not horiz_dist > 0:
        raise ValueError("walking slope undefined for zero horizontal distance")
    return math.degrees(math.atan((elev_end - elev_start) / horiz_dist))


PAVED_TYPES = frozenset(
    """cycleway footway living_street motorway motorway_link pedestrian primary
    primary_link residential secondary secondary_link service steps tertiary
    tertiary_link trunk trunk_link unclassified unknown""".split()
)
UNPAVED_TYPES = frozenset(
    """bridleway path track track_grade1 track_grade2 track_grade3 track_grade4
    track_grade5""".split()
)


def is_paved(road_type: str, unpaved_types: Iterable[str] = UNPAVED_TYPES) -> bool:
    """Anything not explicitly unpaved counts as paved."""
    return road_type.strip().lower() not in set(unpaved_types)


def _point_segment_distance(px, py, ax, ay, bx, by) -> float:
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    if denom == 0:
        return math.hypot(px - ax, py - ay)
    u = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / denom))
    return math.hypot(px - (ax + u * dx), py - (ay + u * dy))


@dataclass
class RoadIndex:
    """Polyline road features bucketed on a uniform grid for radius queries."""

    bucket_size: float = 100.0
    _lines: list = field(default_factory=list, repr=False)
    _buckets: dict = field(default_factory=lambda: defaultdict(list), repr=False)

    def add(self, road_type: str, coords: Sequence[Sequence[float]]) -> None:
        coords = [(float(x), float(y)) for x, y, *_ in coords]
        for a, b in zip(coords, coords[1:] or coords):
            idx = len(self._lines)
            self._lines.append((road_type.strip().lower(), a, b))
            s = self.bucket_size
            for i in range(math.floor(min(a[0], b[0]) / s), math.floor(max(a[0], b[0]) / s) + 1):
                for j in range(math.floor(min(a[1], b[1]) / s), math.floor(max(a[1], b[1]) / s) + 1):
                    self._buckets[(i, j)].append(idx)

    def __len__(self) -> int:
        return len(self._lines)

    def types_within(self, x: float, y: float, radius: float) -> set[str]:
        s = self.bucket_size
        found = set()
        seen = set()
        for i in range(math.floor((x - radius) / s), math.floor((x + radius) / s) + 1):
            for j in range(math.floor((y - radius) / s), math.floor((y + radius) / s) + 1):
                for idx in self._buckets.get((i, j), ()):
                    if idx in seen:
                        continue
                    seen.add(idx)
                    rtype, a, b = self._lines[idx]
                    if _point_segment_distance(x, y, *a, *b) <= radius:
                        found.add(rtype)
        return found

    @classmethod
    def from_geojson(cls, source: str | Path | dict, bucket_size: float = 100.0) -> "RoadIndex":
        """Load LineString/MultiLineString features in projected metres.

        The road type is read from the ``highway`` property, falling back to
        ``road_type``/``type``; features without one are typed ``unknown``.
        """
        doc = source if isinstance(source, dict) else json.loads(Path(source).read_text())
        index = cls(bucket_size=bucket_size)
        for feat in doc.get("features", []):
            props = feat.get("properties") or {}
            rtype = str(props.get("highway") or props.get("road_type") or props.get("type") or "unknown")
            geom = feat.get("geometry") or {}
            if geom.get("type") == "LineString":
                index.add(rtype, geom["coordinates"])
            elif geom.get("type") == "MultiLineString":
                for part in geom["coordinates"]:
                    index.add(rtype, part)
        return index


def classify_road(
    index: Optional[RoadIndex],
    x: float,
    y: float,
    radius: float = 50.0,
    unpaved_types: Iterable[str] = UNPAVED_TYPES,
) -> TerrainClass:
    """Road class at a point; off-road results use the UNKNOWN obstruction placeholder."""
    types = index.types_within(x, y, radius) if index is not None else set()
    if not types:
        return TerrainClass.OFFROAD_UNKNOWN
    unpaved = set(unpaved_types)
    if any(is_paved(t, unpaved) for t in types):
        return TerrainClass.PAVED
    return TerrainClass.UNPAVED


def obstruction_height(dsm: RasterGrid, dtm: RasterGrid, x: float, y: float) -> Optional[float]:
    try:
        surface = sample_elevation(dsm, x, y)
        ground = sample_elevation(dtm, x, y)
    except CoverageGap:
        return None
    return max(surface - ground, 0.0)


def classify_obstruction(height: Optional[float], heavy_above_m: float = 0.10) -> Obstruction:
    if height is None or not math.isfinite(height):
        return Obstruction.UNKNOWN
    return Obstruction.HEAVY if height > heavy_above_m else Obstruction.LIGHT


@dataclass(frozen=True)
class TerrainParams:
    road_radius_m: float = 50.0
    heavy_obstruction_m: float = 0.10
    unpaved_types: tuple[str, ...] = tuple(sorted(UNPAVED_TYPES))


@dataclass
class TerrainLayers:
    """The loaded raster and vector layers used to enrich track points."""

    dtm: Optional[RasterGrid] = None
    lidar: list[tuple[RasterGrid, RasterGrid]] = field(default_factory=list)
    roads: Optional[RoadIndex] = None
    params: TerrainParams = field(default_factory=TerrainParams)

    def obstruction_at(self, x: float, y: float) -> Optional[float]:
        for dsm, dtm in self.lidar:
            h = obstruction_height(dsm, dtm, x, y)
            if h is not None:
                return h
        return None

    def enrich(self, xy: np.ndarray, distance: np.ndarray) -> dict[str, np.ndarray]:
        """Per-hop terrain attributes for a segment's points.

        Returns arrays keyed ``elevation``, ``hill_slope``, ``walking_slope``,
        ``obstruction``, ``terrain`` (TerrainClass values) and ``covered``.
        Without a DTM elevation and slopes are reported as zero.
        """
        n = len(xy)
        elev = np.zeros(n)
        phi = np.zeros(n)
        covered = np.ones(n, dtype=bool)
        if self.dtm is not None:
            for i, (x, y) in enumerate(xy):
                try:
                    elev[i] = sample_elevation(self.dtm, x, y)
                    phi[i] = hill_slope(self.dtm, x, y)
                except CoverageGap:
                    elev[i] = np.nan
                    phi[i] = np.nan
                    covered[i] = False
        theta = np.zeros(n)
        if n > 1:
            d = distance[:-1]
            dz = elev[1:] - elev[:-1]
            with np.errstate(divide="ignore", invalid="ignore"):
                theta[:-1] = np.where(d > 0, np.degrees(np.arctan(dz / np.where(d > 0, d, 1.0))), 0.0)
            covered[:-1] &= covered[1:]
        theta[-1] = np.nan
        obstruction = np.full(n, np.nan)
        terrain = np.empty(n, dtype=object)
        p = self.params
        for i, (x, y) in enumerate(xy):
            cls = classify_road(self.roads, x, y, p.road_radius_m, p.unpaved_types)
            if not cls.on_road:
                h = self.obstruction_at(x, y)
                if h is not None:
                    obstruction[i] = h
                cls = TerrainClass.offroad(classify_obstruction(h, p.heavy_obstruction_m))
            terrain[i] = cls
        return {
            "elevation": elev,
            "hill_slope": phi,
            "walking_slope": theta,
            "obstruction": obstruction,
            "terrain": terrain,
            "covered": covered,
        }
