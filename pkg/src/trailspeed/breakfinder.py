"""Break detection for a single track segment.

Trivially identifiable break points (no movement, long or distant single
points, catch-up jumps after a long pause) are tagged directly.  Remaining
breaks are found as time-limited density clusters of drifting GPS fixes,
scored by point speed and turning angle, and confirmed only when the drift
shows motion in opposite quadrants.
"""

from __future__ import annotations

import bisect
import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gpx import TrackSegment, compute_kinematics


@dataclass(frozen=True)
class BreakParams:
    neighbourhood_window_s: float = 600.0
    min_nonconsecutive: int = 5
    min_consecutive: int = 10
    high_speed_factor: float = 2.0
    very_low_speed_kmh: float = 0.01
    high_speed_class_kmh: float = 10.0
    narrow_angle_deg: float = 90.0
    max_point_distance_m: float = 1000.0
    max_point_duration_s: float = 180.0
    catchup_speed_kmh: float = 10.0


@dataclass(frozen=True)
class SegmentStats:
    r_median: float
    s_median: float


class BreakLikelihood(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


class SpeedClass(enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


_LIKELIHOOD = {
    (True, SpeedClass.LOW): BreakLikelihood.HIGH,
    (True, SpeedClass.MEDIUM): BreakLikelihood.MEDIUM,
    (True, SpeedClass.HIGH): BreakLikelihood.HIGH,
    (False, SpeedClass.LOW): BreakLikelihood.MEDIUM,
    (False, SpeedClass.MEDIUM): BreakLikelihood.LOW,
    (False, SpeedClass.HIGH): BreakLikelihood.MEDIUM,
}


def likelihood_from_classes(narrow: bool, speed_class: SpeedClass) -> BreakLikelihood:
    return _LIKELIHOOD[(narrow, speed_class)]


@dataclass(frozen=True)
class Cluster:
    members: tuple[int, ...]
    segment_id: str = ""

    def __contains__(self, i: int) -> bool:
        return i in set(self.members)

    def __len__(self) -> int:
        return len(self.members)


def _ensure_kinematics(segment: TrackSegment) -> TrackSegment:
    return segment if segment.has_kinematics else compute_kinematics(segment)


def segment_stats(segment: TrackSegment) -> SegmentStats:
    """Median hop distance and median hop speed over the whole segment."""
    segment = _ensure_kinematics(segment)
    d = segment.distance_m[:-1]
    s = segment.speed_kmh[:-1]
    s = s[np.isfinite(s)]
    return SegmentStats(
        r_median=float(np.median(d)) if d.size else 0.0,
        s_median=float(np.median(s)) if s.size else 0.0,
    )


def point_angles(xy: np.ndarray) -> np.ndarray:
    """Angle in degrees at each interior point; NaN at the ends, 0 where a leg has no length."""
    n = len(xy)
    out = np.full(n, np.nan)
    if n < 3:
        return out
    a = xy[:-2] - xy[1:-1]
    b = xy[2:] - xy[1:-1]
    na = np.hypot(*a.T)
    nb = np.hypot(*b.T)
    deg = (na == 0) | (nb == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.einsum("ij,ij->i", a, b) / (na * nb)
    ang = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    ang[deg] = 0.0
    out[1:-1] = ang
    return out


def bearings(xy: np.ndarray) -> np.ndarray:
    """Compass bearing (0-360, clockwise from north) of each hop; NaN for the last point and zero hops."""
    n = len(xy)
    out = np.full(n, np.nan)
    if n < 2:
        return out
    d = xy[1:] - xy[:-1]
    moving = np.hypot(*d.T) > 0
    b = np.degrees(np.arctan2(d[:, 0], d[:, 1])) % 360.0
    b[~moving] = np.nan
    out[:-1] = b
    return out


def quadrant(bearing: float) -> Optional[int]:
    """Quadrant 1-4 of a bearing; exact boundaries go to the lower quadrant (0 counts as 360)."""
    if not math.isfinite(bearing):
        return None
    b = bearing % 360.0
    if b == 0.0:
        return 4
    return int(math.ceil(b / 90.0))


class _View:
    """Cached per-segment quantities shared by the cluster operations."""

    def __init__(self, segment: TrackSegment, params: BreakParams, stats: SegmentStats | None = None):
        self.segment = _ensure_kinematics(segment)
        self.params = params
        self.stats = stats or segment_stats(self.segment)
        self.xy = self.segment.xy()
        self.t = self.segment.times()
        self.speed = self.segment.speed_kmh
        self.n = len(self.xy)
        self._t_list = self.t.tolist()
        self._nbhd: dict[int, np.ndarray] = {}
        self._cluster: dict[int, Optional[frozenset]] = {}
        self.angles = point_angles(self.xy)
        self.bearings = bearings(self.xy)
        self._likelihood: Optional[np.ndarray] = None

    def neighbourhood(self, k: int) -> np.ndarray:
        if k not in self._nbhd:
            w = self.params.neighbourhood_window_s
            tk = self._t_list[k]
            # strict |t_i - t_k| < w on integer seconds
            lo = bisect.bisect_right(self._t_list, tk - w)
            hi = bisect.bisect_left(self._t_list, tk + w)
            cand = np.arange(lo, hi)
            d = np.hypot(*(self.xy[lo:hi] - self.xy[k]).T)
            self._nbhd[k] = cand[d < self.stats.r_median]
        return self._nbhd[k]

    def speed_class(self, i: int) -> SpeedClass:
        s = self.speed[i]
        if math.isnan(s):
            return SpeedClass.MEDIUM
        if s < self.stats.s_median / 2:
            return SpeedClass.LOW
        if s > self.params.high_speed_class_kmh:
            return SpeedClass.HIGH
        return SpeedClass.MEDIUM

    def likelihood(self, i: int) -> BreakLikelihood:
        a = self.angles[i]
        narrow = bool(not math.isnan(a) and a < self.params.narrow_angle_deg)
        return likelihood_from_classes(narrow, self.speed_class(i))

    def likelihoods(self) -> np.ndarray:
        if self._likelihood is None:
            self._likelihood = np.array([int(self.likelihood(i)) for i in range(self.n)], dtype=int)
        return self._likelihood

    def detect(self, k: int) -> Optional[frozenset]:
        if k in self._cluster:
            return self._cluster[k]
        p = self.params
        nb = self.neighbourhood(k)
        members = set(nb.tolist())
        fired = False
        if nb.size:
            runs = np.split(nb, np.flatnonzero(np.diff(nb) != 1) + 1)
            if nb.size >= p.min_nonconsecutive and len(runs) > 1:
                fired = True
            if max(len(r) for r in runs) >= p.min_consecutive:
                fired = True
        high = p.high_speed_factor * self.stats.s_median
        for i in nb.tolist():
            s = self.speed[i]
            if math.isnan(s):
                continue
            if s > high or s < p.very_low_speed_kmh:
                fired = True
                if i + 1 < self.n:
                    members.add(i + 1)
        if k > 0 and self.speed[k - 1] > high:
            fired = True
            members.add(k - 1)
        result = frozenset(members) if fired else None
        self._cluster[k] = result
        return result

    def expand(self, members: frozenset) -> frozenset:
        cluster = set(members)
        pending = sorted(cluster)
        checked = set()
        while pending:
            c = pending.pop()
            if c in checked:
                continue
            checked.add(c)
            found = self.detect(c)
            if found:
                new = found - cluster
                if new:
                    cluster |= new
                    pending.extend(sorted(new))
        return frozenset(cluster)

    def confirm(self, members: frozenset) -> Optional[tuple[int, int]]:
        lk = self.likelihoods()
        ordered = sorted(members)
        strong = [i for i in ordered if lk[i] > BreakLikelihood.LOW]
        if not strong:
            return None
        start, stop = strong[0], strong[-1]
        run = np.arange(start, stop + 1)
        if not np.count_nonzero(lk[run] == BreakLikelihood.LOW) < 0.5 * run.size:
            return None
        quads = {quadrant(b) for b in self.bearings[run]} - {None}
        if (1 in quads and 3 in quads) or (2 in quads and 4 in quads):
            return start, stop
        return None


def neighbourhood(segment: TrackSegment, k: int, params: BreakParams = BreakParams(), stats=None) -> set[int]:
    return set(_View(segment, params, stats).neighbourhood(k).tolist())


def detect_cluster(segment: TrackSegment, k: int, params: BreakParams = BreakParams(), stats=None) -> Optional[Cluster]:
    found = _View(segment, params, stats).detect(k)
    return Cluster(tuple(sorted(found)), segment.segment_id) if found else None


def expand_cluster(segment: TrackSegment, cluster: Cluster, params: BreakParams = BreakParams(), stats=None) -> Cluster:
    grown = _View(segment, params, stats).expand(frozenset(cluster.members))
    return Cluster(tuple(sorted(grown)), cluster.segment_id)


def break_likelihood(segment: TrackSegment, i: int, params: BreakParams = BreakParams(), stats=None) -> BreakLikelihood:
    return _View(segment, params, stats).likelihood(i)


def confirm_break(segment: TrackSegment, cluster: Cluster, params: BreakParams = BreakParams(), stats=None) -> Optional[tuple[int, int]]:
    """Inclusive point range of the confirmed break, or None."""
    return _View(segment, params, stats).confirm(frozenset(cluster.members))


@dataclass
class BreakResult:
    segment_id: str
    mask: np.ndarray
    angles: np.ndarray = field(repr=False)
    likelihood: np.ndarray = field(repr=False)
    cluster_id: np.ndarray = field(repr=False)
    speed_kmh: np.ndarray = field(repr=False)

    @property
    def ranges(self) -> list[tuple[int, int]]:
        return mask_runs(self.mask)

    def debug_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "speed_kmh", "angle_deg", "likelihood", "cluster_id", "break_flag"])
        for i in range(len(self.mask)):
            w.writerow([
                i,
                repr(float(self.speed_kmh[i])),
                repr(float(self.angles[i])),
                BreakLikelihood(int(self.likelihood[i])).name.lower(),
                int(self.cluster_id[i]),
                int(self.mask[i]),
            ])
        return buf.getvalue()


def mask_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (start, stop) runs of True values."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    splits = np.flatnonzero(np.diff(idx) != 1) + 1
    return [(int(r[0]), int(r[-1])) for r in np.split(idx, splits)]


def trivial_breaks(segment: TrackSegment, params: BreakParams = BreakParams()) -> np.ndarray:
    segment = _ensure_kinematics(segment)
    n = len(segment)
    mask = np.zeros(n, dtype=bool)
    d, dur, s = segment.distance_m[:-1], segment.duration_s[:-1], segment.speed_kmh[:-1]
    mask[:-1] = (
        (s == 0)
        | (d > params.max_point_distance_m)
        | (dur > params.max_point_duration_s)
        | ~segment.valid[:-1]
    )
    if n > 2:
        catchup = (s[1:] > params.catchup_speed_kmh) & (dur[:-1] > params.max_point_duration_s)
        mask[1:-1] |= catchup
    return mask


def find_breaks(segment: TrackSegment, params: BreakParams = BreakParams()) -> BreakResult:
    """Run the full break search over one segment.

    Each point not already absorbed into an earlier cluster seeds a search;
    overlapping confirmed breaks are unioned.
    """
    view = _View(segment, params)
    mask = trivial_breaks(view.segment, params)
    cluster_id = np.full(view.n, -1, dtype=int)
    absorbed = np.zeros(view.n, dtype=bool)
    next_id = 0
    for k in range(view.n):
        if absorbed[k]:
            continue
        seed = view.detect(k)
        if not seed:
            continue
        members = view.expand(seed)
        idx = np.fromiter(members, dtype=int)
        absorbed[idx] = True
        cluster_id[idx] = np.where(cluster_id[idx] < 0, next_id, cluster_id[idx])
        next_id += 1
        confirmed = view.confirm(members)
        if confirmed:
            mask[confirmed[0] : confirmed[1] + 1] = True
    return BreakResult(
        segment_id=view.segment.segment_id,
        mask=mask,
        angles=view.angles,
        likelihood=view.likelihoods(),
        cluster_id=cluster_id,
        speed_kmh=view.speed,
    )
