"""Small fixture builders shared by the test modules."""

import numpy as np

from trailspeed.gpx import TrackPoint, TrackSegment, compute_kinematics


def make_segment(xy, t, segment_id="seg:0"):
    pts = tuple(TrackPoint(float(x), float(y), int(ti)) for (x, y), ti in zip(np.asarray(xy, float), t))
    return compute_kinematics(TrackSegment(segment_id, pts))


def line_segment(distances, durations, segment_id="seg:0", t0=0):
    """Points along the x axis with the given hop distances and durations."""
    x = np.concatenate([[0.0], np.cumsum(distances)])
    t = t0 + np.concatenate([[0], np.cumsum(durations)]).astype(int)
    return make_segment(np.column_stack([x, np.zeros_like(x)]), t, segment_id)
