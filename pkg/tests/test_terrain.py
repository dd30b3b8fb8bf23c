import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trailspeed.synthetic import plane_dtm, road_geojson
from trailspeed.terrain import (
    CoverageGap,
    Obstruction,
    RasterGrid,
    RoadIndex,
    TerrainClass,
    TerrainLayers,
    classify_obstruction,
    classify_road,
    hill_slope,
    obstruction_height,
    parse_ascii_grid,
    read_ascii_grid,
    sample_elevation,
    walking_slope,
    write_ascii_grid,
)


def grid(values, cell=5.0, ox=0.0, oy=0.0):
    return RasterGrid(ox, oy, cell, np.asarray(values, dtype=float))


def test_sample_elevation():
    g = grid(np.full((4, 4), 100.0))
    assert sample_elevation(g, 7.0, 3.0) == 100.0
    with pytest.raises(CoverageGap):
        sample_elevation(g, -10.0, 0.0)
    two = grid([[0, 1], [2, 3]])
    assert sample_elevation(two, *two.cell_center(0, 1)) == 1.0


def test_nodata_is_gap():
    g = grid([[1, -9999], [1, 1]])
    with pytest.raises(CoverageGap):
        sample_elevation(g, 5.0, 0.0)


def test_hill_slope_examples():
    assert hill_slope(grid(np.zeros((3, 3))), 5.0, 5.0) == 0.0
    assert hill_slope(plane_dtm(0.5, 0.0), 10.0, 10.0) == pytest.approx(26.565051177, abs=1e-6)
    assert hill_slope(plane_dtm(1.0, 1.0), 10.0, 10.0) == pytest.approx(54.735610317, abs=1e-6)
    with pytest.raises(CoverageGap):
        hill_slope(plane_dtm(1.0, 0.0), 0.0, 0.0)


@settings(max_examples=60)
@given(arrays(float, (3, 3), elements=st.floats(-1000, 1000)), st.floats(-1e4, 1e4))
def test_hill_slope_offset_and_negation_invariance(values, c):
    base = hill_slope(grid(values), 5.0, 5.0)
    assert hill_slope(grid(values + c), 5.0, 5.0) == pytest.approx(base, abs=1e-6)
    assert hill_slope(grid(-values), 5.0, 5.0) == pytest.approx(base, abs=1e-12)
    assert 0.0 <= base < 90.0


def test_walking_slope_examples():
    assert walking_slope(5, 5, 10) == 0.0
    assert walking_slope(0, 10, 100) == pytest.approx(5.710593, abs=1e-6)
    assert walking_slope(100, 0, 100) == pytest.approx(-45.0)
    with pytest.raises(ValueError):
        walking_slope(0, 1, 0)


@given(st.floats(-1000, 1000), st.floats(-1000, 1000), st.floats(0.1, 1e4))
def test_walking_slope_antisymmetric(a, b, d):
    assert walking_slope(a, b, d) == -walking_slope(b, a, d)


def _index(features):
    idx = RoadIndex()
    for kind, coords in features:
        idx.add(kind, coords)
    return idx


def test_classify_road_examples():
    far = _index([("residential", [(60, -100), (60, 100)])])
    assert classify_road(far, 0, 0) is TerrainClass.OFFROAD_UNKNOWN
    path = _index([("path", [(10, -100), (10, 100)])])
    assert classify_road(path, 0, 0) is TerrainClass.UNPAVED
    both = _index([("path", [(10, -100), (10, 100)]), ("residential", [(-40, -100), (-40, 100)])])
    assert classify_road(both, 0, 0) is TerrainClass.PAVED
    odd = _index([("Some New Type", [(0, -5), (0, 5)])])
    assert classify_road(odd, 0, 0) is TerrainClass.PAVED
    assert classify_road(None, 0, 0) is TerrainClass.OFFROAD_UNKNOWN


@settings(max_examples=30)
@given(st.permutations([("path", [(10, -100), (10, 100)]), ("track", [(-30, 0), (30, 0)]), ("primary", [(45, -5), (45, 5)]), ("bridleway", [(0, 70), (5, 80)])]))
def test_classify_road_order_independent(features):
    assert classify_road(_index(features), 0, 0) is TerrainClass.PAVED
    assert classify_road(_index(features), 0, -80) is TerrainClass.UNPAVED


def test_geojson_roads():
    idx = RoadIndex.from_geojson(road_geojson([("track", [(0, 0), (100, 0)])]))
    assert classify_road(idx, 50, 20) is TerrainClass.UNPAVED


def test_obstruction():
    dtm = grid(np.full((2, 2), 80.0))
    assert obstruction_height(grid(np.full((2, 2), 85.0)), dtm, 1, 1) == 5.0
    assert obstruction_height(grid(np.full((2, 2), 79.9)), dtm, 1, 1) == 0.0
    assert obstruction_height(grid(np.full((2, 2), 85.0), ox=1000), dtm, 1, 1) is None
    assert classify_obstruction(0.10) is Obstruction.LIGHT
    assert classify_obstruction(0.11) is Obstruction.HEAVY
    assert classify_obstruction(None) is Obstruction.UNKNOWN


def test_unknown_obstruction_exactly_without_lidar():
    dtm = grid(np.zeros((20, 20)))
    dsm = grid(np.full((20, 10), 1.0))  # lidar covers the western half only
    layers = TerrainLayers(dtm=dtm, lidar=[(dsm, grid(np.zeros((20, 10))))])
    xy = np.array([(10.0, 10.0), (80.0, 10.0)])
    attrs = layers.enrich(xy, np.array([70.0, np.nan]))
    assert list(attrs["terrain"]) == [TerrainClass.OFFROAD_HEAVY, TerrainClass.OFFROAD_UNKNOWN]


def test_enrich_slopes_and_coverage():
    dtm = plane_dtm(0.1, 0.0, size=20)
    layers = TerrainLayers(dtm=dtm)
    xy = np.array([(10.0, 10.0), (60.0, 10.0), (500.0, 10.0)])
    attrs = layers.enrich(xy, np.array([50.0, 440.0, np.nan]))
    assert attrs["walking_slope"][0] == pytest.approx(math.degrees(math.atan(0.1)))
    assert attrs["hill_slope"][0] == pytest.approx(math.degrees(math.atan(0.1)))
    assert list(attrs["covered"]) == [True, False, False]


def test_ascii_grid_round_trip(tmp_path):
    g = grid(np.arange(12.0).reshape(3, 4), cell=2.0, ox=101.0, oy=51.0)
    write_ascii_grid(g, tmp_path / "g.asc")
    back = read_ascii_grid(tmp_path / "g.asc")
    assert np.array_equal(back.values, g.values)
    assert (back.origin_x, back.origin_y, back.cell_size) == (101.0, 51.0, 2.0)
    # file rows run north to south
    assert sample_elevation(back, 101.0, 55.0) == 8.0


def test_ascii_grid_errors():
    with pytest.raises(ValueError):
        parse_ascii_grid("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3")
    with pytest.raises(ValueError):
        RasterGrid(0, 0, 0.0, np.zeros((2, 2)))
