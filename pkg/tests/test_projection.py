import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from trailspeed.projection import GridSquareError, TransverseMercator, grid_letters, grid_square, validate_code


def dms(d, m, s):
    return d + m / 60 + s / 3600


def test_national_grid_worked_example():
    tm = TransverseMercator()
    e, n = tm.forward(dms(52, 39, 27.2531), dms(1, 43, 4.5177))
    assert e == pytest.approx(651409.903, abs=1e-3)
    assert n == pytest.approx(313177.270, abs=1e-3)


def test_worked_example_inverse():
    lat, lon = TransverseMercator().inverse(651409.903, 313177.270)
    assert lat == pytest.approx(dms(52, 39, 27.2531), abs=1e-8)
    assert lon == pytest.approx(dms(1, 43, 4.5177), abs=1e-8)


@given(st.floats(50.0, 60.0), st.floats(-7.0, 2.0))
def test_round_trip(lat, lon):
    tm = TransverseMercator()
    lat2, lon2 = tm.inverse(*tm.forward(lat, lon))
    assert lat2 == pytest.approx(lat, abs=1e-7)  # about 1 cm
    assert lon2 == pytest.approx(lon, abs=1e-7)


def test_short_planar_distance_matches_ground_distance():
    # one thousandth of a degree of latitude is about 111 m
    tm = TransverseMercator()
    a = tm.forward(54.0, -2.0)
    b = tm.forward(54.001, -2.0)
    assert math.dist(a, b) == pytest.approx(111.3, abs=0.5)


@pytest.mark.parametrize(
    "e,n,code",
    [(651409, 313177, "TG"), (1, 1, "SV"), (320000, 560000, "NY"), (450000, 1250000, "HP"), (350000, 650000, "NT")],
)
def test_grid_letters(e, n, code):
    assert grid_letters(e, n) == code


def test_grid_square_digits():
    assert grid_square(316000, 565000, 1) == "NY16"
    assert grid_square(651409.9, 313177.3, 3) == "TG514131"


def test_outside_grid():
    assert grid_letters(-5, 10) == ""
    assert grid_letters(800000, 0) == ""


def test_validate_code():
    assert validate_code(" ny16 ") == "NY16"
    for bad in ("XX", "NY1", "NYab", "IO"):
        with pytest.raises(GridSquareError):
            validate_code(bad)
