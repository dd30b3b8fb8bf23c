"""Transverse Mercator projection and Ordnance Survey style grid square codes.

Formulas follow the series expansions published by the Ordnance Survey for the
National Grid; they are accurate to well under a millimetre within the
projection's zone.  No datum shift is applied: latitude/longitude are taken to
be on the configured ellipsoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class TransverseMercator:
    """Projection parameters.  Defaults are the British National Grid on Airy 1830."""

    semi_major: float = 6377563.396
    semi_minor: float = 6356256.909
    scale: float = 0.9996012717
    lat0_deg: float = 49.0
    lon0_deg: float = -2.0
    false_easting: float = 400000.0
    false_northing: float = -100000.0

    @property
    def _n(self) -> float:
        a, b = self.semi_major, self.semi_minor
        return (a - b) / (a + b)

    @property
    def _e2(self) -> float:
        a, b = self.semi_major, self.semi_minor
        return (a * a - b * b) / (a * a)

    def _meridional_arc(self, lat: float) -> float:
        n = self._n
        lat0 = math.radians(self.lat0_deg)
        dl, sl = lat - lat0, lat + lat0
        return (
            self.semi_minor
            * self.scale
            * (
                (1 + n + 1.25 * n**2 + 1.25 * n**3) * dl
                - (3 * n + 3 * n**2 + 2.625 * n**3) * math.sin(dl) * math.cos(sl)
                + (1.875 * n**2 + 1.875 * n**3) * math.sin(2 * dl) * math.cos(2 * sl)
                - (35 / 24) * n**3 * math.sin(3 * dl) * math.cos(3 * sl)
            )
        )

    def _radii(self, lat: float) -> tuple[float, float, float]:
        af0 = self.semi_major * self.scale
        e2 = self._e2
        s2 = math.sin(lat) ** 2
        nu = af0 / math.sqrt(1 - e2 * s2)
        rho = af0 * (1 - e2) / (1 - e2 * s2) ** 1.5
        return nu, rho, nu / rho - 1

    def forward(self, lat_deg: float, lon_deg: float) -> tuple[float, float]:
        """Return (easting, northing) in metres."""
        lat = math.radians(lat_deg)
        dlon = math.radians(lon_deg - self.lon0_deg)
        nu, rho, eta2 = self._radii(lat)
        s, c, t = math.sin(lat), math.cos(lat), math.tan(lat)
        t2 = t * t
        m = self._meridional_arc(lat)

        i = m + self.false_northing
        ii = nu / 2 * s * c
        iii = nu / 24 * s * c**3 * (5 - t2 + 9 * eta2)
        iiia = nu / 720 * s * c**5 * (61 - 58 * t2 + t2 * t2)
        iv = nu * c
        v = nu / 6 * c**3 * (nu / rho - t2)
        vi = nu / 120 * c**5 * (5 - 18 * t2 + t2 * t2 + 14 * eta2 - 58 * t2 * eta2)

        northing = i + ii * dlon**2 + iii * dlon**4 + iiia * dlon**6
        easting = self.false_easting + iv * dlon + v * dlon**3 + vi * dlon**5
        return easting, northing

    def inverse(self, easting: float, northing: float) -> tuple[float, float]:
        """Return (lat_deg, lon_deg) for planar coordinates."""
        af0 = self.semi_major * self.scale
        lat = math.radians(self.lat0_deg) + (northing - self.false_northing) / af0
        m = self._meridional_arc(lat)
        while abs(northing - self.false_northing - m) >= 1e-5:
            lat += (northing - self.false_northing - m) / af0
            m = self._meridional_arc(lat)

        nu, rho, eta2 = self._radii(lat)
        t = math.tan(lat)
        t2 = t * t
        sec = 1 / math.cos(lat)
        de = easting - self.false_easting

        vii = t / (2 * rho * nu)
        viii = t / (24 * rho * nu**3) * (5 + 3 * t2 + eta2 - 9 * t2 * eta2)
        ix = t / (720 * rho * nu**5) * (61 + 90 * t2 + 45 * t2 * t2)
        x = sec / nu
        xi = sec / (6 * nu**3) * (nu / rho + 2 * t2)
        xii = sec / (120 * nu**5) * (5 + 28 * t2 + 24 * t2 * t2)
        xiia = sec / (5040 * nu**7) * (61 + 662 * t2 + 1320 * t2 * t2 + 720 * t2**3)

        lat_out = lat - vii * de**2 + viii * de**4 - ix * de**6
        lon_out = math.radians(self.lon0_deg) + x * de - xi * de**3 + xii * de**5 - xiia * de**7
        return math.degrees(lat_out), math.degrees(lon_out)


class GridSquareError(ValueError):
    """An unknown or malformed grid square code."""


_LETTERS = "ABCDEFGHJKLMNOPQRSTUVWXYZ"  # no I


def grid_letters(easting: float, northing: float) -> str:
    """Two-letter 100 km square containing a National Grid coordinate."""
    e100k = math.floor(easting / 100000)
    n100k = math.floor(northing / 100000)
    if not (0 <= e100k < 7 and 0 <= n100k < 13):
        return ""
    l1 = (19 - n100k) - (19 - n100k) % 5 + (e100k + 10) // 5
    l2 = ((19 - n100k) * 5) % 25 + e100k % 5
    return _LETTERS[l1] + _LETTERS[l2]


def grid_square(easting: float, northing: float, digits: int = 0) -> str:
    """Grid reference code with ``digits`` digits per axis (0 gives the 100 km tile)."""
    letters = grid_letters(easting, northing)
    if not letters or digits == 0:
        return letters
    div = 10 ** (5 - digits)
    e = int((easting % 100000) // div)
    n = int((northing % 100000) // div)
    return f"{letters}{e:0{digits}d}{n:0{digits}d}"


def _valid_letter_pairs() -> frozenset[str]:
    return frozenset(
        grid_letters(e * 100000 + 1, n * 100000 + 1) for e in range(7) for n in range(13)
    )


VALID_TILES = _valid_letter_pairs()


def validate_code(code: str) -> str:
    code = code.strip().upper()
    letters, digits = code[:2], code[2:]
    if letters not in VALID_TILES or len(digits) % 2 or not (digits == "" or digits.isdigit()):
        raise GridSquareError(f"unknown grid square code {code!r}")
    return code
