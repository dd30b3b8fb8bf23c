"""Walking speed models and the calculations built on them.

Every model maps (walking slope, hill slope, terrain) to a speed in km/h.
Slopes are in degrees; walking slope is signed (positive uphill) and hill
slope is the direction-independent steepest gradient of the ground.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .terrain import TerrainClass

ArrayLike = Union[float, np.ndarray]


class ModelConfigError(ValueError):
    pass


class InfeasibleRoute(ValueError):
    pass


@dataclass(frozen=True)
class SpeedQuery:
    walking_slope_deg: float
    hill_slope_deg: float
    terrain: TerrainClass = TerrainClass.PAVED

    def is_valid(self, tolerance_deg: float = 2.0) -> bool:
        """A path cannot be much steeper than the hillside it crosses."""
        return self.hill_slope_deg >= 0 and abs(self.walking_slope_deg) <= self.hill_slope_deg + tolerance_deg


def _terrain_array(terrain, shape) -> np.ndarray:
    if isinstance(terrain, (TerrainClass, str)):
        return np.full(shape, TerrainClass(terrain), dtype=object)
    arr = np.asarray(terrain, dtype=object)
    return np.broadcast_to(arr, shape)


class SpeedModel:
    """Base class.  Subclasses implement ``_speed`` for a single terrain class
    and carry a ``name``."""

    def speed(self, walking_slope_deg: ArrayLike, hill_slope_deg: ArrayLike, terrain=TerrainClass.PAVED) -> ArrayLike:
        theta = np.asarray(walking_slope_deg, dtype=float)
        phi = np.asarray(hill_slope_deg, dtype=float)
        theta, phi = np.broadcast_arrays(theta, phi)
        if isinstance(terrain, (TerrainClass, str)):
            out = self._speed(theta, phi, TerrainClass(terrain))
        else:
            terr = _terrain_array(terrain, theta.shape)
            # compare plain strings: numpy mishandles str-enum scalars in ==
            codes = np.array([TerrainClass(t).value for t in terr.flat], dtype=object).reshape(theta.shape)
            out = np.empty(theta.shape)
            for code in sorted(set(codes.flat)):
                sel = codes == code
                out[sel] = self._speed(theta[sel], phi[sel], TerrainClass(code))
        if np.ndim(out) == 0:
            return float(out)
        return out

    def query(self, q: SpeedQuery) -> float:
        return float(self.speed(q.walking_slope_deg, q.hill_slope_deg, q.terrain))

    def _speed(self, theta: np.ndarray, phi: np.ndarray, terrain: TerrainClass) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Naismith(SpeedModel):
    """Naismith's rule with Aitken's reduced base speed off paths and roads.

    The rule adds a fixed time per unit of ascent; as a speed over horizontal
    distance that is the harmonic combination of the base speed and the climb.
    Descents never change the speed.
    """

    on_path_kmh: float = 5.0
    off_path_kmh: float = 4.0
    minutes_per_100m_ascent: float = 10.0
    name: str = "naismith"

    def _speed(self, theta, phi, terrain):
        base = self.on_path_kmh if terrain.on_road else self.off_path_kmh
        # hours of extra time per horizontal km: (tan θ · 1000 m / 100 m) · minutes / 60
        extra = np.tan(np.radians(np.maximum(theta, 0.0))) * 10.0 * self.minutes_per_100m_ascent / 60.0
        return 1.0 / (1.0 / base + extra)


@dataclass(frozen=True)
class Tobler(SpeedModel):
    peak_kmh: float = 6.0
    decay: float = 3.5
    offset: float = 0.05
    offroad_factor: float = 0.6
    name: str = "tobler"

    def _speed(self, theta, phi, terrain):
        s = np.tan(np.radians(theta))
        v = self.peak_kmh * np.exp(-self.decay * np.abs(s + self.offset))
        return v if terrain.on_road else v * self.offroad_factor


@dataclass(frozen=True)
class GlmCoefficients:
    """Per-terrain (a, b, c, d) of v = exp(a + b·hill + c·walk + d·walk²)."""

    rows: Mapping[TerrainClass, tuple[float, float, float, float]]

    def __getitem__(self, terrain: TerrainClass) -> tuple[float, float, float, float]:
        try:
            return self.rows[TerrainClass(terrain)]
        except KeyError:
            raise ModelConfigError(f"no GLM coefficients for terrain {TerrainClass(terrain).value}") from None

    def to_dict(self) -> dict:
        return {t.value: dict(zip("abcd", map(float, r))) for t, r in sorted(self.rows.items(), key=lambda kv: kv[0].value)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GlmCoefficients":
        rows = {}
        for key, row in d.items():
            try:
                t = TerrainClass(key)
            except ValueError:
                raise ModelConfigError(f"unknown terrain class {key!r} in coefficients") from None
            if isinstance(row, Mapping):
                rows[t] = tuple(float(row[k]) for k in "abcd")
            else:
                rows[t] = tuple(float(v) for v in row)
        return cls(rows)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "GlmCoefficients":
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(doc.get("coefficients", doc))


DEFAULT_COEFFICIENTS = GlmCoefficients({
    TerrainClass.PAVED: (1.580, -0.00389, -0.00726, -0.00218),
    TerrainClass.UNPAVED: (1.580, -0.00389, -0.00965, -0.00248),
    TerrainClass.OFFROAD_UNKNOWN: (1.536, -0.00731, -0.00965, -0.00187),
    TerrainClass.OFFROAD_LIGHT: (1.580, -0.00731, -0.00965, -0.00187),
    TerrainClass.OFFROAD_HEAVY: (1.443, -0.00731, -0.00965, -0.00187),
})


def bundled_coefficients() -> GlmCoefficients:
    """The coefficient table shipped with the package (equal to DEFAULT_COEFFICIENTS)."""
    text = resources.files("trailspeed").joinpath("data/glm_coefficients.json").read_text()
    return GlmCoefficients.from_dict(json.loads(text))


@dataclass(frozen=True)
class Glm(SpeedModel):
    coefficients: GlmCoefficients = DEFAULT_COEFFICIENTS
    name: str = "glm"

    def _speed(self, theta, phi, terrain):
        a, b, c, d = self.coefficients[terrain]
        return np.exp(a + b * phi + c * theta + d * theta * theta)

    def peak_walking_slope(self, terrain: TerrainClass) -> float:
        """Walking slope of maximum speed, -c / 2d."""
        _, _, c, d = self.coefficients[terrain]
        return -c / (2 * d)


def glm_speed(q: SpeedQuery, coefficients: GlmCoefficients = DEFAULT_COEFFICIENTS) -> float:
    return Glm(coefficients).query(q)


def naismith_speed(q: SpeedQuery) -> float:
    return Naismith().query(q)


def tobler_speed(q: SpeedQuery) -> float:
    return Tobler().query(q)


def _lorentz_linear(theta, phi, p):
    # walking slope in degrees
    return p["c"] / (math.pi * p["b"] * (1 + ((theta - p["a"]) / p["b"]) ** 2)) + p["d"] + p["e"] * theta


def _exp_quadratic(theta, phi, p):
    return np.exp(p["a"] + p["b"] * phi + p["c"] * theta + p["d"] * theta * theta)


def _exp_abs_gradient(theta, phi, p):
    return p["peak"] * np.exp(-p["decay"] * np.abs(np.tan(np.radians(theta)) + p["offset"]))


PLUGIN_FORMULAS = {
    "lorentz_linear": (_lorentz_linear, ("a", "b", "c", "d", "e")),
    "exp_quadratic": (_exp_quadratic, ("a", "b", "c", "d")),
    "exp_abs_gradient": (_exp_abs_gradient, ("peak", "decay", "offset")),
}


@dataclass(frozen=True)
class PluginModel(SpeedModel):
    """A model loaded from configuration: a named formula plus its coefficients.

    ``offroad_factor`` scales off-road speeds; ``terrains`` optionally limits
    which terrain classes the model claims to cover (others evaluate to NaN).
    """

    name: str
    formula: str
    params: Mapping[str, float] = field(default_factory=dict)
    offroad_factor: float = 1.0
    terrains: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.formula not in PLUGIN_FORMULAS:
            raise ModelConfigError(f"unknown plugin formula {self.formula!r}")
        missing = set(PLUGIN_FORMULAS[self.formula][1]) - set(self.params)
        if missing:
            raise ModelConfigError(f"plugin {self.name!r} missing coefficients {sorted(missing)}")

    def _speed(self, theta, phi, terrain):
        if self.terrains is not None and terrain.value not in self.terrains:
            return np.full(np.shape(theta), np.nan)
        fn = PLUGIN_FORMULAS[self.formula][0]
        v = fn(theta, phi, self.params)
        return v if terrain.on_road else v * self.offroad_factor

    @classmethod
    def from_dict(cls, d: Mapping) -> "PluginModel":
        try:
            return cls(
                name=str(d["name"]),
                formula=str(d["formula"]),
                params={k: float(v) for k, v in d.get("params", {}).items()},
                offroad_factor=float(d.get("offroad_factor", 1.0)),
                terrains=tuple(d["terrains"]) if d.get("terrains") else None,
            )
        except KeyError as exc:
            raise ModelConfigError(f"plugin spec missing {exc.args[0]!r}") from None


NO_CROSSOVER = math.inf


def critical_gradient(
    model: SpeedModel,
    terrain: TerrainClass = TerrainClass.PAVED,
    direction: str = "up",
    phi_step: float = 0.1,
    theta_step: float = 0.01,
    phi_max: float = 60.0,
) -> float:
    """Smallest hill slope at which zig-zagging beats climbing straight up (or down).

    For each hill slope the vertical rate v·sin|θ| is maximised over path
    slopes up to the hill slope; the critical gradient is the first hill slope
    whose best path is shallower than the hill itself.  Returns the positive
    magnitude in degrees, or ``NO_CROSSOVER`` if none is found up to ``phi_max``.
    """
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    sign = 1.0 if direction == "up" else -1.0
    ratio = int(round(phi_step / theta_step))
    n_phi = int(round(phi_max / phi_step))
    for j in range(1, n_phi + 1):
        phi = j * phi_step
        mags = np.arange(1, j * ratio + 1) * theta_step
        rate = np.asarray(model.speed(sign * mags, np.full(mags.shape, phi), terrain)) * np.sin(np.radians(mags))
        if int(np.argmax(rate)) < mags.size - 1:
            return round(phi, 10)
    return NO_CROSSOVER


@dataclass(frozen=True)
class RouteTime:
    hours: float
    speeds_kmh: np.ndarray
    cumulative_hours: np.ndarray


def route_time(model: SpeedModel, legs: Sequence) -> RouteTime:
    """Total time over legs carrying distance_m, walking/hill slope and terrain."""
    if not legs:
        return RouteTime(0.0, np.array([]), np.array([]))
    dist = np.array([leg.distance_m for leg in legs], dtype=float)
    theta = np.array([leg.walking_slope_deg for leg in legs], dtype=float)
    phi = np.array([leg.hill_slope_deg for leg in legs], dtype=float)
    terrain = [TerrainClass(leg.terrain) for leg in legs]
    v = np.atleast_1d(np.asarray(model.speed(theta, phi, np.array(terrain, dtype=object)), dtype=float))
    bad = ~(v > 0)
    if bad.any():
        raise InfeasibleRoute(f"model {model.name} gives no positive speed on leg {int(np.flatnonzero(bad)[0])}")
    hours = dist / 1000.0 / v
    cum = np.cumsum(hours)
    return RouteTime(float(cum[-1]), v, cum)


@dataclass(frozen=True)
class Leg:
    distance_m: float
    walking_slope_deg: float
    hill_slope_deg: float
    terrain: TerrainClass = TerrainClass.PAVED


def build_models(
    coefficients: GlmCoefficients = DEFAULT_COEFFICIENTS,
    plugins: Iterable[Mapping] = (),
    naismith: Naismith = Naismith(),
    tobler: Tobler = Tobler(),
) -> dict[str, SpeedModel]:
    models: dict[str, SpeedModel] = {"glm": Glm(coefficients), "naismith": naismith, "tobler": tobler}
    for spec in plugins:
        m = PluginModel.from_dict(spec)
        models[m.name] = m
    return models
