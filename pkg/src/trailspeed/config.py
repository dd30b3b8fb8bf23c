"""Pipeline configuration: every threshold in one JSON-serialisable tree.

Defaults are the standard thresholds.  ``PipelineConfig.load`` reads a JSON
file; ``load_config`` also honours the ``TRAILSPEED_CONFIG`` environment variable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .breakfinder import BreakParams
from .filtering import SCOTLAND, FilterBounds, FilterParams, GridRegion
from .models import Naismith, Tobler
from .projection import TransverseMercator
from .terrain import TerrainParams

ENV_VAR = "TRAILSPEED_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TerrainSources:
    """Raster and vector inputs.  ``lidar`` pairs are (surface, terrain) grid paths."""

    dtm: Optional[str] = None
    lidar: tuple[tuple[str, str], ...] = ()
    roads: Optional[str] = None
    params: TerrainParams = field(default_factory=TerrainParams)


@dataclass(frozen=True)
class ModelSettings:
    coefficients: Optional[str] = None  # GlmCoefficients JSON; None means the bundled table
    plugins: tuple[dict, ...] = ()
    naismith: Naismith = field(default_factory=Naismith)
    tobler: Tobler = field(default_factory=Tobler)
    query_tolerance_deg: float = 2.0


@dataclass(frozen=True)
class FitSettings:
    family: str = "gaussian_log"  # or "gamma_inverse"
    reference_road: str = "unpaved"
    max_iter: int = 100
    tol: float = 1e-8
    alpha: float = 0.05
    folds: int = 10
    # robust errors are scaled by G/(G-1) * (N-1)/(N-K)
    small_sample_correction: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    projection: TransverseMercator = field(default_factory=TransverseMercator)
    breaks: BreakParams = field(default_factory=BreakParams)
    filters: FilterParams = field(default_factory=FilterParams)
    default_bounds: FilterBounds = field(default_factory=FilterBounds)
    min_bound_segments: int = 4  # fewer Hikr segments than this: use default_bounds
    terrain: TerrainSources = field(default_factory=TerrainSources)
    region: GridRegion = SCOTLAND
    exclude_region: bool = True
    models: ModelSettings = field(default_factory=ModelSettings)
    fitting: FitSettings = field(default_factory=FitSettings)
    seed: int = 0

    def to_dict(self) -> dict:
        return _to_plain(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return _from_plain(cls, d, "config")

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        return cls.from_dict(data)


def load_config(path: Optional[str | Path] = None) -> PipelineConfig:
    path = path or os.environ.get(ENV_VAR)
    return PipelineConfig.load(path) if path else PipelineConfig()


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    return obj


def _from_plain(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        tp = next(a for a in args if a is not type(None))
        return _coerce(tp, value, where)
    if dataclasses.is_dataclass(tp):
        return _from_plain(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        inner = args[0] if args else Any
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(inner, v, where) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} items")
        return tuple(_coerce(a, v, where) for a, v in zip(args, value))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value
