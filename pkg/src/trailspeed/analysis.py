"""Comparing speed models against observed sections.

Everything here works on ``FitData`` arrays: one row per section, unweighted.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .fitting import DesignSpec, FitData, fit_glm
from .models import Glm, SpeedModel
from .terrain import TerrainClass

AXES = ("walking", "hill")
DIRECTIONS = ("climbing", "traversing", None)


@dataclass(frozen=True)
class MetricsReport:
    avg_pct_error: float
    mse: float
    rmse: float
    r2: float
    n: int

    def as_row(self) -> dict:
        return {"avg_pct_error": self.avg_pct_error, "mse": self.mse, "rmse": self.rmse, "r2": self.r2, "n": self.n}


def metrics(obs: np.ndarray, pred: np.ndarray) -> MetricsReport:
    """MAPE (percent, rows with obs > 0), MSE, RMSE and R² = 1 - SSres/SStot."""
    obs = np.asarray(obs, dtype=float)
    pred = np.asarray(pred, dtype=float)
    resid = obs - pred
    mse = float(np.mean(resid**2))
    pos = obs > 0
    mape = float(np.mean(np.abs(resid[pos]) / obs[pos]) * 100) if pos.any() else math.nan
    sst = float(np.sum((obs - obs.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / sst if sst > 0 else math.nan
    return MetricsReport(mape, mse, math.sqrt(mse), r2, int(obs.size))


def predict(model: SpeedModel, data: FitData) -> np.ndarray:
    return np.asarray(model.speed(data.walking_slope, data.hill_slope, data.terrain), dtype=float)


def compare_models(data: FitData, models: Mapping[str, SpeedModel]) -> dict[str, MetricsReport]:
    return {name: metrics(data.speed, predict(m, data)) for name, m in models.items()}


def direction_mask(data: FitData, direction: Optional[str], tolerance: float = 5.0) -> np.ndarray:
    """Climbing: within ``tolerance`` of going straight up or down.  Traversing: |θ| within it."""
    theta, phi = data.walking_slope, data.hill_slope
    if direction is None:
        return np.ones(len(data), dtype=bool)
    if direction == "climbing":
        return np.abs(np.abs(theta) - phi) <= tolerance
    if direction == "traversing":
        return np.abs(theta) <= tolerance
    raise ValueError(f"unknown direction {direction!r}")


def bin_centers(axis: str, step: float = 5.0, limit: float = 40.0) -> np.ndarray:
    lo = -limit if axis == "walking" else 0.0
    n = int(round((limit - lo) / step))
    return lo + step * np.arange(n + 1)


def _axis_values(data: FitData, axis: str) -> np.ndarray:
    if axis == "walking":
        return data.walking_slope
    if axis == "hill":
        return data.hill_slope
    raise ValueError(f"unknown axis {axis!r}")


@dataclass(frozen=True)
class BinnedCurve:
    axis: str
    statistic: str
    centers: np.ndarray
    values: np.ndarray
    counts: np.ndarray


def binned_curve(
    data: FitData,
    model: SpeedModel | np.ndarray,
    axis: str = "walking",
    statistic: str = "rmse",
    direction: Optional[str] = None,
    step: float = 5.0,
    width: float = 10.0,
    centers: Optional[Sequence[float]] = None,
) -> BinnedCurve:
    """Per-bin RMSE or mean residual (observed - predicted) over [c - w/2, c + w/2)."""
    if statistic not in ("rmse", "mean_residual", "mse"):
        raise ValueError(f"unknown statistic {statistic!r}")
    pred = model if isinstance(model, np.ndarray) else predict(model, data)
    keep = direction_mask(data, direction)
    x = _axis_values(data, axis)[keep]
    resid = (data.speed - pred)[keep]
    cs = bin_centers(axis, step) if centers is None else np.asarray(centers, dtype=float)
    out_c, out_v, out_n = [], [], []
    for c in cs:
        sel = (x >= c - width / 2) & (x < c + width / 2)
        n = int(sel.sum())
        if n == 0:
            continue
        r = resid[sel]
        if statistic == "mean_residual":
            v = float(np.mean(r))
        else:
            v = float(np.mean(r**2))
            if statistic == "rmse":
                v = math.sqrt(v)
        out_c.append(float(c))
        out_v.append(v)
        out_n.append(n)
    return BinnedCurve(axis, statistic, np.array(out_c), np.array(out_v), np.array(out_n, dtype=int))


@dataclass(frozen=True)
class CiBand:
    centers: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    counts: np.ndarray


def mean_ci_band(
    data: FitData,
    axis: str = "walking",
    terrain: Optional[TerrainClass] = None,
    direction: Optional[str] = "auto",
    step: float = 5.0,
    width: float = 10.0,
    z: float = 1.96,
) -> CiBand:
    """Normal-approximation CI of mean speed per bin; bins with n < 2 are omitted.

    ``direction="auto"`` picks climbing rows for the walking axis and
    traversing rows for the hill axis.
    """
    if direction == "auto":
        direction = "climbing" if axis == "walking" else "traversing"
    keep = direction_mask(data, direction)
    if terrain is not None:
        keep &= np.array([TerrainClass(t) == TerrainClass(terrain) for t in data.terrain], dtype=bool)
    x = _axis_values(data, axis)[keep]
    y = data.speed[keep]
    rows = []
    for c in bin_centers(axis, step):
        sel = (x >= c - width / 2) & (x < c + width / 2)
        n = int(sel.sum())
        if n < 2:
            continue
        m = float(np.mean(y[sel]))
        h = z * float(np.std(y[sel], ddof=1)) / math.sqrt(n)
        rows.append((float(c), m, m - h, m + h, n))
    arr = np.array(rows, dtype=float).reshape(-1, 5)
    return CiBand(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4].astype(int))


def slope_profiles(model: SpeedModel, terrain: TerrainClass, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Speeds going straight up/down (φ = |θ|) and traversing (θ = 0, φ = |grid|)."""
    direct = np.asarray(model.speed(grid, np.abs(grid), terrain), dtype=float)
    traverse = np.asarray(model.speed(np.zeros_like(grid), np.abs(grid), terrain), dtype=float)
    return direct, traverse


@dataclass(frozen=True)
class EnvelopeReport:
    grid: np.ndarray
    reference_direct: np.ndarray
    reference_traverse: np.ndarray
    lower_direct: np.ndarray
    upper_direct: np.ndarray
    lower_traverse: np.ndarray
    upper_traverse: np.ndarray

    @property
    def inside_direct(self) -> np.ndarray:
        return (self.reference_direct >= self.lower_direct) & (self.reference_direct <= self.upper_direct)

    @property
    def inside_traverse(self) -> np.ndarray:
        return (self.reference_traverse >= self.lower_traverse) & (self.reference_traverse <= self.upper_traverse)

    @property
    def fraction_inside(self) -> float:
        return float(np.mean(np.concatenate([self.inside_direct, self.inside_traverse])))


def _tracks(data: FitData) -> list[str]:
    return sorted(set(np.asarray(data.track).astype(str).tolist()))


def bootstrap_cohort_compare(
    a: FitData,
    b: FitData,
    n_samples: int = 100,
    sample_tracks: int = 650,
    spec: Optional[DesignSpec] = None,
    terrain: TerrainClass = TerrainClass.PAVED,
    grid: Optional[np.ndarray] = None,
    seed: int = 0,
) -> EnvelopeReport:
    """Fit on all of ``a`` and on ``n_samples`` track subsamples of ``b``; compare curves."""
    tracks = _tracks(b)
    if sample_tracks > len(tracks):
        raise ValueError(f"cannot sample {sample_tracks} tracks from {len(tracks)}")
    spec = spec or DesignSpec.full()
    grid = np.arange(-40.0, 40.5, 1.0) if grid is None else np.asarray(grid, dtype=float)
    ref = Glm(fit_glm(a, spec, clusters=None).glm_coefficients(), name="reference")
    ref_d, ref_t = slope_profiles(ref, terrain, grid)

    rng = np.random.default_rng(seed)
    b_tracks = np.asarray(b.track).astype(str)
    direct, traverse = [], []
    for _ in range(n_samples):
        pick = rng.choice(len(tracks), size=sample_tracks, replace=False)
        chosen = np.isin(b_tracks, np.array(tracks)[pick])
        m = Glm(fit_glm(b.subset(chosen), spec, clusters=None).glm_coefficients(), name="sample")
        d, t = slope_profiles(m, terrain, grid)
        direct.append(d)
        traverse.append(t)
    direct, traverse = np.array(direct), np.array(traverse)
    return EnvelopeReport(
        grid, ref_d, ref_t, direct.min(0), direct.max(0), traverse.min(0), traverse.max(0)
    )


def obstruction_quantile_curve(height_m: np.ndarray, speed_kmh: np.ndarray, n_bins: int = 25) -> np.ndarray:
    """Equal-count bins by obstruction height; rows of (mean height, mean speed, n)."""
    h = np.asarray(height_m, dtype=float)
    v = np.asarray(speed_kmh, dtype=float)
    if h.size < n_bins:
        raise ValueError(f"need at least {n_bins} sections, got {h.size}")
    order = np.argsort(h, kind="stable")
    rows = [(h[idx].mean(), v[idx].mean(), idx.size) for idx in np.array_split(order, n_bins)]
    return np.array(rows, dtype=float)


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def metrics_csv(reports: Mapping[str, MetricsReport]) -> str:
    return _csv(
        ["model", "avg_pct_error", "mse", "rmse", "r2", "n"],
        [(k, r.avg_pct_error, r.mse, r.rmse, r.r2, r.n) for k, r in reports.items()],
    )


def plot_data(
    models: Mapping[str, SpeedModel], data: Optional[FitData] = None, limit: float = 40.0
) -> dict[str, str]:
    """CSV text per figure: baseline curves, model curves, CI bands, comparisons, binned errors."""
    grid = np.arange(-limit, limit + 0.5, 1.0)
    hill = np.arange(0.0, limit + 0.5, 1.0)
    out = {}

    rows = []
    for name, m in models.items():
        if name == "glm":
            continue
        for t in (TerrainClass.PAVED, TerrainClass.OFFROAD_LIGHT):
            v = m.speed(grid, np.abs(grid), t)
            rows += [(name, t.value, g, s) for g, s in zip(grid, v)]
    out["baseline_curves.csv"] = _csv(["model", "terrain", "walking_slope_deg", "speed_kmh"], rows)

    glm = models.get("glm")
    if glm is not None:
        rows = []
        for t in TerrainClass:
            d = glm.speed(grid, np.abs(grid), t)
            tr = glm.speed(np.zeros_like(hill), hill, t)
            rows += [(t.value, "direct", g, s) for g, s in zip(grid, d)]
            rows += [(t.value, "traverse", g, s) for g, s in zip(hill, tr)]
        out["glm_curves.csv"] = _csv(["terrain", "mode", "slope_deg", "speed_kmh"], rows)

    rows = []
    for name, m in models.items():
        for t in (TerrainClass.PAVED, TerrainClass.OFFROAD_HEAVY):
            d = m.speed(grid, np.abs(grid), t)
            tr = m.speed(np.zeros_like(hill), hill, t)
            rows += [(name, t.value, "direct", g, s) for g, s in zip(grid, d)]
            rows += [(name, t.value, "traverse", g, s) for g, s in zip(hill, tr)]
    out["model_curves.csv"] = _csv(["model", "terrain", "mode", "slope_deg", "speed_kmh"], rows)

    if data is not None and len(data):
        rows = []
        for t in TerrainClass:
            for axis in AXES:
                band = mean_ci_band(data, axis, t)
                rows += [
                    (t.value, axis, c, m, lo, hi, n)
                    for c, m, lo, hi, n in zip(band.centers, band.mean, band.lower, band.upper, band.counts)
                ]
        out["ci_bands.csv"] = _csv(["terrain", "axis", "center_deg", "mean_kmh", "lower", "upper", "n"], rows)

        offroad = np.array([not TerrainClass(t).on_road for t in data.terrain], dtype=bool)
        for fig, stat in (("binned_rmse.csv", "rmse"), ("binned_mean_residual.csv", "mean_residual")):
            rows = []
            for subset, mask in (("all", np.ones(len(data), dtype=bool)), ("offroad", offroad)):
                if not mask.any():
                    continue
                sub = data.subset(mask)
                for name, m in models.items():
                    for axis, direction in (("walking", "climbing"), ("hill", "traversing")):
                        c = binned_curve(sub, m, axis, stat, direction)
                        rows += [(subset, name, axis, x, v, n) for x, v, n in zip(c.centers, c.values, c.counts)]
            out[fig] = _csv(["subset", "model", "axis", "center_deg", stat, "n"], rows)
    return out


def write_plot_data(directory: str | Path, tables: Mapping[str, str]) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in sorted(tables.items()):
        p = d / name
        p.write_text(text)
        paths.append(p)
    return paths
