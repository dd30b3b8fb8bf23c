"""Fitting the log-linear walking speed GLM.

Estimation is iteratively reweighted least squares.  Standard errors come
in two flavours: model based, and cluster-robust (sandwich) with score
contributions summed within tracks.  Terms are eliminated by backward Wald
tests on the robust errors, and whole tracks are held out for k-fold
cross-validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy import stats

from .models import GlmCoefficients
from .terrain import TerrainClass

ROADS = ("paved", "unpaved", "offroad")
OBSTRUCTIONS = ("light", "heavy", "unknown")
SLOPES = ("hill", "walk", "walk2")


class FitError(RuntimeError):
    pass


class RankDeficient(FitError):
    def __init__(self, terms: Sequence[str]):
        super().__init__(f"design matrix is rank deficient; collinear terms: {', '.join(terms)}")
        self.terms = tuple(terms)


@dataclass(frozen=True)
class FitData:
    """Model-ready arrays: speed (km/h), slopes (degrees), terrain and track id per row."""

    speed: np.ndarray
    walking_slope: np.ndarray
    hill_slope: np.ndarray
    terrain: np.ndarray
    track: np.ndarray
    extras: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.speed)

    def subset(self, idx: np.ndarray) -> "FitData":
        return FitData(
            self.speed[idx], self.walking_slope[idx], self.hill_slope[idx], self.terrain[idx],
            self.track[idx], {k: v[idx] for k, v in self.extras.items()},
        )

    @classmethod
    def from_sections(cls, sections, include_breaks: bool = False) -> "FitData":
        rows = [s for s in sections if include_breaks or not s.is_break]
        return cls(
            speed=np.array([s.speed_kmh for s in rows], dtype=float),
            walking_slope=np.array([s.walking_slope_deg for s in rows], dtype=float),
            hill_slope=np.array([s.hill_slope_deg for s in rows], dtype=float),
            terrain=np.array([TerrainClass(s.terrain) for s in rows], dtype=object),
            track=np.array([s.track_id for s in rows], dtype=object),
        )


@dataclass(frozen=True)
class DesignSpec:
    """Which terms enter the linear predictor.

    Road types use treatment coding against ``reference_road``; obstruction
    levels apply to off-road rows only, against light obstruction.  Slope
    terms are a shared slope plus road-specific deviations; ``extras`` names
    additional numeric covariates taken from ``FitData.extras``.
    """

    terms: tuple[str, ...]
    reference_road: str = "unpaved"
    family: str = "gaussian_log"

    @classmethod
    def full(cls, reference_road: str = "unpaved", extras: Sequence[str] = (), family: str = "gaussian_log") -> "DesignSpec":
        others = [r for r in ROADS if r != reference_road]
        terms = ["intercept"]
        terms += [f"road[{r}]" for r in others]
        terms += ["obst[heavy]", "obst[unknown]"]
        for s in SLOPES:
            terms.append(s)
            terms += [f"{s}:road[{r}]" for r in others]
        terms += [f"x[{e}]" for e in extras]
        return cls(tuple(terms), reference_road, family)

    @classmethod
    def intercept_only(cls) -> "DesignSpec":
        return cls(("intercept",))

    def without(self, term: str) -> "DesignSpec":
        return replace(self, terms=tuple(t for t in self.terms if t != term))


def _road_code(terrain: np.ndarray) -> np.ndarray:
    return np.array([TerrainClass(t).road for t in terrain], dtype=object)


def _obst_code(terrain: np.ndarray) -> np.ndarray:
    out = []
    for t in terrain:
        o = TerrainClass(t).obstruction
        out.append("" if o is None else o.value)
    return np.array(out, dtype=object)


def _slope_values(data: FitData, name: str) -> np.ndarray:
    if name == "hill":
        return data.hill_slope
    if name == "walk":
        return data.walking_slope
    if name == "walk2":
        return data.walking_slope**2
    raise KeyError(name)


def design_matrix(data: FitData, spec: DesignSpec) -> np.ndarray:
    n = len(data)
    road = _road_code(data.terrain)
    obst = _obst_code(data.terrain)
    cols = []
    for term in spec.terms:
        if term == "intercept":
            cols.append(np.ones(n))
        elif term.startswith("road["):
            cols.append((road == term[5:-1]).astype(float))
        elif term.startswith("obst["):
            cols.append((obst == term[5:-1]).astype(float))
        elif term.startswith("x["):
            cols.append(np.asarray(data.extras[term[2:-1]], dtype=float))
        elif ":" in term:
            s, r = term.split(":", 1)
            cols.append(_slope_values(data, s) * (road == r[5:-1]))
        else:
            cols.append(_slope_values(data, term))
    return np.column_stack(cols) if cols else np.empty((n, 0))


class _Family:
    def __init__(self, name: str):
        if name not in ("gaussian_log", "gamma_inverse"):
            raise ValueError(f"unknown family {name!r}")
        self.name = name

    def link(self, mu):
        return np.log(mu) if self.name == "gaussian_log" else 1.0 / mu

    def inverse(self, eta):
        return np.exp(eta) if self.name == "gaussian_log" else 1.0 / eta

    def dmu_deta(self, mu):
        return mu if self.name == "gaussian_log" else -(mu**2)

    def variance(self, mu):
        return np.ones_like(mu) if self.name == "gaussian_log" else mu**2

    def deviance(self, y, mu):
        if self.name == "gaussian_log":
            return float(np.sum((y - mu) ** 2))
        return float(2 * np.sum(-np.log(y / mu) + (y - mu) / mu))


@dataclass
class FitResult:
    spec: DesignSpec
    params: np.ndarray
    se_model: np.ndarray
    cov_model: np.ndarray
    se_robust: Optional[np.ndarray]
    cov_robust: Optional[np.ndarray]
    deviance: float
    rmse: float
    mae: float
    r2: float
    n_obs: int
    n_clusters: Optional[int]
    iterations: int
    trace: list[float] = field(default_factory=list, repr=False)

    @property
    def terms(self) -> tuple[str, ...]:
        return self.spec.terms

    @property
    def se(self) -> np.ndarray:
        return self.se_robust if self.se_robust is not None else self.se_model

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.params / self.se

    @property
    def pvalues(self) -> np.ndarray:
        return 2 * stats.norm.sf(np.abs(self.z))

    def coef(self, term: str) -> float:
        return float(self.params[self.terms.index(term)]) if term in self.terms else 0.0

    def linear_predictor(self, data: FitData) -> np.ndarray:
        return design_matrix(data, self.spec) @ self.params

    def predict(self, data: FitData) -> np.ndarray:
        return _Family(self.spec.family).inverse(self.linear_predictor(data))

    def glm_coefficients(self) -> GlmCoefficients:
        """Collapse the fitted terms into per-terrain (a, b, c, d) rows.

        Only meaningful for the log link; extra covariates are not represented.
        """
        if self.spec.family != "gaussian_log":
            raise FitError("per-terrain coefficients exist only for the log link")
        rows = {}
        for t in TerrainClass:
            road = t.road
            obst = t.obstruction.value if t.obstruction is not None else None
            a = self.coef("intercept") + self.coef(f"road[{road}]")
            if obst is not None:
                a += self.coef(f"obst[{obst}]")
            slopes = [self.coef(s) + self.coef(f"{s}:road[{road}]") for s in SLOPES]
            rows[t] = (a, *slopes)
        return GlmCoefficients(rows)

    def to_dict(self) -> dict:
        p = self.pvalues
        return {
            "family": self.spec.family,
            "reference_road": self.spec.reference_road,
            "terms": [
                {
                    "term": t,
                    "estimate": float(self.params[i]),
                    "se_model": float(self.se_model[i]),
                    "se_robust": None if self.se_robust is None else float(self.se_robust[i]),
                    "p_value": float(p[i]),
                }
                for i, t in enumerate(self.terms)
            ],
            "diagnostics": {
                "deviance": self.deviance, "rmse": self.rmse, "mae": self.mae, "r2": self.r2,
                "n_obs": self.n_obs, "n_clusters": self.n_clusters, "iterations": self.iterations,
            },
            "coefficients": self.glm_coefficients().to_dict() if self.spec.family == "gaussian_log" else None,
        }


def _collinear_terms(X: np.ndarray, terms: Sequence[str]) -> list[str]:
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    return [terms[i] for i in piv[rank:]]


def cluster_robust_cov(
    X: np.ndarray, resid_score: np.ndarray, bread: np.ndarray, clusters: np.ndarray, correction: bool = True
) -> np.ndarray:
    """Sandwich covariance with per-row scores ``X * resid_score[:, None]`` summed by cluster."""
    _, codes = np.unique(np.asarray(clusters).astype(str), return_inverse=True)
    g = int(codes.max()) + 1 if codes.size else 0
    if g < 2:
        raise FitError("cluster-robust variance needs at least two clusters")
    scores = X * resid_score[:, None]
    summed = np.zeros((g, X.shape[1]))
    np.add.at(summed, codes, scores)
    meat = summed.T @ summed
    cov = bread @ meat @ bread
    if correction:
        n, k = X.shape
        cov *= g / (g - 1) * (n - 1) / (n - k)
    return cov


def fit_glm(
    data: FitData,
    spec: DesignSpec,
    clusters: Optional[np.ndarray] | bool = True,
    max_iter: int = 100,
    tol: float = 1e-8,
    correction: bool = True,
) -> FitResult:
    """Fit by IRLS; ``clusters=True`` clusters on ``data.track``, None/False skips robust SEs."""
    y = np.asarray(data.speed, dtype=float)
    if y.size == 0:
        raise FitError("empty dataset")
    if np.any(~(y > 0)):
        raise FitError("speeds must be positive")
    fam = _Family(spec.family)
    X = design_matrix(data, spec)
    n, k = X.shape
    if k == 0:
        raise FitError("design has no terms")
    bad = _collinear_terms(X, spec.terms)
    if bad:
        raise RankDeficient(bad)

    mu = y.copy()
    eta = fam.link(mu)
    dev = fam.deviance(y, mu)
    trace = [dev]
    beta = np.zeros(k)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = fam.dmu_deta(mu)
        w = g * g / fam.variance(mu)
        z = eta + (y - mu) / g
        sw = np.sqrt(w)
        beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        eta = X @ beta
        mu = fam.inverse(eta)
        new_dev = fam.deviance(y, mu)
        trace.append(new_dev)
        if not np.isfinite(new_dev):
            raise FitError(f"IRLS diverged; deviance trace {trace}")
        if abs(new_dev - dev) / (abs(new_dev) + 0.1) < tol:
            dev = new_dev
            converged = True
            break
        dev = new_dev
    if not converged:
        raise FitError(f"IRLS did not converge in {max_iter} iterations; deviance trace {trace[-5:]}")

    g = fam.dmu_deta(mu)
    var = fam.variance(mu)
    w = g * g / var
    bread = np.linalg.inv(X.T @ (X * w[:, None]))
    dispersion = float(np.sum((y - mu) ** 2 / var) / max(n - k, 1))
    cov_model = dispersion * bread

    cov_robust = None
    n_clusters = None
    if clusters is True:
        clusters = data.track
    if clusters is not None and clusters is not False:
        cov_robust = cluster_robust_cov(X, (y - mu) * g / var, bread, clusters, correction)
        n_clusters = int(np.unique(np.asarray(clusters).astype(str)).size)

    resid = y - mu
    sst = float(np.sum((y - y.mean()) ** 2))
    return FitResult(
        spec=spec,
        params=beta,
        se_model=np.sqrt(np.diag(cov_model)),
        cov_model=cov_model,
        se_robust=None if cov_robust is None else np.sqrt(np.diag(cov_robust)),
        cov_robust=cov_robust,
        deviance=dev,
        rmse=float(np.sqrt(np.mean(resid**2))),
        mae=float(np.mean(np.abs(resid))),
        r2=1 - float(np.sum(resid**2)) / sst if sst > 0 else math.nan,
        n_obs=n,
        n_clusters=n_clusters,
        iterations=it,
        trace=trace,
    )


def cluster_robust_se(fit: FitResult, data: FitData, clusters: np.ndarray) -> np.ndarray:
    """Recompute robust standard errors for ``fit`` under another clustering."""
    fam = _Family(fit.spec.family)
    X = design_matrix(data, fit.spec)
    mu = fam.inverse(X @ fit.params)
    g = fam.dmu_deta(mu)
    var = fam.variance(mu)
    bread = np.linalg.inv(X.T @ (X * (g * g / var)[:, None]))
    cov = cluster_robust_cov(X, (data.speed - mu) * g / var, bread, clusters)
    return np.sqrt(np.diag(cov))


@dataclass
class Elimination:
    fit: FitResult
    dropped: list[tuple[str, float]]


def wald_eliminate(
    data: FitData, spec: DesignSpec, alpha: float = 0.05, clusters=True, **fit_kwargs
) -> Elimination:
    """Backward elimination: drop the least significant term until all pass ``alpha``."""
    dropped: list[tuple[str, float]] = []
    fit = fit_glm(data, spec, clusters=clusters, **fit_kwargs)
    for _ in range(len(spec.terms)):
        p = fit.pvalues
        cands = [
            (-float(p[i]), abs(float(fit.params[i])), t)
            for i, t in enumerate(fit.terms)
            if t != "intercept" and p[i] > alpha
        ]
        if not cands:
            break
        worst = min(cands)
        dropped.append((worst[2], -worst[0]))
        spec = spec.without(worst[2])
        fit = fit_glm(data, spec, clusters=clusters, **fit_kwargs)
    return Elimination(fit, dropped)


def regression_metrics(obs: np.ndarray, pred: np.ndarray) -> dict[str, float]:
    resid = obs - pred
    sst = float(np.sum((obs - obs.mean()) ** 2))
    return {
        "rmse": float(np.sqrt(np.mean(resid**2))),
        "mae": float(np.mean(np.abs(resid))),
        "r2": 1 - float(np.sum(resid**2)) / sst if sst > 0 else math.nan,
        "n": int(obs.size),
    }


def assign_folds(tracks: np.ndarray, k: int, seed: int) -> dict[str, int]:
    """Map each unique track id to a fold, deterministically for a given seed."""
    unique = sorted(set(np.asarray(tracks).astype(str).tolist()))
    if len(unique) < k:
        raise ValueError(f"cannot form {k} folds from {len(unique)} tracks")
    perm = np.random.default_rng(seed).permutation(len(unique))
    folds = {}
    for f, chunk in enumerate(np.array_split(perm, k)):
        for i in chunk:
            folds[unique[i]] = f
    return folds


@dataclass
class CrossValidation:
    folds: list[dict[str, float]]
    mean: dict[str, float]
    pooled: dict[str, float]
    assignment: dict[str, int]


def cross_validate(data: FitData, spec: DesignSpec, k: int = 10, seed: int = 0, **fit_kwargs) -> CrossValidation:
    if k < 2:
        raise ValueError("k must be at least 2")
    assignment = assign_folds(data.track, k, seed)
    fold_of = np.array([assignment[str(t)] for t in data.track])
    pred = np.empty(len(data))
    per_fold = []
    for f in range(k):
        test = fold_of == f
        fit = fit_glm(data.subset(~test), spec, clusters=None, **fit_kwargs)
        pred[test] = fit.predict(data.subset(test))
        per_fold.append(regression_metrics(data.speed[test], pred[test]))
    mean = {m: float(np.mean([f[m] for f in per_fold])) for m in ("rmse", "mae", "r2")}
    return CrossValidation(per_fold, mean, regression_metrics(data.speed, pred), assignment)
