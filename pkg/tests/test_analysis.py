import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trailspeed import analysis, synthetic
from trailspeed.fitting import DesignSpec, FitData
from trailspeed.models import DEFAULT_COEFFICIENTS, Glm, GlmCoefficients, Naismith, PluginModel, build_models
from trailspeed.terrain import TerrainClass

P = TerrainClass.PAVED
SPEC = DesignSpec(("intercept", "hill", "walk", "walk2"))
speeds = arrays(float, st.integers(2, 200), elements=st.floats(0.5, 9.5))


def data(seed, n=2000, **kw):
    return synthetic.glm_dataset(np.random.default_rng(seed), n=n, **kw)


def flat(value):
    return PluginModel("flat", "exp_quadratic", {"a": math.log(value), "b": 0, "c": 0, "d": 0})


def test_metrics_examples():
    obs = np.array([2.0, 4.0, 6.0])
    perfect = analysis.metrics(obs, obs)
    assert (perfect.avg_pct_error, perfect.mse, perfect.rmse, perfect.r2) == (0.0, 0.0, 0.0, 1.0)
    assert analysis.metrics(obs, np.full(3, 4.0)).r2 == 0.0
    worse = analysis.metrics(obs, np.array([6.0, 4.0, 2.0]))
    assert worse.r2 < 0
    assert worse.avg_pct_error == pytest.approx((4 / 2 + 0 + 4 / 6) / 3 * 100)
    with_zero = analysis.metrics(np.array([0.0, 4.0]), np.array([1.0, 5.0]))
    assert with_zero.avg_pct_error == pytest.approx(25.0)


@given(speeds, st.integers(0, 1000))
def test_metrics_properties(obs, seed):
    pred = obs * np.random.default_rng(seed).uniform(0.5, 1.5, obs.size)
    m = analysis.metrics(obs, pred)
    assert m.rmse == pytest.approx(math.sqrt(m.mse))
    if not math.isnan(m.r2):
        assert m.r2 <= 1.0
        sst = np.sum((obs - obs.mean()) ** 2)
        ssres_mean = np.sum((obs - obs.mean()) ** 2)
        assert analysis.metrics(obs, np.full_like(obs, obs.mean())).r2 == pytest.approx(0.0, abs=1e-12)
        if np.sum((obs - pred) ** 2) > ssres_mean and sst > 0:
            assert m.r2 < 0


def test_compare_models_perfect_oracle():
    d = data(0, sigma=0.0)
    reports = analysis.compare_models(d, {"glm": Glm(), "naismith": Naismith()})
    assert reports["glm"].rmse == pytest.approx(0.0, abs=1e-12)
    assert reports["glm"].r2 == pytest.approx(1.0)
    assert reports["naismith"].r2 < 1.0
    assert analysis.metrics_csv(reports).splitlines()[0] == "model,avg_pct_error,mse,rmse,r2,n"


def test_binned_rmse_zero_for_generating_model():
    d = data(1, sigma=0.0)
    curve = analysis.binned_curve(d, Glm(), "walking", "rmse")
    assert np.allclose(curve.values, 0.0, atol=1e-12)
    assert curve.counts.sum() > 0


def test_binned_mean_residual_for_flat_model_on_descents():
    rng = np.random.default_rng(2)
    theta = rng.uniform(-40, -1, 500)
    d = FitData(np.full(500, 4.0), theta, np.abs(theta), np.array([P] * 500, dtype=object), np.zeros(500).astype(str))
    curve = analysis.binned_curve(d, flat(5.0), "walking", "mean_residual")
    assert np.allclose(curve.values, -1.0)
    assert np.all(curve.centers <= 0)  # empty uphill bins emit nothing


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_binned_curve_permutation_invariant(seed):
    d = data(seed, n=300)
    perm = np.random.default_rng(seed).permutation(300)
    for stat in ("rmse", "mean_residual", "mse"):
        a = analysis.binned_curve(d, Naismith(), "hill", stat, "traversing")
        b = analysis.binned_curve(d.subset(perm), Naismith(), "hill", stat, "traversing")
        assert np.array_equal(a.centers, b.centers) and np.array_equal(a.counts, b.counts)
        assert np.allclose(a.values, b.values, rtol=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_pooled_mse_is_weighted_bin_mse(seed):
    d = data(seed, n=400, sigma=0.3)
    pooled = analysis.metrics(d.speed, analysis.predict(Naismith(), d)).mse
    centers = np.arange(-35.0, 40.0, 10.0)
    c = analysis.binned_curve(d, Naismith(), "walking", "mse", None, width=10, centers=centers)
    assert c.counts.sum() == len(d)
    assert float(np.sum(c.values * c.counts) / c.counts.sum()) == pytest.approx(pooled, rel=1e-9)


def test_direction_filters_disjoint_on_steep_ground():
    d = data(3, n=5000)
    steep = d.hill_slope > 10
    climb = analysis.direction_mask(d, "climbing") & steep
    trav = analysis.direction_mask(d, "traversing") & steep
    assert climb.any() and trav.any() and not np.any(climb & trav)
    with pytest.raises(ValueError):
        analysis.direction_mask(d, "diagonal")


def test_bin_centers():
    assert analysis.bin_centers("walking")[[0, -1]].tolist() == [-40.0, 40.0]
    assert analysis.bin_centers("hill").tolist() == list(np.arange(0.0, 45.0, 5.0))


def _fixture(speeds_, theta):
    n = len(speeds_)
    theta = np.full(n, theta, dtype=float)
    return FitData(np.asarray(speeds_, float), theta, np.abs(theta), np.array([P] * n, dtype=object), np.arange(n).astype(str))


def test_ci_band_examples():
    same = analysis.mean_ci_band(_fixture([4.2] * 5, 0.0), "walking", P)
    i = list(same.centers).index(0.0)
    assert same.lower[i] == same.upper[i] == 4.2
    two = analysis.mean_ci_band(_fixture([4.0, 6.0], 0.0), "walking")
    i = list(two.centers).index(0.0)
    assert two.mean[i] == 5.0
    assert two.upper[i] - two.mean[i] == pytest.approx(1.96 * math.sqrt(2) / math.sqrt(2))
    single = analysis.mean_ci_band(_fixture([4.0], 0.0), "walking")
    assert single.centers.size == 0


def test_ci_band_shrinks_with_root_n():
    rng = np.random.default_rng(4)
    small = analysis.mean_ci_band(_fixture(rng.normal(4, 1, 10_000), 0.0), "walking")
    large = analysis.mean_ci_band(_fixture(rng.normal(4, 1, 40_000), 0.0), "walking")
    w = lambda b: float((b.upper - b.lower)[list(b.centers).index(0.0)])  # noqa: E731
    assert w(large) / w(small) == pytest.approx(0.5, rel=0.05)


def _cohort(seed, n_tracks=200, rows=20, shift=0.0):
    rng = np.random.default_rng(seed)
    t = DEFAULT_COEFFICIENTS[P]
    coef = GlmCoefficients({P: (t[0] + shift, *t[1:])})
    return synthetic.glm_dataset(rng, n=n_tracks * rows, n_tracks=n_tracks, coefficients=coef, sigma=0.1)


def test_bootstrap_self_consistent():
    b = _cohort(5)
    tracks = np.array(sorted(set(b.track)))
    pick = np.random.default_rng(0).choice(tracks.size, 100, replace=False)
    a = b.subset(np.isin(b.track, tracks[pick]))
    rep = analysis.bootstrap_cohort_compare(a, b, n_samples=100, sample_tracks=100, spec=SPEC)
    assert rep.fraction_inside >= 0.95


def test_bootstrap_detects_shifted_cohort():
    a = _cohort(6, shift=-0.3)
    b = _cohort(7)
    rep = analysis.bootstrap_cohort_compare(a, b, n_samples=20, sample_tracks=100, spec=SPEC, grid=np.arange(-5.0, 6.0))
    assert not rep.inside_direct.any() and not rep.inside_traverse.any()


def test_bootstrap_degenerate_and_errors():
    b = _cohort(8, n_tracks=20)
    rep = analysis.bootstrap_cohort_compare(b, b, n_samples=1, sample_tracks=20, spec=SPEC)
    # one sample holding every track refits the reference exactly
    assert np.allclose(rep.lower_direct, rep.reference_direct) and rep.fraction_inside > 0.9
    with pytest.raises(ValueError):
        analysis.bootstrap_cohort_compare(b, b, n_samples=1, sample_tracks=21, spec=SPEC)


def test_obstruction_curve():
    rng = np.random.default_rng(9)
    h = rng.uniform(0, 0.4, 5000)
    flat_speed = np.full(5000, 4.5)
    curve = analysis.obstruction_quantile_curve(h, flat_speed)
    assert curve.shape == (25, 3) and np.allclose(curve[:, 1], 4.5)
    assert curve[:, 2].sum() == 5000
    step = np.where(h > 0.10, 4.0, 4.8)
    curve = analysis.obstruction_quantile_curve(h, step)
    below = curve[curve[:, 0] < 0.09]
    above = curve[curve[:, 0] > 0.11]
    assert np.allclose(below[:, 1], 4.8) and np.allclose(above[:, 1], 4.0)
    assert np.all(np.diff(curve[:, 1]) <= 0)
    with pytest.raises(ValueError):
        analysis.obstruction_quantile_curve(h[:24], step[:24])


def test_plot_data(tmp_path):
    models = build_models()
    d = data(10, n=3000, terrains=tuple(TerrainClass))
    tables = analysis.plot_data(models, d)
    assert set(tables) == {
        "baseline_curves.csv", "glm_curves.csv", "ci_bands.csv",
        "model_curves.csv", "binned_rmse.csv", "binned_mean_residual.csv",
    }
    assert set(analysis.plot_data(models)) == {"baseline_curves.csv", "glm_curves.csv", "model_curves.csv"}
    paths = analysis.write_plot_data(tmp_path / "plots", tables)
    assert [p.name for p in paths] == sorted(tables)
    assert all(p.read_text().count("\n") > 1 for p in paths)
