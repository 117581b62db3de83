import itertools
import math

import numpy as np
import pandas as pd
import pytest
import statsmodels.api as sm
from scipy import stats

from nodecast.errors import ConfigError, InputError, MetricError, SignificanceError
from nodecast.evaluation import (
    assign_regime,
    bootstrap_da_ci,
    check_columns,
    compare_models,
    daily_errors,
    directional_accuracy,
    evaluate,
    information_coefficient,
    mape,
    moves_up,
    newey_west_variance,
    regime_report,
    regime_thresholds,
    return_mae,
    rmse,
    significance_tests,
    spearman,
    theils_u,
)

import oracles


def _frame(n_days=40, n_stocks=5, noise=0.01, seed=0, model="m"):
    rng = np.random.default_rng(seed)
    dates = (np.datetime64("2020-01-01") + np.arange(n_days)).astype(str)
    prior = 100 * np.exp(np.cumsum(rng.normal(0, 0.01, size=(n_days, n_stocks)), axis=0))
    true = prior * np.exp(rng.normal(0, 0.01, size=prior.shape))
    pred = true * np.exp(rng.normal(0, noise, size=prior.shape))
    return pd.DataFrame({
        "model": model, "ticker": np.tile([f"S{i}" for i in range(n_stocks)], n_days),
        "date": np.repeat(dates, n_stocks), "horizon": 1,
        "y_pred": pred.ravel(), "y_true": true.ravel(), "y_prior": prior.ravel(), "p_up": 0.5,
    })


# -- point metrics --------------------------------------------------------------

def test_perfect_predictions():
    f = _frame()
    f["y_pred"] = f["y_true"]
    assert mape(f["y_true"], f["y_pred"]) == 0 and rmse(f["y_true"], f["y_pred"]) == 0
    assert directional_accuracy(f["y_true"], f["y_pred"], f["y_prior"]) == 1.0
    assert theils_u(f["y_true"], f["y_pred"], f["y_prior"]) == 0.0


def test_hand_example():
    assert mape([100, 100], [110, 90]) == pytest.approx(10.0)
    assert rmse([100, 100], [110, 90]) == pytest.approx(10.0)


def test_zero_actual_raises():
    with pytest.raises(MetricError):
        mape([0.0, 1.0], [1.0, 1.0])


@pytest.mark.parametrize("seed", range(20))
def test_point_metrics_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 40))
    y, f, y0 = rng.uniform(50, 150, n), rng.uniform(50, 150, n), rng.uniform(50, 150, n)
    y0[: n // 4] = y[: n // 4]          # exercise the flat-move rule
    ape = err2 = hits = num = den = rabs = 0.0
    for k in range(n):
        ape += abs(y[k] - f[k]) / abs(y[k])
        err2 += (y[k] - f[k]) ** 2
        up_pred = 1 if f[k] > y0[k] else 0
        up_true = 1 if y[k] > y0[k] else 0
        hits += up_pred == up_true
        num += (y[k] - f[k]) ** 2
        den += (y[k] - y0[k]) ** 2
        rabs += abs(f[k] / y0[k] - y[k] / y0[k])
    assert mape(y, f) == pytest.approx(100 * ape / n, abs=1e-12)
    assert rmse(y, f) == pytest.approx(math.sqrt(err2 / n), abs=1e-12)
    assert directional_accuracy(y, f, y0) == pytest.approx(hits / n, abs=1e-12)
    assert theils_u(y, f, y0) == pytest.approx(math.sqrt(num) / math.sqrt(den), abs=1e-12)
    assert return_mae(y, f, y0) == pytest.approx(100 * rabs / n, abs=1e-12)


def test_flat_move_is_down():
    assert directional_accuracy([100.0], [99.0], [100.0]) == 1.0
    assert directional_accuracy([100.0], [101.0], [100.0]) == 0.0
    assert not moves_up(5.0, 5.0)


def test_theils_u_hand_case():
    assert theils_u([4.0], [3.0], [2.0]) == pytest.approx(0.5)


def test_theils_u_naive_is_one():
    f = _frame()
    assert theils_u(f["y_true"], f["y_prior"], f["y_prior"]) == 1.0


def test_theils_u_flat_series():
    with pytest.raises(MetricError):
        theils_u([5.0, 5.0], [4.0, 6.0], [5.0, 5.0])


def test_return_mae_identity():
    # return MAE equals MAPE scaled by y_true / y_prior row by row
    f = _frame(seed=3)
    y, p, y0 = f["y_true"].to_numpy(), f["y_pred"].to_numpy(), f["y_prior"].to_numpy()
    scaled = np.mean(np.abs(y - p) / y * (y / y0)) * 100
    assert return_mae(y, p, y0) == pytest.approx(scaled, abs=1e-12)


# -- IC -------------------------------------------------------------------------------------

def test_spearman_tie_case():
    a = [0.01, 0.03, 0.03, -0.02, 0.05]
    b = [0.02, 0.01, 0.04, -0.01, 0.03]
    assert spearman(a, b) == pytest.approx(oracles.brute_spearman(a, b), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_spearman_random(seed):
    rng = np.random.default_rng(seed)
    a = np.round(rng.normal(size=7), 1)
    b = rng.normal(size=7)
    assert spearman(a, b) == pytest.approx(oracles.brute_spearman(a, b), abs=1e-12)
    assert spearman(a, b) == pytest.approx(stats.spearmanr(a, b)[0], abs=1e-12)


def test_ic_extremes_and_skips():
    f = _frame(n_days=3, n_stocks=4)
    f["y_prior"] = 100.0
    f["y_true"] = np.tile([101.0, 102.0, 103.0, 104.0], 3)
    f["y_pred"] = np.r_[[101, 102, 103, 104], [104, 103, 102, 101], [100, 100, 100, 100]].astype(float)
    ic = information_coefficient(f)
    assert ic.per_day.tolist() == [1.0, -1.0]
    assert ic.skipped == 1 and ic.mean == 0.0


def test_ic_needs_three_stocks():
    with pytest.raises(MetricError):
        information_coefficient(_frame(n_stocks=2))


# -- significance ----------------------------------------------------------------------------

def test_identical_errors_degenerate():
    e = np.random.default_rng(0).uniform(size=50)
    r = significance_tests(e, e.copy())
    assert r.degenerate and r.t_stat == 0 and r.cohens_d == 0 and math.isnan(r.dm_stat)


def test_constant_nonzero_differential_raises():
    e = np.random.default_rng(0).uniform(size=50)
    with pytest.raises(SignificanceError):
        significance_tests(e, e + 0.1)


def test_too_few_days():
    with pytest.raises(SignificanceError):
        significance_tests(np.ones(10), np.zeros(10))


def test_better_model_negative_dm():
    rng = np.random.default_rng(1)
    b = rng.uniform(1, 2, size=200)
    a = b - 0.2 + rng.normal(0, 0.05, size=200)
    r = significance_tests(a, b)
    assert r.dm_stat < 0 and r.t_stat < 0 and r.cohens_d < 0 and r.dm_p < 0.05


@pytest.mark.parametrize("seed", range(20))
def test_paired_t_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=60), rng.normal(size=60)
    r = significance_tests(a, b)
    ref = stats.ttest_rel(a, b)
    assert r.t_stat == pytest.approx(ref.statistic, abs=1e-10)
    assert r.t_p == pytest.approx(ref.pvalue, abs=1e-10)
    d = a - b
    assert r.cohens_d == pytest.approx(d.mean() / d.std(ddof=1), abs=1e-12)


@pytest.mark.parametrize("seed,h", [(s, h) for s in range(10) for h in (1, 5, 20)])
def test_dm_matches_hac_regression(seed, h):
    # autocorrelated differential: MA(h-1) of iid noise
    rng = np.random.default_rng(seed)
    e = rng.normal(size=300 + h)
    d = np.convolve(e, np.ones(h) / h, mode="valid")[:300] + 0.05
    b = rng.uniform(1, 2, size=300)
    r = significance_tests(b + d, b, h)
    ols = sm.OLS(d, np.ones((300, 1))).fit(cov_type="HAC", cov_kwds={"maxlags": h - 1, "use_correction": False})
    assert r.dm_stat == pytest.approx(ols.tvalues[0], abs=1e-6)
    assert r.dm_p == pytest.approx(2 * stats.norm.sf(abs(ols.tvalues[0])), abs=1e-6)


def test_newey_west_lag_zero_is_biased_variance():
    x = np.random.default_rng(2).normal(size=40)
    assert newey_west_variance(x, 0) == pytest.approx(x.var(), abs=1e-14)


def test_compare_models_alignment():
    fa, fb = _frame(model="a", seed=1, noise=0.001), _frame(model="b", seed=1, noise=0.02)
    r = compare_models(pd.concat([fa, fb]), "a", "b", 1)
    assert r.n == 40 and r.mean_diff < 0
    with pytest.raises(SignificanceError):
        compare_models(pd.concat([fa, fb.iloc[5:]]), "a", "b", 1)


# -- bootstrap --------------------------------------------------------------------------------------

def test_bootstrap_perfect():
    f = _frame()
    f["y_pred"] = f["y_true"]
    assert bootstrap_da_ci(f, 1000, seed=1) == (1.0, 1.0)


@pytest.mark.parametrize("seed", range(10))
def test_bootstrap_contains_point_and_deterministic(seed):
    f = _frame(seed=seed, noise=0.01)
    da = directional_accuracy(f["y_true"], f["y_pred"], f["y_prior"])
    lo, hi = bootstrap_da_ci(f, 1000, seed=seed)
    assert lo <= da <= hi
    assert bootstrap_da_ci(f, 1000, seed=seed) == (lo, hi)


def test_bootstrap_rejects_small_n():
    with pytest.raises(ConfigError):
        bootstrap_da_ci(_frame(), 100)


# -- regimes --------------------------------------------------------------------------------------------

def test_regime_recombination():
    f = _frame(n_days=60)
    dates = sorted(f["date"].unique())
    proxy = pd.Series(np.random.default_rng(4).uniform(0.1, 0.4, 60), index=dates)
    th = regime_thresholds(proxy, dates[:30])
    rep = regime_report(f, proxy, th)
    assert rep["n_days"].sum() == 60
    pooled = mape(f["y_true"], f["y_pred"])
    recombined = float((rep["mape"] * rep["n_days"]).sum() / rep["n_days"].sum())
    assert pooled == pytest.approx(recombined, abs=1e-12)


def test_regime_empty_buckets_reported():
    f = _frame(n_days=20)
    proxy = pd.Series(0.05, index=sorted(f["date"].unique()))
    rep = regime_report(f, proxy, (0.1, 0.2))
    assert rep.set_index("regime").loc[["medium", "high"], "n_obs"].tolist() == [0, 0]
    assert rep.set_index("regime").loc["medium", "mape"] != rep.set_index("regime").loc["medium", "mape"]


def test_assign_regime_boundaries():
    assert assign_regime([0.1, 0.15, 0.2, 0.3], (0.15, 0.25)).tolist() == ["low", "medium", "medium", "high"]


# -- report ---------------------------------------------------------------------------------------------

def test_missing_column_named():
    f = _frame().drop(columns=["y_prior"])
    with pytest.raises(InputError, match="y_prior"):
        check_columns(f)


def test_evaluate_table():
    f = pd.concat([_frame(model="a"), _frame(model="b", noise=0.03)])
    table = evaluate(f, n_boot=1000)
    assert list(table["model"]) == ["a", "b"]
    assert table["mape"].iloc[0] < table["mape"].iloc[1]
    assert np.all((table["da_lo"] <= table["da"]) & (table["da"] <= table["da_hi"]))


def test_daily_errors():
    f = _frame(n_days=3, n_stocks=3)
    de = daily_errors(f)
    first = f[f["date"] == de.index[0]]
    assert de.iloc[0] == pytest.approx(mape(first["y_true"], first["y_pred"]), abs=1e-12)
