"""Forecast scoring on prediction tables.

Every function here takes rows in the predictions schema
(``model, ticker, date, horizon, y_pred, y_true, y_prior, p_up``), where
``y_prior`` is the last observed price at the forecast origin. A move is
"up" only when the price strictly rises; a flat move counts as down, both
for scoring and for the training targets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from nodecast.errors import ConfigError, InputError, MetricError, SignificanceError

PREDICTION_COLUMNS = ["model", "ticker", "date", "horizon", "y_pred", "y_true", "y_prior", "p_up"]
REGIMES = ("low", "medium", "high")


def check_columns(frame: pd.DataFrame, required=PREDICTION_COLUMNS) -> None:
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise InputError(f"predictions are missing column(s): {', '.join(missing)}")


def moves_up(new, old) -> np.ndarray:
    """The shared direction predicate: strictly higher is up."""
    return np.asarray(new, dtype=float) > np.asarray(old, dtype=float)


# -- point metrics -------------------------------------------------------------------

def mape(y_true, y_pred) -> float:
    """Mean absolute percentage error, in percent."""
    y, f = np.asarray(y_true, dtype=float), np.asarray(y_pred, dtype=float)
    if y.size == 0:
        raise MetricError("MAPE of an empty set")
    if np.any(y == 0):
        raise MetricError("MAPE undefined: an actual price is zero")
    return float(np.mean(np.abs((y - f) / y)) * 100.0)


def rmse(y_true, y_pred) -> float:
    y, f = np.asarray(y_true, dtype=float), np.asarray(y_pred, dtype=float)
    if y.size == 0:
        raise MetricError("RMSE of an empty set")
    return float(np.sqrt(np.mean((y - f) ** 2)))


def directional_accuracy(y_true, y_pred, y_prior) -> float:
    y = np.asarray(y_true, dtype=float)
    if y.size == 0:
        raise MetricError("directional accuracy of an empty set")
    return float(np.mean(moves_up(y_pred, y_prior) == moves_up(y, y_prior)))


def theils_u(y_true, y_pred, y_prior) -> float:
    """Root summed squared error relative to the persistence forecast."""
    y, f, y0 = (np.asarray(a, dtype=float) for a in (y_true, y_pred, y_prior))
    denom = float(np.sum((y - y0) ** 2))
    if denom == 0.0:
        raise MetricError("Theil's U undefined: actual prices never move")
    return float(math.sqrt(np.sum((y - f) ** 2) / denom))


def return_mae(y_true, y_pred, y_prior) -> float:
    """Mean absolute error of implied returns, in percent."""
    y, f, y0 = (np.asarray(a, dtype=float) for a in (y_true, y_pred, y_prior))
    if np.any(y0 == 0):
        raise MetricError("return MAE undefined: a prior price is zero")
    return float(np.mean(np.abs(f / y0 - y / y0)) * 100.0)


def point_metrics(frame: pd.DataFrame) -> dict:
    return {
        "mape": mape(frame["y_true"], frame["y_pred"]),
        "rmse": rmse(frame["y_true"], frame["y_pred"]),
        "da": directional_accuracy(frame["y_true"], frame["y_pred"], frame["y_prior"]),
    }


# -- cross-sectional ranking -------------------------------------------------------------

@dataclass
class ICResult:
    per_day: pd.Series
    mean: float
    skipped: int


def spearman(a, b) -> float:
    """Rank correlation with average ranks for ties; NaN if either side is constant."""
    ra, rb = stats.rankdata(a), stats.rankdata(b)
    ra, rb = ra - ra.mean(), rb - rb.mean()
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    return float(ra @ rb / den) if den > 0 else float("nan")


def information_coefficient(frame: pd.DataFrame) -> ICResult:
    """Per-day rank correlation of predicted vs realised returns across stocks."""
    values, skipped = {}, 0
    for date, g in frame.groupby("date", sort=True):
        if len(g) < 3:
            raise MetricError(f"IC needs at least 3 stocks per day; {date} has {len(g)}")
        pred = g["y_pred"].to_numpy() / g["y_prior"].to_numpy() - 1.0
        real = g["y_true"].to_numpy() / g["y_prior"].to_numpy() - 1.0
        rho = spearman(pred, real)
        if math.isnan(rho):
            skipped += 1
            continue
        values[date] = rho
    per_day = pd.Series(values, dtype=float)
    return ICResult(per_day, float(per_day.mean()) if len(per_day) else float("nan"), skipped)


# -- significance ----------------------------------------------------------------------------

def daily_errors(frame: pd.DataFrame) -> pd.Series:
    """Per-day mean absolute percentage error across stocks."""
    ape = (frame["y_true"] - frame["y_pred"]).abs() / frame["y_true"] * 100.0
    return ape.groupby(frame["date"]).mean().sort_index()


def newey_west_variance(x: np.ndarray, lag: int) -> float:
    """Long-run variance with Bartlett weights ``1 - k / (lag + 1)``."""
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    n = len(x)
    lrv = float(xc @ xc) / n
    for k in range(1, lag + 1):
        lrv += 2.0 * (1.0 - k / (lag + 1)) * float(xc[k:] @ xc[:-k]) / n
    return lrv


@dataclass
class SignificanceResult:
    n: int
    mean_diff: float
    t_stat: float
    t_p: float
    cohens_d: float
    dm_stat: float
    dm_p: float
    degenerate: bool = False


def significance_tests(errors_a, errors_b, h: int = 1, min_n: int = 30) -> SignificanceResult:
    """Paired t and Diebold-Mariano on the loss differential ``a - b``.

    A negative DM statistic means ``a`` has the smaller loss. Identical
    series produce a degenerate result (t = d = 0, DM undefined) instead of
    an exception; any other zero-variance differential raises.
    """
    a, b = np.asarray(errors_a, dtype=float), np.asarray(errors_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise SignificanceError(f"error series must be aligned 1-D arrays, got {a.shape} and {b.shape}")
    if h < 1:
        raise ConfigError(f"horizon must be positive, got {h}")
    n = len(a)
    if n < min_n:
        raise SignificanceError(f"need at least {min_n} paired days, got {n}")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd <= 1e-12 * max(1.0, float(np.abs(d).max())):
        if np.all(d == 0.0):
            return SignificanceResult(n, 0.0, 0.0, 1.0, 0.0, float("nan"), float("nan"), degenerate=True)
        raise SignificanceError("loss differential is constant and non-zero; variance is zero")
    t_stat = mean / (sd / math.sqrt(n))
    t_p = float(2.0 * stats.t.sf(abs(t_stat), df=n - 1))
    lrv = newey_west_variance(d, h - 1)
    if lrv <= 0:
        raise SignificanceError("Newey-West variance is not positive")
    dm = mean / math.sqrt(lrv / n)
    dm_p = float(2.0 * stats.norm.sf(abs(dm)))
    return SignificanceResult(n, mean, float(t_stat), t_p, mean / sd, float(dm), dm_p)


def compare_models(frame: pd.DataFrame, model_a: str, model_b: str, h: int) -> SignificanceResult:
    sub = frame[frame["horizon"] == h]
    ea = daily_errors(sub[sub["model"] == model_a])
    eb = daily_errors(sub[sub["model"] == model_b])
    common = ea.index.intersection(eb.index)
    if len(common) != len(ea) or len(common) != len(eb):
        raise SignificanceError(f"{model_a} and {model_b} are not aligned on dates at horizon {h}")
    return significance_tests(ea.loc[common].to_numpy(), eb.loc[common].to_numpy(), h)


# -- bootstrap ----------------------------------------------------------------------------------

def bootstrap_da_ci(frame: pd.DataFrame, n_boot: int = 1000, level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile interval for directional accuracy, resampling whole days."""
    if n_boot < 1000:
        raise ConfigError(f"n_boot must be at least 1000, got {n_boot}")
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must lie in (0, 1), got {level}")
    hit = moves_up(frame["y_pred"], frame["y_prior"]) == moves_up(frame["y_true"], frame["y_prior"])
    per_day = pd.DataFrame({"date": frame["date"].to_numpy(), "hit": hit}).groupby("date")["hit"].agg(["sum", "count"])
    hits, counts = per_day["sum"].to_numpy(float), per_day["count"].to_numpy(float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(hits), size=(n_boot, len(hits)))
    da = hits[idx].sum(axis=1) / counts[idx].sum(axis=1)
    tail = (1.0 - level) / 2.0 * 100.0
    lo, hi = np.percentile(da, [tail, 100.0 - tail])
    return float(lo), float(hi)


# -- regimes -------------------------------------------------------------------------------------

def regime_thresholds(proxy: pd.Series, dates) -> tuple[float, float]:
    """33rd and 67th percentiles of the proxy over ``dates`` (normally validation)."""
    vals = proxy.loc[proxy.index.isin(list(dates))].dropna().to_numpy()
    if vals.size == 0:
        raise MetricError("no proxy values on the threshold dates")
    lo, hi = np.percentile(vals, [33.0, 67.0])
    return float(lo), float(hi)


def assign_regime(values, thresholds) -> np.ndarray:
    lo, hi = thresholds
    v = np.asarray(values, dtype=float)
    return np.where(v < lo, "low", np.where(v < hi, "medium", "high"))


def regime_report(frame: pd.DataFrame, proxy: pd.Series, thresholds) -> pd.DataFrame:
    """MAPE and DA per volatility bucket. Empty buckets are reported with zero counts."""
    dates = frame["date"].to_numpy()
    missing = set(dates) - set(proxy.index)
    if missing:
        raise MetricError(f"volatility proxy has no value for {len(missing)} prediction date(s)")
    labels = assign_regime(proxy.loc[dates].to_numpy(), thresholds)
    rows = []
    for name in REGIMES:
        g = frame[labels == name]
        if g.empty:
            rows.append({"regime": name, "n_days": 0, "n_obs": 0, "mape": float("nan"), "da": float("nan")})
            continue
        rows.append({"regime": name, "n_days": int(g["date"].nunique()), "n_obs": len(g),
                     "mape": mape(g["y_true"], g["y_pred"]),
                     "da": directional_accuracy(g["y_true"], g["y_pred"], g["y_prior"])})
    return pd.DataFrame(rows)


def volatility_proxy(dates, vol: np.ndarray) -> pd.Series:
    """Cross-stock mean annualised 20-day volatility, indexed by ISO date string."""
    return pd.Series(np.asarray(vol, dtype=float), index=pd.Index(np.asarray(dates).astype(str)))


# -- full report -----------------------------------------------------------------------------------

def evaluate(frame: pd.DataFrame, n_boot: int = 1000, seed: int = 0) -> pd.DataFrame:
    """One row per (model, horizon) with every scalar metric."""
    check_columns(frame)
    rows = []
    for (model, h), g in frame.groupby(["model", "horizon"], sort=True):
        row = {"model": model, "horizon": int(h), "n": len(g), **point_metrics(g)}
        row["theils_u"] = theils_u(g["y_true"], g["y_pred"], g["y_prior"])
        row["return_mae"] = return_mae(g["y_true"], g["y_pred"], g["y_prior"])
        per_day = g.groupby("date")["ticker"].count()
        if per_day.min() >= 3:
            ic = information_coefficient(g)
            row["ic"], row["ic_skipped"] = ic.mean, ic.skipped
        else:
            row["ic"], row["ic_skipped"] = float("nan"), 0
        row["da_lo"], row["da_hi"] = bootstrap_da_ci(g, n_boot, 0.95, seed)
        rows.append(row)
    return pd.DataFrame(rows)


def format_report(table: pd.DataFrame) -> str:
    lines = [f"{'model':<28}{'h':>4}{'MAPE%':>9}{'RMSE':>10}{'DA':>8}{'DA 95% CI':>18}{'U':>8}{'IC':>8}{'retMAE%':>9}"]
    for r in table.itertuples(index=False):
        ci = f"[{r.da_lo:.3f}, {r.da_hi:.3f}]"
        lines.append(f"{r.model:<28}{r.horizon:>4}{r.mape:>9.3f}{r.rmse:>10.4f}{r.da:>8.3f}{ci:>18}"
                     f"{r.theils_u:>8.3f}{r.ic:>8.3f}{r.return_mae:>9.3f}")
    return "\n".join(lines)
