"""Daily-rebalanced, equal-weight long-short backtest.

Timeline: weights chosen at the close of day t are held over the next day
and earn ``returns[t] = close[t+1] / close[t] - 1``. Before rebalancing,
yesterday's book has drifted with its returns; turnover is half the total
absolute change from the drifted book to the new one (one-sided), and the
cost charged is ``2 * turnover * bps / 1e4`` of equity. The opening trade
from cash is not charged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from nodecast.errors import BacktestError, ConfigError, StatError
from nodecast.evaluation import check_columns

TRADING_DAYS = 252


def construct_positions(predicted: np.ndarray, tickers, k: int) -> np.ndarray:
    """+1/(2k) on the k highest predicted returns, -1/(2k) on the k lowest.

    Stocks are ordered by predicted return (descending) with ties broken by
    ticker (ascending); the first k go long and the last k go short. NaN
    predictions are not eligible.
    """
    pred = np.asarray(predicted, dtype=float)
    tickers = np.asarray(tickers)
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    ok = np.flatnonzero(np.isfinite(pred))
    if len(ok) < 2 * k:
        raise BacktestError(f"need at least {2 * k} stocks with predictions, got {len(ok)}")
    order = ok[np.lexsort((tickers[ok], -pred[ok]))]
    w = np.zeros(len(pred))
    w[order[:k]] = 1.0 / (2 * k)
    w[order[-k:]] = -1.0 / (2 * k)
    return w


@dataclass
class Ledger:
    dates: np.ndarray
    weights: np.ndarray      # (T, N) book held over each row's return
    turnover: np.ndarray
    gross: np.ndarray
    cost: np.ndarray
    net: np.ndarray
    equity: np.ndarray       # equity after each row, starting from ``initial``
    initial: float = 1.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"date": self.dates, "turnover": self.turnover, "gross": self.gross,
                             "cost": self.cost, "net": self.net, "equity": self.equity})


def simulate(weights: np.ndarray, returns: np.ndarray, cost_bps: float = 10.0, dates=None,
             drifted: bool = True, initial: float = 1.0) -> Ledger:
    """Run the book ``weights[t]`` over ``returns[t]`` for every row t."""
    W = np.asarray(weights, dtype=float)
    R = np.asarray(returns, dtype=float)
    if W.shape != R.shape or W.ndim != 2:
        raise BacktestError(f"weights {W.shape} and returns {R.shape} must be aligned (days, stocks)")
    if cost_bps < 0:
        raise ConfigError("cost_bps must be non-negative")
    held = W != 0
    if np.any(held & ~np.isfinite(R)):
        t, i = np.argwhere(held & ~np.isfinite(R))[0]
        raise BacktestError(f"missing return for a held position (row {t}, stock {i})")
    R = np.where(held, R, np.nan_to_num(R, nan=0.0))
    gross = np.einsum("ti,ti->t", W, R)
    T = len(W)
    turnover = np.zeros(T)
    for t in range(1, T):
        if drifted:
            prev = W[t - 1] * (1.0 + R[t - 1]) / (1.0 + gross[t - 1])
        else:
            prev = W[t - 1]
        turnover[t] = 0.5 * np.abs(W[t] - prev).sum()
    cost = 2.0 * turnover * cost_bps * 1e-4
    net = gross - cost
    equity = initial * np.cumprod(1.0 + net)
    dates = np.arange(T) if dates is None else np.asarray(dates)
    return Ledger(dates, W, turnover, gross, cost, net, equity, initial)


def max_drawdown(equity) -> float:
    """Largest peak-to-trough fall as a fraction of the peak."""
    e = np.asarray(equity, dtype=float)
    if e.size < 2:
        raise StatError("drawdown needs at least two equity points")
    peak = np.maximum.accumulate(e)
    return float(np.max((peak - e) / peak))


def annualized_return(daily) -> float:
    r = np.asarray(daily, dtype=float)
    if r.size == 0:
        raise StatError("no daily returns")
    return float(np.prod(1.0 + r) ** (TRADING_DAYS / r.size) - 1.0)


def sharpe_ratio(daily) -> float:
    r = np.asarray(daily, dtype=float)
    if r.size < 2:
        raise StatError("Sharpe needs at least two daily returns")
    sd = float(r.std(ddof=1))
    if sd <= 1e-15 * max(1.0, float(np.abs(r).max())):
        raise StatError("Sharpe undefined: daily returns have zero variance")
    return float(r.mean() / sd * math.sqrt(TRADING_DAYS))


def performance_stats(ledger: Ledger, which: str = "net") -> dict:
    daily = ledger.net if which == "net" else ledger.gross
    equity = ledger.initial * np.cumprod(1.0 + daily)
    return {
        "annualized_return": annualized_return(daily),
        "sharpe": sharpe_ratio(daily),
        "max_drawdown": max_drawdown(np.r_[ledger.initial, equity]),
        "mean_turnover": float(ledger.turnover[1:].mean()) if len(ledger.turnover) > 1 else 0.0,
    }


SUMMARY_ROWS = (
    "Annualized Return",
    "Annualized Sharpe Ratio",
    "Maximum Drawdown",
    "Average Daily Turnover",
    "Buy-and-Hold Return",
    "Buy-and-Hold Maximum Drawdown",
)


def summary_table(ledger: Ledger, benchmark_daily=None) -> pd.DataFrame:
    """Gross and net columns over the standard row set. Sharpe is NaN when undefined."""
    out = {}
    for col, which in (("Gross", "gross"), ("Net", "net")):
        daily = ledger.gross if which == "gross" else ledger.net
        equity = ledger.initial * np.cumprod(1.0 + daily)
        try:
            sharpe = sharpe_ratio(daily)
        except StatError:
            sharpe = float("nan")
        out[col] = [annualized_return(daily), sharpe, max_drawdown(np.r_[ledger.initial, equity]),
                    float(ledger.turnover[1:].mean()) if len(ledger.turnover) > 1 else 0.0]
    bench = [float("nan"), float("nan")]
    if benchmark_daily is not None:
        b = np.asarray(benchmark_daily, dtype=float)
        bench = [annualized_return(b), max_drawdown(np.r_[1.0, np.cumprod(1.0 + b)])]
    for col in out:
        out[col] += bench
    return pd.DataFrame(out, index=list(SUMMARY_ROWS))


# -- from predictions ----------------------------------------------------------------------------

def panels_from_predictions(frame: pd.DataFrame, model: str | None = None, horizon: int = 1):
    """Predicted and realised next-day returns as (dates, tickers, predicted, realised)."""
    check_columns(frame)
    sub = frame[frame["horizon"] == horizon]
    if model is not None:
        sub = sub[sub["model"] == model]
    elif sub["model"].nunique() > 1:
        raise BacktestError("predictions hold several models; choose one")
    if sub.empty:
        raise BacktestError(f"no horizon-{horizon} predictions to trade")
    pred = (sub["y_pred"] / sub["y_prior"] - 1.0).to_numpy()
    real = (sub["y_true"] / sub["y_prior"] - 1.0).to_numpy()
    keyed = pd.DataFrame({"date": sub["date"].to_numpy(), "ticker": sub["ticker"].to_numpy(),
                          "pred": pred, "real": real})
    p = keyed.pivot(index="date", columns="ticker", values="pred").sort_index()
    r = keyed.pivot(index="date", columns="ticker", values="real").reindex(index=p.index, columns=p.columns)
    return p.index.to_numpy(), list(p.columns), p.to_numpy(), r.to_numpy()


def run_backtest(frame: pd.DataFrame, k: int = 5, cost_bps: float = 10.0, model: str | None = None,
                 drifted: bool = True, perfect_foresight: bool = False):
    """Ledger, performance summary and the equal-weight buy-and-hold daily returns."""
    dates, tickers, pred, real = panels_from_predictions(frame, model)
    signal = real if perfect_foresight else pred
    W = np.vstack([construct_positions(row, tickers, k) for row in signal])
    ledger = simulate(W, real, cost_bps, dates, drifted)
    bench = np.nanmean(real, axis=1)
    return ledger, summary_table(ledger, bench), bench
