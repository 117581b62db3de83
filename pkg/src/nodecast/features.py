"""Imputation, technical indicators, expanding z-scores and chronological splits.

Each stock contributes 17 features per day: the six raw OHLCV columns and 11
indicators derived from the close. Indicators need a warm-up of
``WARMUP`` days (EMA-26 is the longest look-back); those leading days are
dropped before normalization so no target or input ever uses a partial window.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

from nodecast.errors import ConfigError, FeatureError, ImputationError, InputError, NormalizationError
from nodecast.synthgen import RAW_COLUMNS, MarketSeries

INDICATOR_NAMES = (
    "sma5", "sma10", "sma20", "ema5", "ema10", "ema20",
    "rsi", "macd", "daily_return", "log_return", "rolling_vol",
)
FEATURE_NAMES = RAW_COLUMNS + INDICATOR_NAMES
N_FEATURES = len(FEATURE_NAMES)
CLOSE = FEATURE_NAMES.index("close")
WARMUP = 26
SIGMA_FLOOR = 1e-8

RSI_WINDOW = 14
VOL_WINDOW = 20


# -- imputation ---------------------------------------------------------------

def _fill_column(x: np.ndarray, mode: str, max_interp: int, interp_limit: int | None = None) -> np.ndarray:
    out = x.copy()
    missing = np.isnan(out)
    if not missing.any():
        return out
    if missing[0]:
        raise ImputationError("series starts with a gap; no earlier value to anchor imputation")
    n = len(out)
    t = 0
    while t < n:
        if not missing[t]:
            t += 1
            continue
        start = t
        while t < n and missing[t]:
            t += 1
        left = out[start - 1]
        length = t - start
        limit = n if interp_limit is None else interp_limit
        if mode == "train" and length <= max_interp and t < limit:
            right = out[t]
            k = np.arange(1, length + 1)
            out[start:t] = left + (right - left) * k / (length + 1)
        else:
            out[start:t] = left
    return out


def impute_series(
    series: MarketSeries, mode: str = "train", max_interp: int = 2, eval_from: int | None = None
) -> tuple[MarketSeries, np.ndarray]:
    """Fill NaN cells; returns the filled series and a (days, 6) mask of imputed cells.

    ``train`` interpolates gaps of at most ``max_interp`` days linearly between
    the surrounding observations and forward-fills longer or trailing gaps.
    ``eval`` only forward-fills, so no value ever depends on a later day.
    In train mode, ``eval_from`` (a day index) restricts interpolation to gaps
    whose right anchor lies before it; later gaps are forward-filled.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"imputation mode must be 'train' or 'eval', got {mode!r}")
    raw = series.raw_matrix()
    mask = np.isnan(raw)
    try:
        filled = np.column_stack([_fill_column(raw[:, k], mode, max_interp, eval_from) for k in range(raw.shape[1])])
    except ImputationError as exc:
        raise ImputationError(f"{series.ticker}: {exc}") from None
    return series.with_raw(filled), mask


# -- indicators ---------------------------------------------------------------

def sma(x: np.ndarray, n: int) -> np.ndarray:
    out = np.full(len(x), np.nan)
    if len(x) >= n:
        out[n - 1:] = sliding_window_view(x, n).mean(axis=1)
    return out


def ema(x: np.ndarray, n: int) -> np.ndarray:
    """Exponential average with smoothing 2/(n+1), anchored at the first value."""
    a = 2.0 / (n + 1.0)
    if len(x) == 0:
        return np.zeros(0)
    y, _ = lfilter([a], [1.0, -(1.0 - a)], x, zi=[(1.0 - a) * x[0]])
    return y


def rsi(close: np.ndarray, window: int = RSI_WINDOW) -> np.ndarray:
    """Momentum oscillator from simple means of the last ``window`` gains and losses."""
    out = np.full(len(close), np.nan)
    if len(close) <= window:
        return out
    d = sliding_window_view(np.diff(close), window)
    gain = np.maximum(d, 0.0).mean(axis=1)
    loss = np.maximum(-d, 0.0).mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 100.0 - 100.0 / (1.0 + gain / loss)
    val = np.where(loss == 0.0, np.where(gain == 0.0, 50.0, 100.0), val)
    out[window:] = val
    return out


def rolling_std(r: np.ndarray, window: int = VOL_WINDOW) -> np.ndarray:
    """Sample std over trailing windows of ``r``; NaNs in ``r`` propagate."""
    out = np.full(len(r), np.nan)
    if len(r) >= window:
        out[window - 1:] = sliding_window_view(r, window).std(axis=1, ddof=1)
    return out


@dataclass
class Indicators:
    values: np.ndarray          # (days, 11) in INDICATOR_NAMES order, NaN inside warm-up
    macd_signal: np.ndarray
    valid: np.ndarray           # bool, False for warm-up days

    def column(self, name: str) -> np.ndarray:
        return self.values[:, INDICATOR_NAMES.index(name)]


def compute_indicators(close: np.ndarray) -> Indicators:
    close = np.asarray(close, dtype=np.float64)
    if len(close) <= WARMUP:
        raise FeatureError(f"need more than {WARMUP} days for indicators, got {len(close)}")
    if not np.all(np.isfinite(close)) or np.any(close <= 0):
        raise FeatureError("close prices must be finite and positive; impute first")
    n = len(close)
    ret = np.full(n, np.nan)
    ret[1:] = np.diff(close) / close[:-1]
    logret = np.full(n, np.nan)
    logret[1:] = np.diff(np.log(close))
    macd = ema(close, 12) - ema(close, 26)
    cols = [
        sma(close, 5), sma(close, 10), sma(close, 20),
        ema(close, 5), ema(close, 10), ema(close, 20),
        rsi(close), macd, ret, logret, rolling_std(ret),
    ]
    values = np.column_stack(cols)
    valid = np.arange(n) >= WARMUP
    values[~valid] = np.nan
    return Indicators(values, ema(macd, 9), valid)


# -- feature matrix -----------------------------------------------------------

@dataclass
class FeatureMatrix:
    """Features on a shared calendar: ``values[t, i, k]`` for day t, stock i, feature k."""

    dates: np.ndarray
    tickers: list[str]
    values: np.ndarray
    imputed: np.ndarray
    sectors: list[str] = field(default_factory=list)
    close: np.ndarray | None = None   # raw (unnormalized) closes, (days, stocks)

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] != N_FEATURES:
            raise FeatureError(f"feature matrix must be (days, stocks, {N_FEATURES}), got {self.values.shape}")
        if self.values.shape[:2] != (len(self.dates), len(self.tickers)):
            raise FeatureError("feature matrix axes disagree with dates/tickers")
        if self.close is None:
            self.close = self.values[:, :, CLOSE].copy()


def align_market(market: list[MarketSeries]) -> list[MarketSeries]:
    """Reindex every series onto the union calendar, leaving NaN where a stock has no bar."""
    if not market:
        raise InputError("empty market")
    calendar = np.unique(np.concatenate([m.dates for m in market]))
    out = []
    for m in market:
        if len(m.dates) == len(calendar) and np.array_equal(m.dates, calendar):
            out.append(m)
            continue
        raw = np.full((len(calendar), len(RAW_COLUMNS)), np.nan)
        raw[np.searchsorted(calendar, m.dates)] = m.raw_matrix()
        cols = {c: raw[:, k] for k, c in enumerate(RAW_COLUMNS)}
        out.append(MarketSeries(m.ticker, calendar, sector=m.sector, **cols))
    return out


def build_features(market: list[MarketSeries], mode: str = "train", eval_from: str | None = None) -> FeatureMatrix:
    """Impute, derive indicators and stack the raw 17-feature matrix with warm-up days removed.

    ``eval_from`` is the first date imputed in forward-fill-only fashion
    (normally the first validation date).
    """
    aligned = align_market(market)
    cut = None
    if eval_from is not None:
        cut = int(np.searchsorted(aligned[0].dates, np.datetime64(eval_from, "D")))
    blocks, masks = [], []
    for series in aligned:
        filled, mask = impute_series(series, mode, eval_from=cut)
        ind = compute_indicators(filled.close)
        blocks.append(np.column_stack([filled.raw_matrix(), ind.values]))
        close_mask = mask[:, RAW_COLUMNS.index("close")]
        masks.append(np.column_stack([mask, np.repeat(close_mask[:, None], len(INDICATOR_NAMES), axis=1)]))
    values = np.stack(blocks, axis=1)[WARMUP:]
    imputed = np.stack(masks, axis=1)[WARMUP:]
    return FeatureMatrix(
        dates=aligned[0].dates[WARMUP:],
        tickers=[m.ticker for m in aligned],
        values=values,
        imputed=imputed,
        sectors=[m.sector for m in aligned],
    )


# -- splits ---------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSplit:
    """Chronological partition of ``n_days`` as [0, train_end), [train_end, val_end), [val_end, n_days)."""

    n_days: int
    train_end: int
    val_end: int

    def __post_init__(self):
        if not 0 < self.train_end < self.val_end < self.n_days:
            raise ConfigError(f"split boundaries must satisfy 0 < {self.train_end} < {self.val_end} < {self.n_days}")

    @property
    def train(self) -> slice:
        return slice(0, self.train_end)

    @property
    def validation(self) -> slice:
        return slice(self.train_end, self.val_end)

    @property
    def test(self) -> slice:
        return slice(self.val_end, self.n_days)

    def region(self, name: str) -> slice:
        try:
            return {"train": self.train, "validation": self.validation, "val": self.validation, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split region {name!r}") from None


def partition_dataset(n_days: int, fractions=(0.7, 0.15, 0.15)) -> DatasetSplit:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigError(f"need three positive split fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")
    train_end = int(round(n_days * fractions[0]))
    val_end = int(round(n_days * (fractions[0] + fractions[1])))
    return DatasetSplit(n_days, train_end, val_end)


def partition_by_dates(dates: np.ndarray, train_last: str, val_last: str) -> DatasetSplit:
    """Split so the training range ends on ``train_last`` and validation on ``val_last`` (inclusive)."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    train_end = int(np.searchsorted(dates, np.datetime64(train_last, "D"), side="right"))
    val_end = int(np.searchsorted(dates, np.datetime64(val_last, "D"), side="right"))
    return DatasetSplit(len(dates), train_end, val_end)


# -- normalization -----------------------------------------------------------

def _finish(x, mean, var, count):
    std = np.sqrt(var)
    ok = (count > 1) & (std >= SIGMA_FLOOR)
    safe = np.where(ok, std, 1.0)
    return np.where(ok, (x - mean) / safe, 0.0)


def normalize_expanding(values: np.ndarray, split: DatasetSplit) -> tuple[np.ndarray, dict]:
    """Expanding-window z-scores per (stock, feature).

    Training and validation days use mean and sample std of all days up to and
    including the current one. Test days use the statistics of the complete
    training range, frozen. Returns the normalized array and those frozen
    statistics (``mean``, ``std``).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != split.n_days:
        raise NormalizationError(f"split covers {split.n_days} days but features have {values.shape[0]}")
    if split.train_end <= 0:
        raise NormalizationError("empty training range")
    if not np.all(np.isfinite(values)):
        raise NormalizationError("features contain non-finite values; impute and trim warm-up first")
    out = np.empty_like(values)
    # Welford recursion, vectorised across stocks and features.
    mean = np.zeros(values.shape[1:])
    m2 = np.zeros(values.shape[1:])
    frozen = None
    for t in range(split.val_end):
        k = t + 1
        delta = values[t] - mean
        mean = mean + delta / k
        m2 = m2 + delta * (values[t] - mean)
        var = m2 / (k - 1) if k > 1 else np.zeros_like(m2)
        out[t] = _finish(values[t], mean, var, k)
        if k == split.train_end:
            frozen = {"mean": mean.copy(), "std": np.sqrt(var), "count": k}
    test = values[split.val_end:]
    out[split.val_end:] = _finish(test, frozen["mean"], frozen["std"] ** 2, frozen["count"])
    return out, frozen


def apply_frozen(values: np.ndarray, stats: dict) -> np.ndarray:
    """Normalize new rows with previously frozen training statistics."""
    return _finish(np.asarray(values, dtype=np.float64), stats["mean"], stats["std"] ** 2, stats["count"])
