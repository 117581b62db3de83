"""Reproducible synthetic markets with planted sector and sentiment structure.

Log returns follow a sector-factor model with market-wide volatility regimes
and optional AR(1) persistence::

    r[i, t] = ar * r[i, t-1] + vol[t] * (sqrt(s) * f[sector(i), t] + sqrt(1 - s) * e[i, t]) + drift

so that two stocks in the same sector have return correlation ``s`` and
stocks in different sectors are uncorrelated. Sentiment scores lead the next
day's return by construction.

Every random quantity is drawn from its own Philox (counter-based) stream
keyed by ``(seed, entity, quantity)``; stocks can therefore be generated in
any order or in parallel, and a shorter run is a prefix of a longer one.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import pandas as pd

from nodecast.errors import ConfigError, InputError


@dataclass(frozen=True)
class SynthConfig:
    n_stocks: int = 6
    n_days: int = 800
    n_sectors: int = 2
    sector_factor_strength: float = 0.8
    regime_vol_levels: tuple[float, ...] = (0.008, 0.015, 0.03)
    sentiment_lead_strength: float = 0.0
    seed: int = 0
    return_ar: float = 0.0
    sentiment_noise: float = 0.3
    regime_switch_prob: float = 0.02
    drift: float = 2e-4
    mean_posts: float = 25.0
    sparse_day_rate: float = 0.02
    zero_day_rate: float = 0.01
    sentiment_start_day: int = 0
    start_date: str = "2000-01-03"

    def __post_init__(self):
        object.__setattr__(self, "regime_vol_levels", tuple(float(v) for v in self.regime_vol_levels))
        if self.n_stocks <= 0 or self.n_days <= 0:
            raise ConfigError(f"n_stocks and n_days must be positive (got {self.n_stocks}, {self.n_days})")
        if self.n_sectors <= 0:
            raise ConfigError("n_sectors must be positive")
        for name in ("sector_factor_strength", "sentiment_lead_strength", "regime_switch_prob",
                     "sparse_day_rate", "zero_day_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if not self.regime_vol_levels or min(self.regime_vol_levels) <= 0:
            raise ConfigError("regime_vol_levels must be a non-empty list of positive stds")
        if not -1.0 < self.return_ar < 1.0:
            raise ConfigError("return_ar must lie in (-1, 1)")
        if self.sentiment_noise < 0:
            raise ConfigError("sentiment_noise must be non-negative")
        if not 0 <= self.sentiment_start_day < self.n_days:
            raise ConfigError("sentiment_start_day must fall inside the generated range")


@dataclass(frozen=True)
class OhlcvBar:
    date: np.datetime64
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float


RAW_COLUMNS = ("open", "high", "low", "close", "adj_close", "volume")


@dataclass
class MarketSeries:
    """Columnar daily bars for one ticker; missing observations are NaN."""

    ticker: str
    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    adj_close: np.ndarray
    volume: np.ndarray
    sector: str = ""

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        for name in RAW_COLUMNS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = len(self.dates)
        if any(len(getattr(self, c)) != n for c in RAW_COLUMNS):
            raise InputError(f"{self.ticker}: column lengths differ from {n} dates")
        if n > 1 and not np.all(np.diff(self.dates.astype(np.int64)) > 0):
            raise InputError(f"{self.ticker}: dates must be strictly increasing")

    def __len__(self):
        return len(self.dates)

    def raw_matrix(self) -> np.ndarray:
        """(days, 6) array in RAW_COLUMNS order."""
        return np.column_stack([getattr(self, c) for c in RAW_COLUMNS])

    def with_raw(self, raw: np.ndarray) -> "MarketSeries":
        cols = {c: raw[:, k].copy() for k, c in enumerate(RAW_COLUMNS)}
        return MarketSeries(self.ticker, self.dates.copy(), sector=self.sector, **cols)

    @property
    def bars(self) -> Iterator[OhlcvBar]:
        for k, d in enumerate(self.dates):
            yield OhlcvBar(d, *(float(getattr(self, c)[k]) for c in RAW_COLUMNS))

    def ohlc_violations(self) -> int:
        ok = (self.low <= np.minimum(self.open, self.close)) & (self.high >= np.maximum(self.open, self.close))
        ok &= self.volume >= 0
        observed = ~np.isnan(self.raw_matrix()).any(axis=1)
        return int(np.sum(~ok & observed))


@dataclass
class SentimentStream:
    ticker: str
    dates: np.ndarray
    score: np.ndarray
    post_count: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.score = np.clip(np.asarray(self.score, dtype=np.float64), -1.0, 1.0)
        self.post_count = np.asarray(self.post_count, dtype=np.int64)
        if len(self.score) != len(self.dates) or len(self.post_count) != len(self.dates):
            raise InputError(f"{self.ticker}: sentiment columns differ in length")
        if np.any(self.post_count < 0):
            raise InputError(f"{self.ticker}: negative post_count")


def tickers_for(cfg: SynthConfig) -> list[str]:
    return [f"S{i:02d}" for i in range(cfg.n_stocks)]


def sector_of(cfg: SynthConfig, i: int) -> str:
    return f"SEC{i % cfg.n_sectors}"


def _stream(seed: int, entity: str, quantity: str) -> np.random.Generator:
    key = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(entity.encode()), zlib.crc32(quantity.encode())])
    return np.random.Generator(np.random.Philox(key))


def trading_dates(cfg: SynthConfig) -> np.ndarray:
    return pd.bdate_range(cfg.start_date, periods=cfg.n_days).values.astype("datetime64[D]")


def regime_path(cfg: SynthConfig) -> np.ndarray:
    """Index into ``regime_vol_levels`` for each day (market-wide Markov chain)."""
    levels = len(cfg.regime_vol_levels)
    # Separate streams keep a shorter run a prefix of a longer one.
    switch = _stream(cfg.seed, "market", "regime-switch").random(cfg.n_days) < cfg.regime_switch_prob
    jumps = _stream(cfg.seed, "market", "regime-jump").integers(1, max(levels, 2), size=cfg.n_days)
    path = np.zeros(cfg.n_days, dtype=np.int64)
    state = int(_stream(cfg.seed, "market", "regime-start").integers(0, levels))
    for t in range(cfg.n_days):
        if switch[t] and levels > 1:
            state = (state + jumps[t]) % levels
        path[t] = state
    return path


def daily_vol(cfg: SynthConfig) -> np.ndarray:
    return np.asarray(cfg.regime_vol_levels)[regime_path(cfg)]


def _log_returns(cfg: SynthConfig, i: int, vol: np.ndarray) -> np.ndarray:
    s = cfg.sector_factor_strength
    factor = _stream(cfg.seed, sector_of(cfg, i), "factor").standard_normal(cfg.n_days)
    idio = _stream(cfg.seed, tickers_for(cfg)[i], "idio").standard_normal(cfg.n_days)
    shocks = vol * (np.sqrt(s) * factor + np.sqrt(1.0 - s) * idio) + cfg.drift
    if cfg.return_ar == 0.0:
        return shocks
    out = np.empty_like(shocks)
    prev = 0.0
    for t in range(cfg.n_days):
        prev = cfg.return_ar * prev + shocks[t]
        out[t] = prev
    return out


def _one_stock(cfg: SynthConfig, i: int, dates: np.ndarray, vol: np.ndarray) -> MarketSeries:
    ticker = tickers_for(cfg)[i]
    r = _log_returns(cfg, i, vol)
    level = _stream(cfg.seed, ticker, "level")
    c0 = float(level.uniform(20.0, 200.0))
    close = c0 * np.exp(np.cumsum(r))

    gap = _stream(cfg.seed, ticker, "gap").standard_normal(cfg.n_days) * 0.2 * vol
    prev_close = np.concatenate([[c0], close[:-1]])
    open_ = prev_close * np.exp(gap)
    up = np.abs(_stream(cfg.seed, ticker, "wick-up").standard_normal(cfg.n_days)) * 0.5 * vol
    down = np.abs(_stream(cfg.seed, ticker, "wick-down").standard_normal(cfg.n_days)) * 0.5 * vol
    high = np.maximum(open_, close) * np.exp(up)
    low = np.minimum(open_, close) * np.exp(-down)

    base = float(_stream(cfg.seed, ticker, "volume-base").uniform(5e5, 5e6))
    noise = _stream(cfg.seed, ticker, "volume").standard_normal(cfg.n_days)
    volume = np.round(base * np.exp(0.3 * noise + 20.0 * np.abs(r)))

    return MarketSeries(ticker, dates, open_, high, low, close, close.copy(), volume, sector=sector_of(cfg, i))


def generate_market(cfg: SynthConfig) -> list[MarketSeries]:
    dates = trading_dates(cfg)
    vol = daily_vol(cfg)
    return [_one_stock(cfg, i, dates, vol) for i in range(cfg.n_stocks)]


def _post_counts(cfg: SynthConfig, ticker: str, n: int) -> np.ndarray:
    rng = _stream(cfg.seed, ticker, "posts")
    counts = np.maximum(rng.poisson(cfg.mean_posts, size=n), 5)
    u = rng.random(n)
    sparse_draw = rng.integers(1, 5, size=n)
    counts = np.where(u < cfg.sparse_day_rate, sparse_draw, counts)
    counts = np.where(u < cfg.zero_day_rate, 0, counts)
    # Guarantee both fallback paths appear in every 250-day block.
    for start in range(0, n, 250):
        block = min(250, n - start)
        if block < 2:
            break
        zero_at, sparse_at = rng.choice(block, size=2, replace=False)
        counts[start + zero_at] = 0
        counts[start + sparse_at] = int(rng.integers(1, 5))
    return counts.astype(np.int64)


def generate_sentiment(cfg: SynthConfig, market: list[MarketSeries]) -> list[SentimentStream]:
    """Daily mean post score per stock, leading the next day's log return."""
    if len(market) != cfg.n_stocks or any(len(m) != cfg.n_days for m in market):
        raise InputError(
            f"market shape ({len(market)} stocks x {[len(m) for m in market][:3]}... days) "
            f"does not match config ({cfg.n_stocks} x {cfg.n_days})"
        )
    vol = daily_vol(cfg)
    start = cfg.sentiment_start_day
    streams = []
    for series in market:
        r = np.diff(np.log(series.close))
        next_ret = np.concatenate([r, [0.0]])
        noise = _stream(cfg.seed, series.ticker, "sentiment").standard_normal(cfg.n_days)
        score = cfg.sentiment_lead_strength * np.tanh(next_ret / vol) + cfg.sentiment_noise * noise
        counts = _post_counts(cfg, series.ticker, cfg.n_days)
        streams.append(
            SentimentStream(series.ticker, series.dates[start:], np.clip(score[start:], -1, 1), counts[start:])
        )
    return streams
