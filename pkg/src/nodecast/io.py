"""CSV formats exchanged between commands.

Every file opens with one comment line carrying the run's config hash and
seed (``# nodecast config_hash=<hex> seed=<int>``), followed by a plain CSV
table. Floats are written with 17 significant digits so a read-back is exact.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from nodecast.errors import InputError
from nodecast.evaluation import PREDICTION_COLUMNS
from nodecast.synthgen import RAW_COLUMNS, MarketSeries, SentimentStream

OHLCV_COLUMNS = ["date", "ticker", *RAW_COLUMNS]
SENTIMENT_COLUMNS = ["date", "ticker", "score", "post_count"]
SECTOR_COLUMNS = ["ticker", "sector"]
FLOAT_FORMAT = "%.17g"


def stamp(config_hash: str, seed: int) -> str:
    return f"# nodecast config_hash={config_hash} seed={int(seed)}\n"


def write_table(path, frame: pd.DataFrame, config_hash: str, seed: int) -> None:
    body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    Path(path).write_text(stamp(config_hash, seed) + body, encoding="utf-8")


def read_stamp(path) -> dict:
    """The ``key=value`` pairs from a file's leading comment, if any."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return {}
    return dict(tok.split("=", 1) for tok in first[1:].split() if "=" in tok)


def read_table(path, required=(), what: str = "table") -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{what} file not found: {path}")
    try:
        frame = pd.read_csv(path, skiprows=_comment_lines(path), float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot parse {what} {path}: {exc}") from None
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise InputError(f"{what} {path} is missing column(s): {', '.join(missing)}")
    return frame


def _comment_lines(path: Path) -> int:
    n = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            n += 1
    return n


# -- market data ----------------------------------------------------------------------

def market_frame(market: list[MarketSeries]) -> pd.DataFrame:
    parts = []
    for s in market:
        cols = {"date": s.dates.astype(str), "ticker": s.ticker}
        cols.update({c: getattr(s, c) for c in RAW_COLUMNS})
        parts.append(pd.DataFrame(cols))
    return pd.concat(parts, ignore_index=True)[OHLCV_COLUMNS]


def write_ohlcv(path, market: list[MarketSeries], config_hash: str, seed: int) -> None:
    write_table(path, market_frame(market), config_hash, seed)


def write_sectors(path, market: list[MarketSeries], config_hash: str, seed: int) -> None:
    frame = pd.DataFrame({"ticker": [s.ticker for s in market], "sector": [s.sector for s in market]})
    write_table(path, frame, config_hash, seed)


def read_ohlcv(path, sectors_path=None) -> list[MarketSeries]:
    frame = read_table(path, OHLCV_COLUMNS, "OHLCV")
    sectors = {}
    if sectors_path is not None and Path(sectors_path).exists():
        sec = read_table(sectors_path, SECTOR_COLUMNS, "sector map")
        sectors = dict(zip(sec["ticker"].astype(str), sec["sector"].astype(str)))
    out = []
    for ticker, g in frame.groupby("ticker", sort=True):
        g = g.sort_values("date")
        dates = _dates(g["date"], path)
        cols = {c: g[c].to_numpy(dtype=float) for c in RAW_COLUMNS}
        out.append(MarketSeries(str(ticker), dates, sector=sectors.get(str(ticker), ""), **cols))
    if not out:
        raise InputError(f"OHLCV file {path} holds no rows")
    return out


def sentiment_frame(streams: list[SentimentStream]) -> pd.DataFrame:
    parts = [pd.DataFrame({"date": s.dates.astype(str), "ticker": s.ticker, "score": s.score,
                           "post_count": s.post_count}) for s in streams]
    return pd.concat(parts, ignore_index=True)[SENTIMENT_COLUMNS]


def write_sentiment(path, streams: list[SentimentStream], config_hash: str, seed: int) -> None:
    write_table(path, sentiment_frame(streams), config_hash, seed)


def read_sentiment(path) -> list[SentimentStream]:
    frame = read_table(path, SENTIMENT_COLUMNS, "sentiment")
    out = []
    for ticker, g in frame.groupby("ticker", sort=True):
        g = g.sort_values("date")
        out.append(SentimentStream(str(ticker), _dates(g["date"], path), g["score"].to_numpy(dtype=float),
                                   g["post_count"].to_numpy(dtype=np.int64)))
    return out


def _dates(col: pd.Series, path) -> np.ndarray:
    try:
        return np.asarray(col.astype(str).to_numpy(), dtype="datetime64[D]")
    except ValueError as exc:
        raise InputError(f"{path}: dates must be ISO yyyy-mm-dd ({exc})") from None


# -- predictions ------------------------------------------------------------------------

def write_predictions(path, frame: pd.DataFrame, config_hash: str, seed: int) -> None:
    write_table(path, frame[PREDICTION_COLUMNS], config_hash, seed)


def read_predictions(path) -> pd.DataFrame:
    frame = read_table(path, PREDICTION_COLUMNS, "predictions")
    frame["date"] = frame["date"].astype(str)
    frame["ticker"] = frame["ticker"].astype(str)
    frame["model"] = frame["model"].astype(str)
    return frame
