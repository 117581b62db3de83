"""Post scoring, daily aggregation with sparse-day fallbacks, and multi-scale sentiment.

The scorer is pluggable. The default lexicon scorer is a deterministic stand-in
for a fine-tuned language model; an external command or a file of pre-scored
posts can be substituted without touching the pipeline.
"""
from __future__ import annotations

import html
import re
import subprocess
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Protocol, Sequence

import numpy as np
import pandas as pd

from nodecast import autograd as ag
from nodecast.autograd import Tensor
from nodecast.errors import InputError
from nodecast.synthgen import SentimentStream

MIN_POSTS = 5
SCALES = (1, 5, 20)


# -- text -----------------------------------------------------------------------

_URL = re.compile(r"(https?://\S+|www\.\S+)", re.IGNORECASE)
_TAG = re.compile(r"<(?!URL>)[^>]*>")
_RETWEET = re.compile(r"(?<!\w)RT:?(?=\s|$)")
_HANDLE = re.compile(r"@\w+")
_ELONGATED = re.compile(r"([A-Za-z])\1{2,}")
_CASHTAG = re.compile(r"\$\s+([A-Za-z]{1,6})\b")
_ORDINAL = re.compile(r"\b(\d+)(st|nd|rd|th)\b", re.IGNORECASE)
_SPECIAL = re.compile(r"[^A-Za-z0-9$@<>%.,!?'\s-]")
_SPACE = re.compile(r"\s+")


def preprocess_text(raw: str) -> str:
    """Normalise a social-media post for scoring.

    Entities are decoded and markup removed, retweet markers dropped, handles
    anonymised to ``@user``, links replaced by ``<URL>``, letter runs of three
    or more cut to two, split cashtags rejoined and ordinal suffixes removed.
    """
    text = html.unescape(raw or "")
    text = _URL.sub(" <URL> ", text)
    text = _TAG.sub(" ", text)
    text = _RETWEET.sub(" ", text)
    text = _HANDLE.sub("@user", text)
    text = _ELONGATED.sub(r"\1\1", text)
    text = _CASHTAG.sub(r"$\1", text)
    text = _ORDINAL.sub(r"\1", text)
    text = _SPECIAL.sub(" ", text)
    return _SPACE.sub(" ", text).strip()


# -- scoring --------------------------------------------------------------------

@dataclass(frozen=True)
class ScoredPost:
    ticker: str
    date: np.datetime64
    p_neg: float
    p_neu: float
    p_pos: float

    def __post_init__(self):
        probs = (self.p_neg, self.p_neu, self.p_pos)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-6:
            raise InputError(f"class probabilities must be non-negative and sum to 1, got {probs}")

    @property
    def score(self) -> float:
        return self.p_pos - self.p_neg


class Scorer(Protocol):
    def __call__(self, texts: Sequence[str]) -> np.ndarray:
        """Return an (n, 3) array of (p_neg, p_neu, p_pos)."""


def load_lexicon(path=None) -> tuple[frozenset, frozenset]:
    if path is None:
        text = resources.files("nodecast").joinpath("data/lexicon.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    pos, neg = set(), set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        sign, _, term = line.partition(" ")
        if sign not in "+-" or not term.strip():
            raise InputError(f"bad lexicon line {line!r}; expected '+ term' or '- term'")
        (pos if sign == "+" else neg).add(term.strip().lower())
    return frozenset(pos), frozenset(neg)


_WORD = re.compile(r"[a-z$]+")


def lexicon_stub_score(text: str, lexicon=None) -> tuple[float, float, float]:
    """(p_neg, p_neu, p_pos) as a softmax over (neg hits, 1, pos hits)."""
    pos, neg = lexicon if lexicon is not None else _default_lexicon()
    words = _WORD.findall(text.lower())
    n_pos = sum(w in pos for w in words)
    n_neg = sum(w in neg for w in words)
    logits = np.array([n_neg, 1.0, n_pos], dtype=np.float64)
    e = np.exp(logits - logits.max())
    p = e / e.sum()
    return float(p[0]), float(p[1]), float(p[2])


_LEXICON_CACHE: dict = {}


def _default_lexicon():
    if "default" not in _LEXICON_CACHE:
        _LEXICON_CACHE["default"] = load_lexicon()
    return _LEXICON_CACHE["default"]


class LexiconScorer:
    def __init__(self, path=None):
        self.lexicon = load_lexicon(path) if path else _default_lexicon()

    def __call__(self, texts):
        return np.array([lexicon_stub_score(preprocess_text(t), self.lexicon) for t in texts]).reshape(-1, 3)


class CommandScorer:
    """Pipes one post per line to an external program that prints ``p_neg p_neu p_pos`` per line."""

    def __init__(self, command: Sequence[str], timeout: float = 600.0):
        self.command = list(command)
        self.timeout = timeout

    def __call__(self, texts):
        payload = "\n".join(preprocess_text(t).replace("\n", " ") for t in texts) + "\n"
        done = subprocess.run(self.command, input=payload, capture_output=True, text=True,
                              timeout=self.timeout, check=False)
        if done.returncode != 0:
            raise InputError(f"scorer command failed ({done.returncode}): {done.stderr.strip()[:200]}")
        rows = [line.split() for line in done.stdout.splitlines() if line.strip()]
        if len(rows) != len(texts) or any(len(r) != 3 for r in rows):
            raise InputError(f"scorer command returned {len(rows)} rows for {len(texts)} posts")
        return np.array(rows, dtype=np.float64)


class PrescoredScorer:
    """Looks probabilities up in a CSV with columns ``text,p_neg,p_neu,p_pos``."""

    def __init__(self, path):
        table = pd.read_csv(path, comment="#")
        missing = {"text", "p_neg", "p_neu", "p_pos"} - set(table.columns)
        if missing:
            raise InputError(f"pre-scored file lacks columns {sorted(missing)}")
        self.table = {preprocess_text(t): (a, b, c)
                      for t, a, b, c in table[["text", "p_neg", "p_neu", "p_pos"]].itertuples(index=False)}

    def __call__(self, texts):
        out = []
        for t in texts:
            key = preprocess_text(t)
            if key not in self.table:
                raise InputError(f"post not found in pre-scored file: {key[:60]!r}")
            out.append(self.table[key])
        return np.array(out, dtype=np.float64).reshape(-1, 3)


def score_posts(posts: pd.DataFrame, scorer: Scorer | None = None) -> pd.DataFrame:
    """Daily ``date,ticker,score,post_count`` from raw posts (``date,ticker,text``)."""
    missing = {"date", "ticker", "text"} - set(posts.columns)
    if missing:
        raise InputError(f"posts table lacks columns {sorted(missing)}")
    scorer = scorer or LexiconScorer()
    probs = np.asarray(scorer(list(posts["text"].astype(str))), dtype=np.float64)
    if probs.shape != (len(posts), 3) or probs.min(initial=0.0) < 0 or np.any(np.abs(probs.sum(axis=1) - 1) > 1e-6):
        raise InputError("scorer must return non-negative (p_neg, p_neu, p_pos) rows summing to 1")
    frame = posts[["date", "ticker"]].copy()
    frame["score"] = probs[:, 2] - probs[:, 0]
    daily = frame.groupby(["date", "ticker"], sort=True)["score"].agg(["mean", "size"]).reset_index()
    return daily.rename(columns={"mean": "score", "size": "post_count"})


# -- aggregation and multi-scale averages --------------------------------------------

def _alpha(k: int) -> float:
    return 2.0 / (k + 1.0)


@dataclass
class SentimentState:
    """Latest multi-scale values and those of the last day with enough posts."""

    s: tuple[float, float, float] = (0.0, 0.0, 0.0)
    last_sufficient: tuple[float, float, float] = (0.0, 0.0, 0.0)
    started: bool = False


def aggregate_daily(post_scores: Sequence[float] | float, post_count: int | None, state: SentimentState):
    """Advance one day. ``post_scores`` is either the list of post scores or
    their mean (then pass ``post_count``). Returns ``(new_state, raw, fallback)``;
    ``raw`` is None on a zero-post day, where all scales carry over instead."""
    if post_count is None:
        scores = list(post_scores)
        post_count = len(scores)
        mean = float(np.mean(scores)) if scores else 0.0
    else:
        mean = float(post_scores)
    if post_count == 0:
        s = state.last_sufficient
        return SentimentState(s, state.last_sufficient, state.started), None, True
    fallback = post_count < MIN_POSTS
    raw = state.s[1] if fallback else min(max(mean, -1.0), 1.0)
    if not state.started:
        s = (raw, raw, raw)
    else:
        s = tuple(_alpha(k) * raw + (1.0 - _alpha(k)) * prev for k, prev in zip(SCALES, state.s))
    last = state.last_sufficient if fallback else s
    return SentimentState(s, last, True), raw, fallback


@dataclass
class SentimentFeatures:
    values: np.ndarray      # (days, 3): 1-, 5- and 20-day scales
    post_count: np.ndarray
    fallback: np.ndarray

    @property
    def s1(self):
        return self.values[:, 0]


def multiscale_features(scores: np.ndarray, post_counts: np.ndarray) -> SentimentFeatures:
    """Run the fallback rules and the 1/5/20-day averages over a daily series."""
    scores = np.asarray(scores, dtype=np.float64)
    post_counts = np.asarray(post_counts, dtype=np.int64)
    state = SentimentState()
    out = np.zeros((len(scores), 3))
    flags = np.zeros(len(scores), dtype=bool)
    for t in range(len(scores)):
        state, _, flags[t] = aggregate_daily(scores[t], int(post_counts[t]), state)
        out[t] = state.s
    return SentimentFeatures(out, post_counts, flags)


def ema_scales(raw: np.ndarray) -> np.ndarray:
    """The three averages of an already-cleaned daily series, anchored at its first value."""
    raw = np.asarray(raw, dtype=np.float64)
    out = np.empty((len(raw), 3))
    for j, k in enumerate(SCALES):
        a, prev = _alpha(k), raw[0] if len(raw) else 0.0
        for t, r in enumerate(raw):
            prev = a * r + (1 - a) * prev
            out[t, j] = prev
    return out


def align_sentiment(streams: Iterable[SentimentStream], dates: np.ndarray, tickers: Sequence[str]):
    """Multi-scale features on the full price calendar, shape (days, stocks, 3).

    Calendar days before a stock's stream starts stay neutral (0) and are
    flagged; calendar days missing inside the stream count as zero-post days.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    by_ticker = {s.ticker: s for s in streams}
    values = np.zeros((len(dates), len(tickers), 3))
    flags = np.ones((len(dates), len(tickers)), dtype=bool)
    for i, tk in enumerate(tickers):
        s = by_ticker.get(tk)
        if s is None or len(s.dates) == 0:
            continue
        start = int(np.searchsorted(dates, s.dates[0]))
        sub = dates[start:]
        pos = np.searchsorted(s.dates, sub)
        pos = np.minimum(pos, len(s.dates) - 1)
        hit = s.dates[pos] == sub
        score = np.where(hit, s.score[pos], 0.0)
        count = np.where(hit, s.post_count[pos], 0)
        feats = multiscale_features(score, count)
        values[start:, i] = feats.values
        flags[start:, i] = feats.fallback
    return values, flags


# -- model-side pieces ----------------------------------------------------------------

def scale_keys(K: Tensor, S, beta: Tensor) -> Tensor:
    """Keys scaled by ``1 + beta * S``; ``S`` broadcasts against ``K``."""
    return K * (1.0 + beta * ag.as_tensor(S))


def sentiment_branch_predict(params: dict, sent_last, close_last) -> Tensor:
    """Two-layer regressor over [S1, S5, S20, normalized close] -> one value per horizon."""
    z = ag.concat([ag.as_tensor(sent_last), ag.as_tensor(close_last)], axis=-1)
    hidden = ag.relu(z @ params["sent.W1"] + params["sent.b1"])
    return hidden @ params["sent.W2"] + params["sent.b2"]


def mean_abs_sentiment(s1: np.ndarray) -> np.ndarray:
    """Cross-stock mean of |S1| per row of a (..., stocks) array."""
    return np.abs(np.asarray(s1)).mean(axis=-1)
