"""Volatility- and sentiment-conditioned blending of the two branch forecasts."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from nodecast import autograd as ag
from nodecast.autograd import Tensor
from nodecast.errors import NumericError

TRADING_DAYS = 252
VOL_WINDOWS = (5, 10, 20)


def compute_gate(vol, sbar, w: Tensor, b: Tensor) -> Tensor:
    """Per-row weight on the price branch: sigmoid(w . [vol_5, vol_10, vol_20, sbar] + b).

    ``vol`` is (B, 3), ``sbar`` is (B,); returns shape (B,).
    """
    z = np.concatenate([np.asarray(vol, dtype=np.float64), np.asarray(sbar, dtype=np.float64)[:, None]], axis=1)
    if not np.all(np.isfinite(z)):
        raise NumericError("fusion gate inputs must be finite")
    logits = Tensor(z) @ ag.reshape(w, (4, 1)) + b
    return ag.reshape(ag.sigmoid(logits), (z.shape[0],))


def fuse(y_node, y_sent, alpha) -> Tensor:
    """Convex combination ``alpha * y_node + (1 - alpha) * y_sent``."""
    alpha = ag.as_tensor(alpha)
    return alpha * y_node + (1.0 - alpha) * y_sent


def market_volatility(close: np.ndarray) -> np.ndarray:
    """(days, 3) cross-stock mean of annualised rolling return std over 5/10/20 days.

    Row t uses returns up to and including day t; rows before a window fills are NaN.
    """
    close = np.asarray(close, dtype=np.float64)
    ret = close[1:] / close[:-1] - 1.0
    out = np.full((close.shape[0], len(VOL_WINDOWS)), np.nan)
    for j, w in enumerate(VOL_WINDOWS):
        if len(ret) >= w:
            sd = sliding_window_view(ret, w, axis=0).std(axis=-1, ddof=1)   # (days - w, stocks)
            out[w:, j] = sd.mean(axis=1)
    return out * np.sqrt(TRADING_DAYS)
