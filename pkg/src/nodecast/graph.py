"""Stock-relationship graph: sector/correlation initialisation and learned refinement.

Edge weights live in [0, 1], are symmetric and keep a unit diagonal so every
stock always attends to itself. The initial matrix blends a same-sector
indicator with clamped return correlation; deeper layers re-derive edges from
node representations through a shared logistic scorer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nodecast import autograd as ag
from nodecast.autograd import Tensor
from nodecast.errors import ConfigError, GraphError, NumericError

MIN_OVERLAP = 30
_LOGIT_EPS = 1e-3


@dataclass
class MarketGraph:
    tickers: list[str]
    sectors: list[str]
    edge_weights: np.ndarray
    alpha: float

    def __post_init__(self):
        e = self.edge_weights
        n = len(self.tickers)
        if e.shape != (n, n):
            raise GraphError(f"edge matrix shape {e.shape} does not match {n} nodes")
        if not np.allclose(e, e.T) or np.any(e < 0) or np.any(e > 1) or not np.all(np.diag(e) == 1.0):
            raise GraphError("edge matrix must be symmetric with entries in [0, 1] and unit diagonal")

    @property
    def n_nodes(self) -> int:
        return len(self.tickers)

    def sector_means(self, edges: np.ndarray | None = None) -> tuple[float, float]:
        """Mean off-diagonal edge weight within and across sectors."""
        return sector_block_means(self.edge_weights if edges is None else edges, self.sectors)


def sector_block_means(edges: np.ndarray, sectors: list[str]) -> tuple[float, float]:
    lab = np.asarray(sectors)
    same = lab[:, None] == lab[None, :]
    off = ~np.eye(len(lab), dtype=bool)
    within = edges[same & off]
    across = edges[~same]
    return (float(within.mean()) if within.size else float("nan"),
            float(across.mean()) if across.size else float("nan"))


def _pair_corr(x: np.ndarray, y: np.ndarray) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    den = np.sqrt((xc @ xc) * (yc @ yc))
    return float(xc @ yc / den) if den > 0 else 0.0


def init_edges(
    returns: np.ndarray,
    tickers: list[str],
    sectors: list[str],
    alpha: float = 0.5,
    min_overlap: int = MIN_OVERLAP,
) -> MarketGraph:
    """Initial edges ``alpha * same_sector + (1 - alpha) * max(0, corr)``.

    ``returns`` is (days, stocks) of training-period daily returns; NaN marks a
    missing day and correlations use the days both stocks observed.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    returns = np.asarray(returns, dtype=np.float64)
    n = returns.shape[1]
    if len(tickers) != n or len(sectors) != n:
        raise GraphError(f"{n} return columns but {len(tickers)} tickers and {len(sectors)} sectors")
    seen = np.isfinite(returns)
    edges = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            both = seen[:, i] & seen[:, j]
            if both.sum() < min_overlap:
                raise GraphError(
                    f"stocks {tickers[i]} and {tickers[j]} share only {int(both.sum())} training days "
                    f"(need {min_overlap})"
                )
            rho = _pair_corr(returns[both, i], returns[both, j])
            e = alpha * float(sectors[i] == sectors[j]) + (1.0 - alpha) * max(0.0, rho)
            edges[i, j] = edges[j, i] = min(max(e, 0.0), 1.0)
    return MarketGraph(list(tickers), list(sectors), edges, float(alpha))


def _pin_diagonal(sym: Tensor, n: int) -> Tensor:
    eye = np.eye(n)
    return sym * (1.0 - eye) + eye


def refine_edges(h: Tensor, w_e: Tensor, b_e: Tensor) -> Tensor:
    """Edges from node states ``h`` of shape (..., N, d).

    ``raw_ij = sigmoid(w_e . [h_i, h_j] + b_e)``, averaged with its transpose,
    diagonal set to 1. Differentiable in ``h``, ``w_e`` and ``b_e``.
    """
    h = ag.as_tensor(h)
    if not np.all(np.isfinite(h.data)):
        raise NumericError("refine_edges: node representations contain non-finite values")
    d = h.shape[-1]
    if w_e.shape != (2 * d,):
        raise GraphError(f"w_e must have shape ({2 * d},), got {w_e.shape}")
    left = h @ ag.reshape(w_e[:d], (d, 1))                     # (..., N, 1)
    right = ag.swapaxes(h @ ag.reshape(w_e[d:], (d, 1)), -1, -2)  # (..., 1, N)
    raw = ag.sigmoid(left + right + b_e)
    sym = (raw + ag.swapaxes(raw, -1, -2)) * 0.5
    return _pin_diagonal(sym, h.shape[-2])


def edge_logits(edges: np.ndarray) -> np.ndarray:
    """Inverse of :func:`edges_from_logits` off the diagonal (clipped away from 0 and 1)."""
    e = np.clip(edges, _LOGIT_EPS, 1.0 - _LOGIT_EPS)
    out = np.log(e) - np.log1p(-e)
    np.fill_diagonal(out, 0.0)
    return out


def edges_from_logits(logits: Tensor) -> Tensor:
    """Learnable layer-0 edges: symmetric sigmoid of a free matrix with unit diagonal."""
    n = logits.shape[-1]
    sym = (ag.sigmoid(logits) + ag.sigmoid(ag.swapaxes(logits, -1, -2))) * 0.5
    return _pin_diagonal(sym, n)


def top_edges(edges: np.ndarray, tickers: list[str], k: int = 5) -> tuple[list, list]:
    """Strongest and weakest off-diagonal pairs as ``(ticker_a, ticker_b, weight)``."""
    iu = np.triu_indices(len(tickers), 1)
    w = edges[iu]
    order = np.lexsort((iu[1], iu[0], -w))
    pairs = [(tickers[iu[0][m]], tickers[iu[1][m]], float(w[m])) for m in order]
    return pairs[:k], pairs[::-1][:k]
