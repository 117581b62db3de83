"""Reference forecasters: persistence and ARIMA by conditional least squares.

ARIMA(p, d, q) on the d-times differenced series ``w``::

    w[t] = c + sum_i phi[i] * w[t-i] + e[t] + sum_j theta[j] * e[t-j]

Residuals before the sample start are taken as zero, so the residual
recursion is a plain IIR filter. A constant is estimated only when d = 0;
with d >= 1 the model has no drift, which makes ARIMA(0,1,0) the persistence
forecast exactly.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.signal import lfilter

from nodecast.errors import BaselineError, ConfigError
from nodecast.evaluation import PREDICTION_COLUMNS

log = logging.getLogger(__name__)

DESK_GRID = {"p": range(4), "q": range(4), "d": range(3)}
WIDE_GRID = {"p": range(6), "q": range(6), "d": range(3)}
COMMON_ROOT_TOL = 0.1
SIMPLEX_STEP = 0.05
MAX_EVALS_PER_PARAM = 1000


def naive_forecast(series, h: int = 1) -> float:
    """Tomorrow (and every later day) equals today."""
    y = np.asarray(series, dtype=float)
    if y.size == 0:
        raise BaselineError("naive forecast of an empty series")
    if h <= 0:
        raise ConfigError(f"horizon must be positive, got {h}")
    return float(y[-1])


@dataclass
class ArimaModel:
    p: int
    d: int
    q: int
    phi: np.ndarray
    theta: np.ndarray
    intercept: float = 0.0
    sigma2: float = float("nan")
    aic: float = float("nan")
    n_obs: int = 0
    converged: bool = True
    rejected: list = field(default_factory=list)

    def __post_init__(self):
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))[: self.p]
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))[: self.q]
        if self.p < 0 or self.q < 0 or self.d not in (0, 1, 2):
            raise ConfigError(f"invalid ARIMA order ({self.p}, {self.d}, {self.q})")
        if len(self.phi) != self.p or len(self.theta) != self.q:
            raise ConfigError("coefficient vectors do not match the order")

    @property
    def order(self) -> tuple[int, int, int]:
        return (self.p, self.d, self.q)

    @property
    def stationary(self) -> bool:
        return _roots_outside(np.r_[1.0, -self.phi])

    @property
    def invertible(self) -> bool:
        return _roots_outside(np.r_[1.0, self.theta])

    @property
    def redundant(self) -> bool:
        """AR and MA polynomials share a (near-)common root, so the order is not identified."""
        if not self.p or not self.q:
            return False
        ar = np.roots(np.r_[1.0, -self.phi][::-1])
        ma = np.roots(np.r_[1.0, self.theta][::-1])
        gap = np.abs(ar[:, None] - ma[None, :])
        return bool(gap.min() < COMMON_ROOT_TOL * max(1.0, np.abs(ar).min()))

    def residuals(self, series) -> np.ndarray:
        w = difference(np.asarray(series, dtype=float), self.d)
        return _residuals(w, self.intercept, self.phi, self.theta, start=self.p)


def _roots_outside(poly_low_to_high: np.ndarray) -> bool:
    """True when every root of 1 + a1 z + ... lies strictly outside the unit circle."""
    coeffs = np.trim_zeros(poly_low_to_high, "b")
    if len(coeffs) <= 1:
        return True
    roots = np.roots(coeffs[::-1])
    return bool(np.all(np.abs(roots) > 1.0 + 1e-8))


def difference(y: np.ndarray, d: int) -> np.ndarray:
    for _ in range(d):
        y = np.diff(y)
    return y


def _residuals(w, c, phi, theta, start: int) -> np.ndarray:
    """One-step residuals for t >= start, pre-sample residuals zero."""
    u = w[start:] - c
    for i in range(len(phi)):
        u = u - phi[i] * w[start - i - 1: len(w) - i - 1]
    if len(theta):
        u = lfilter([1.0], np.r_[1.0, theta], u)
    return u


def _hannan_rissanen(w: np.ndarray, p: int, q: int, start: int, with_const: bool) -> np.ndarray:
    """Starting values: residuals from a long autoregression, then least squares on
    lagged values and lagged residuals."""
    n = len(w)
    e = np.zeros(n)
    if q:
        m = min(max(p + q + 5, int(round(math.log(n) ** 2))), n // 4)
        X = np.column_stack([w[m - i - 1: n - i - 1] for i in range(m)] + [np.ones(n - m)])
        beta, *_ = np.linalg.lstsq(X, w[m:], rcond=None)
        e[m:] = w[m:] - X @ beta
    s0 = max(start, q)
    cols = [w[s0 - i - 1: n - i - 1] for i in range(p)] + [e[s0 - j - 1: n - j - 1] for j in range(q)]
    if with_const:
        cols.append(np.ones(n - s0))
    if not cols:
        return np.zeros(0)
    beta, *_ = np.linalg.lstsq(np.column_stack(cols), w[s0:], rcond=None)
    x0 = np.r_[beta[-1:], beta[:-1]] if with_const else beta
    # keep the start admissible so the simplex does not begin in an explosive region
    if p and not _roots_outside(np.r_[1.0, -x0[int(with_const):int(with_const) + p]]):
        x0[int(with_const):int(with_const) + p] = 0.0
    if q and not _roots_outside(np.r_[1.0, x0[int(with_const) + p:]]):
        x0[int(with_const) + p:] = 0.0
    return x0


def _css_fit(w: np.ndarray, p: int, q: int, start: int, with_const: bool):
    """Minimise the conditional sum of squares with Nelder-Mead."""
    n = len(w) - start
    k = p + q + int(with_const)

    def unpack(x):
        c = x[0] if with_const else 0.0
        off = int(with_const)
        return c, x[off:off + p], x[off + p:]

    if k == 0:
        sse = float(np.sum(w[start:] ** 2))
        return 0.0, np.zeros(0), np.zeros(0), sse, True

    x0 = _hannan_rissanen(w, p, q, start, with_const)

    def sse(x):
        c, phi, theta = unpack(x)
        e = _residuals(w, c, phi, theta, start)
        with np.errstate(over="ignore", invalid="ignore"):
            v = float(e @ e) / n
        return v if np.isfinite(v) else 1e300

    simplex = np.vstack([x0, x0 + SIMPLEX_STEP * np.eye(k)])
    res = minimize(sse, x0, method="Nelder-Mead",
                   options={"xatol": 1e-7, "fatol": 1e-13, "maxiter": MAX_EVALS_PER_PARAM * k,
                            "maxfev": MAX_EVALS_PER_PARAM * k, "initial_simplex": simplex})
    c, phi, theta = unpack(res.x)
    e = _residuals(w, c, phi, theta, start)
    return float(c), np.array(phi), np.array(theta), float(e @ e), bool(res.success)


def fit_order(series, p: int, d: int, q: int, start: int | None = None) -> ArimaModel:
    """Fit one order. ``start`` conditions on the first ``start`` differenced points (default p)."""
    y = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(y)):
        raise BaselineError("series contains non-finite values")
    w = difference(y, d)
    start = p if start is None else start
    if start < p:
        raise ConfigError("conditioning start must be at least p")
    n = len(w) - start
    if n < 10 * (p + q + 1):
        raise BaselineError(f"{n} usable points are too few for ARIMA({p},{d},{q})")
    c, phi, theta, sse, ok = _css_fit(w, p, q, start, with_const=(d == 0))
    if sse <= 0:
        raise BaselineError(f"ARIMA({p},{d},{q}) fit has zero residual variance")
    aic = n * math.log(sse / n) + 2 * (p + q + 1)
    return ArimaModel(p, d, q, phi, theta, c, sse / n, aic, n, ok)


def fit_arima(series, p_grid=DESK_GRID["p"], q_grid=DESK_GRID["q"], d_grid=DESK_GRID["d"]) -> ArimaModel:
    """AIC-minimal admissible model over the grid.

    Candidates of equal ``d`` share one conditioning start (the largest p) so
    their sums of squares cover the same observations. Fits that fail to
    converge, come out non-stationary or non-invertible, or carry an AR factor
    that nearly cancels an MA factor are rejected and listed on the returned
    model.
    """
    y = np.asarray(series, dtype=float)
    start = max(p_grid)
    best, rejected = None, []
    for d, p, q in itertools.product(d_grid, p_grid, q_grid):
        try:
            m = fit_order(y, p, d, q, start=start)
        except BaselineError as exc:
            rejected.append(((p, d, q), str(exc)))
            continue
        reason = None
        if not m.converged:
            reason = "did not converge"
        elif not m.stationary:
            reason = "non-stationary AR part"
        elif not m.invertible:
            reason = "non-invertible MA part"
        elif m.redundant:
            reason = "near-common AR/MA factor"
        if reason:
            rejected.append(((p, d, q), reason))
            continue
        if best is None or m.aic < best.aic:
            best = m
    if best is None:
        raise BaselineError(f"no admissible ARIMA candidate: {rejected[:3]}")
    best.rejected = rejected
    return best


def forecast_arima(model: ArimaModel, series, h: int, allow_inadmissible: bool = False) -> np.ndarray:
    """Forecasts for steps 1..h after the end of ``series``, on the price level."""
    if h <= 0:
        raise ConfigError(f"horizon must be positive, got {h}")
    if not allow_inadmissible and not (model.stationary and model.invertible):
        raise BaselineError(f"ARIMA{model.order} is non-stationary or non-invertible; refusing to forecast")
    y = np.asarray(series, dtype=float)
    levels = [y]
    for _ in range(model.d):
        levels.append(np.diff(levels[-1]))
    w = levels[-1]
    if len(w) < model.p:
        raise BaselineError("series too short for the AR order")
    e = _residuals(w, model.intercept, model.phi, model.theta, start=model.p) if len(w) > model.p else np.zeros(0)
    w_hist = list(w[-model.p:]) if model.p else []
    e_hist = list(e[-model.q:]) if model.q else []
    e_hist = [0.0] * (model.q - len(e_hist)) + e_hist
    out_w = []
    for k in range(h):
        val = model.intercept
        for i in range(model.p):
            val += model.phi[i] * w_hist[-1 - i]
        for j in range(model.q):
            val += model.theta[j] * e_hist[-1 - j]
        out_w.append(val)
        if model.p:
            w_hist.append(val)
        if model.q:
            e_hist.append(0.0)
    path = np.asarray(out_w)
    for level in reversed(levels[:-1]):
        path = level[-1] + np.cumsum(path)
    return path


# -- batch prediction ----------------------------------------------------------------

def baseline_predictions(dates, tickers, close: np.ndarray, train_end: int, region: slice, horizons,
                         kind: str = "arima", grid=DESK_GRID) -> tuple[pd.DataFrame, dict]:
    """Forecast rows for each origin in ``region`` whose target is still inside it.

    ARIMA is fitted once per stock on ``close[:train_end]`` and then run
    forward with fixed coefficients. Returns the rows and the fitted models.
    """
    dates = np.asarray(dates)
    rows, models = [], {}
    H = max(horizons)
    for i, tk in enumerate(tickers):
        if kind == "arima":
            models[tk] = fit_arima(close[:train_end, i], grid["p"], grid["q"], grid["d"])
        elif kind != "naive":
            raise ConfigError(f"unknown baseline {kind!r}")
        for t in range(region.start, region.stop - min(horizons)):
            history = close[: t + 1, i]
            if kind == "naive":
                path = np.full(H, history[-1])
            else:
                path = forecast_arima(models[tk], history, H)
            for h in horizons:
                if t + h < region.stop:
                    rows.append((kind, tk, str(dates[t]), h, float(path[h - 1]), float(close[t + h, i]),
                                 float(history[-1]), float("nan")))
    frame = pd.DataFrame(rows, columns=PREDICTION_COLUMNS)
    return frame.sort_values(["horizon", "date", "ticker"], kind="stable").reset_index(drop=True), models
