"""Panel assembly, window batching, the composite objective and staged optimisation.

The network regresses a scale-free target: the h-day log return of each stock
divided by that stock's training-range std of h-day log returns. A prediction
of zero therefore reproduces the persistence forecast, and a price is recovered
as ``close_t * exp(scale * prediction)``.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from nodecast import autograd as ag
from nodecast.autograd import OptimizerState, Tensor, WarmupCosine, adam_step
from nodecast.errors import ConfigError, ShapeError, TrainingError
from nodecast.evaluation import PREDICTION_COLUMNS, moves_up
from nodecast.features import (
    WARMUP,
    DatasetSplit,
    FeatureMatrix,
    align_market,
    build_features,
    normalize_expanding,
    partition_by_dates,
    partition_dataset,
)
from nodecast.fusion import market_volatility
from nodecast.nodeformer import Batch, NodeFormer, layer_of, param_group
from nodecast.sentiment import align_sentiment
from nodecast.synthgen import MarketSeries, SentimentStream

log = logging.getLogger(__name__)

BCE_CLAMP = 1e-7
DEGENERATE_STD = 1e-12


# -- panel ---------------------------------------------------------------------

@dataclass
class PanelData:
    """Everything the model consumes, on one calendar of ``D`` days."""

    dates: np.ndarray
    tickers: list[str]
    sectors: list[str]
    x: np.ndarray            # (D, N, 17) normalized features
    close: np.ndarray        # (D, N) imputed raw closes
    sent: np.ndarray         # (D, N, 3)
    vol: np.ndarray          # (D, 3)
    split: DatasetSplit
    horizons: tuple[int, ...]
    scale: np.ndarray        # (N, H) training std of h-day log returns
    has_sentiment: bool = False
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None

    def __post_init__(self):
        D, N = self.close.shape
        if self.x.shape != (D, N, 17) or self.sent.shape != (D, N, 3) or self.vol.shape != (D, 3):
            raise ShapeError("panel arrays disagree on (days, stocks)")
        if self.split.n_days != D:
            raise ShapeError(f"split covers {self.split.n_days} days, panel has {D}")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_stocks(self) -> int:
        return len(self.tickers)

    def train_returns(self) -> np.ndarray:
        c = self.close[: self.split.train_end]
        return c[1:] / c[:-1] - 1.0


def target_scale(close: np.ndarray, train_end: int, horizons) -> np.ndarray:
    logc = np.log(close[:train_end])
    out = np.empty((close.shape[1], len(horizons)))
    for j, h in enumerate(horizons):
        if train_end <= h + 1:
            raise ConfigError(f"training range of {train_end} days is too short for horizon {h}")
        out[:, j] = np.std(logc[h:] - logc[:-h], axis=0, ddof=1)
    return np.maximum(out, 1e-8)


def prepare_panel(
    market: list[MarketSeries],
    sentiment: list[SentimentStream] | None = None,
    horizons=(1, 5, 20),
    fractions=(0.7, 0.15, 0.15),
    split_dates: tuple[str, str] | None = None,
) -> PanelData:
    """Impute, featurize, split and normalize a market into a :class:`PanelData`.

    Training-range gaps may be interpolated; from the first validation day on
    imputation only forward-fills. Split boundaries are placed on the
    post-warm-up calendar.
    """
    aligned = align_market(market)
    calendar = aligned[0].dates[WARMUP:]
    if split_dates is not None:
        split = partition_by_dates(calendar, *split_dates)
    else:
        split = partition_dataset(len(calendar), fractions)
    raw = build_features(aligned, "train", eval_from=str(calendar[split.train_end]))
    x, stats = normalize_expanding(raw.values, split)
    return assemble_panel(raw, x, split, aligned, sentiment, tuple(horizons), stats)


def assemble_panel(raw: FeatureMatrix, x, split, aligned, sentiment, horizons, stats=None) -> PanelData:
    full_close = np.column_stack([np.asarray(m.close) for m in aligned])
    # imputed closes carry into the volatility proxy
    full_close[WARMUP:] = raw.close
    if np.isnan(full_close[:WARMUP]).any():
        full_close = pd.DataFrame(full_close).ffill().to_numpy()
    vol = market_volatility(full_close)[WARMUP:]
    has_sent = bool(sentiment)
    if has_sent:
        sent_full, _ = align_sentiment(sentiment, aligned[0].dates, raw.tickers)
        sent = sent_full[WARMUP:]
    else:
        sent = np.zeros(raw.values.shape[:2] + (3,))
    return PanelData(
        dates=raw.dates, tickers=list(raw.tickers), sectors=list(raw.sectors), x=x, close=raw.close.copy(),
        sent=sent, vol=vol, split=split, horizons=horizons,
        scale=target_scale(raw.close, split.train_end, horizons), has_sentiment=has_sent,
        norm_mean=None if stats is None else stats["mean"], norm_std=None if stats is None else stats["std"],
    )


# -- windows ---------------------------------------------------------------------

def make_training_windows(n_days: int, split: DatasetSplit, region: str, T: int, horizons,
                          allow_prior_context: bool = False, require_all_targets: bool = True) -> np.ndarray:
    """Window end indices t for ``region``.

    The input span is [t - T + 1, t]. Without ``allow_prior_context`` the span
    must lie inside the region; with it, the span may reach back into earlier
    days (used for out-of-sample prediction, never for training). With
    ``require_all_targets`` every horizon's target must also lie in the region.
    """
    sl = split.region(region)
    start, stop = sl.start, sl.stop
    if T < 1:
        raise ConfigError("window length must be positive")
    first = T - 1 if allow_prior_context else start + T - 1
    first = max(first, start)
    reach = max(horizons) if require_all_targets else min(horizons)
    last = stop - 1 - reach
    if not allow_prior_context and T + reach > stop - start:
        raise ConfigError(f"window length {T} plus horizon {reach} exceeds the {stop - start}-day {region} range")
    if last < first:
        return np.zeros(0, dtype=np.int64)
    return np.arange(first, last + 1, dtype=np.int64)


def shuffled_batches(ends: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = ends[rng.permutation(len(ends))]
    return [order[k:k + batch_size] for k in range(0, len(order), batch_size)]


@dataclass
class Targets:
    z: np.ndarray           # (B, N, H) scaled log-return targets (NaN if unavailable)
    up: np.ndarray          # (B, N, H) 1 where the price rises strictly
    mask: np.ndarray        # (B, N, H) target inside the allowed range
    ret1: np.ndarray | None = None


def direction_indicator(future: np.ndarray, current: np.ndarray) -> np.ndarray:
    """1 where the price strictly rises; a flat move counts as down."""
    return moves_up(future, current).astype(np.float64)


def make_batch(data: PanelData, ends: np.ndarray, T: int, limit: int | None = None) -> tuple[Batch, Targets]:
    """Stack windows ending at ``ends``; targets beyond day ``limit`` (exclusive) are masked."""
    ends = np.asarray(ends, dtype=np.int64)
    limit = data.n_days if limit is None else limit
    idx = ends[:, None] - np.arange(T - 1, -1, -1)[None, :]                 # (B, T)
    if idx.min() < 0:
        raise ConfigError("window reaches before the first day")
    x = np.transpose(data.x[idx], (0, 2, 1, 3))                             # (B, N, T, 17)
    sent = np.transpose(data.sent[idx], (0, 2, 1, 3))
    B, N, H = len(ends), data.n_stocks, len(data.horizons)
    z = np.full((B, N, H), np.nan)
    up = np.zeros((B, N, H))
    mask = np.zeros((B, N, H), dtype=bool)
    c0 = data.close[ends]
    for j, h in enumerate(data.horizons):
        ok = ends + h < limit
        tgt = np.minimum(ends + h, data.n_days - 1)
        c1 = data.close[tgt]
        z[ok, :, j] = (np.log(c1[ok]) - np.log(c0[ok])) / data.scale[:, j]
        up[ok, :, j] = direction_indicator(c1[ok], c0[ok])
        mask[ok, :, j] = True
    return Batch(x, sent, data.vol[ends]), Targets(z, up, mask)


# -- loss ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    mse: float = 1.0
    direction: float = 0.5
    correlation: float = 0.2
    l2: float = 1e-4

    def __post_init__(self):
        if self.mse <= 0 or min(self.direction, self.correlation, self.l2) < 0:
            raise ConfigError("loss weights must be non-negative with a positive squared-error weight")


def composite_loss(y_hat: Tensor, p_up: Tensor, targets: Targets, params, weights: LossWeights,
                   scale: np.ndarray | None = None, corr_index: int = 0) -> tuple[Tensor, dict]:
    """Weighted sum of squared error, direction cross-entropy, (1 - cross-sectional
    correlation) and squared parameter norm. Returns the loss and its parts.

    The correlation term compares predicted and realised returns across stocks
    for each window at horizon ``corr_index``; windows where either vector is
    (near) constant are skipped and counted in ``parts['corr_skipped']``.
    """
    if y_hat.shape != targets.z.shape or p_up.shape != targets.z.shape:
        raise ShapeError(f"prediction shapes {y_hat.shape}/{p_up.shape} differ from targets {targets.z.shape}")
    m = targets.mask.astype(np.float64)
    count = m.sum()
    if count == 0:
        raise TrainingError("batch has no valid targets")
    z = np.where(targets.mask, targets.z, 0.0)
    mse = ag.tsum(ag.square(y_hat - z) * m) * (1.0 / count)
    p = ag.clip(p_up, BCE_CLAMP, 1.0 - BCE_CLAMP)
    bce_el = -(targets.up * ag.log(p) + (1.0 - targets.up) * ag.log(1.0 - p))
    bce = ag.tsum(bce_el * m) * (1.0 / count)
    parts = {"mse": float(mse.data), "bce": float(bce.data)}
    loss = weights.mse * mse + weights.direction * bce

    corr_term, skipped = _correlation_term(y_hat, z, targets.mask, scale, corr_index)
    parts["corr_skipped"] = skipped
    if corr_term is not None:
        parts["corr"] = float(corr_term.data)
        if weights.correlation:
            loss = loss + weights.correlation * corr_term
    else:
        parts["corr"] = float("nan")
    if weights.l2 and params:
        l2 = None
        for t in params:
            sq = ag.tsum(ag.square(t))
            l2 = sq if l2 is None else l2 + sq
        parts["l2"] = float(l2.data)
        loss = loss + weights.l2 * l2
    parts["total"] = float(loss.data)
    return loss, parts


def _correlation_term(y_hat: Tensor, z: np.ndarray, mask: np.ndarray, scale, j: int):
    N = y_hat.shape[1]
    if N < 2:
        return None, y_hat.shape[0]
    s = np.ones(N) if scale is None else scale[:, j]
    actual = z[:, :, j] * s
    pred_np = y_hat.data[:, :, j] * s
    ok = mask[:, :, j].all(axis=1) & (actual.std(axis=1) >= DEGENERATE_STD) & (pred_np.std(axis=1) >= DEGENERATE_STD)
    rows = np.flatnonzero(ok)
    skipped = int(len(ok) - len(rows))
    if len(rows) == 0:
        return None, skipped
    pred = y_hat[rows, :, j] * s
    rho = ag.pearson(pred, Tensor(actual[rows]), axis=-1)
    return 1.0 - ag.mean(rho), skipped


# -- staged optimisation ---------------------------------------------------------------

@dataclass(frozen=True)
class StageSpec:
    name: str
    epochs: int
    lr: float
    node_layers: str = "all"     # "none", "all" or "top:K"

    def trainable(self, name: str, n_layers: int) -> bool:
        if param_group(name) != "node":
            return True
        if self.node_layers == "all":
            return True
        if self.node_layers == "none":
            return False
        k = int(self.node_layers.split(":")[1])
        layer = layer_of(name)
        return layer is not None and layer >= n_layers - k


def staged_schedule(scale: float = 1.0, top_k: int = 3) -> tuple[StageSpec, ...]:
    """Frozen-trunk, partially unfrozen, then fully unfrozen; learning rates multiplied by ``scale``."""
    return (
        StageSpec("stage1", 10, 1e-4 * scale, "none"),
        StageSpec("stage2", 20, 5e-5 * scale, f"top:{top_k}"),
        StageSpec("stage3", 30, 1e-5 * scale, "all"),
    )


@dataclass
class TrainConfig:
    stages: tuple[StageSpec, ...] = field(default_factory=staged_schedule)
    batch_size: int = 32
    accum_steps: int = 4
    warmup_steps: int = 4000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    restore_best: bool = True
    validate: bool = True
    max_windows: int | None = None
    snapshot_path: str | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.accum_steps < 1:
            raise ConfigError("batch_size and accum_steps must be positive")
        if not self.stages or any(s.epochs < 0 for s in self.stages):
            raise ConfigError("need at least one stage with non-negative epochs")

    @property
    def total_epochs(self) -> int:
        return sum(s.epochs for s in self.stages)


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_val_mape: float
    initial_train_mse: float
    final_train_mse: float


def _corr_index(model: NodeFormer) -> int:
    return model.cfg.horizons.index(1) if 1 in model.cfg.horizons else 0


def mean_loss(model: NodeFormer, data: PanelData, ends: np.ndarray, weights: LossWeights,
              batch_size: int = 256, limit: int | None = None) -> dict:
    """Eval-mode loss parts averaged over windows (weighted by batch size)."""
    totals: dict[str, float] = {}
    n = 0
    with ag.no_grad():
        for k in range(0, len(ends), batch_size):
            chunk = ends[k:k + batch_size]
            batch, tg = make_batch(data, chunk, model.cfg.seq_len, limit)
            out = model(batch)
            _, parts = composite_loss(out.y_hat, out.p_up, tg, [], LossWeights(weights.mse, weights.direction,
                                      weights.correlation, 0.0), data.scale, _corr_index(model))
            for key, v in parts.items():
                if key != "corr_skipped" and not math.isnan(v):
                    totals[key] = totals.get(key, 0.0) + v * len(chunk)
            n += len(chunk)
    return {k: v / n for k, v in totals.items()}


def _snapshot(params) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def _restore(params, snap):
    for k, v in snap.items():
        params[k].data = v.copy()


def run_training_stages(model: NodeFormer, data: PanelData, cfg: TrainConfig, on_epoch=None) -> TrainResult:
    """Optimise ``model`` in place through the configured stages."""
    T = model.cfg.seq_len
    train_ends = make_training_windows(data.n_days, data.split, "train", T, data.horizons)
    if cfg.max_windows is not None and len(train_ends) > cfg.max_windows:
        train_ends = train_ends[-cfg.max_windows:]
    if len(train_ends) == 0:
        raise ConfigError("no complete training windows; shorten seq_len or the horizons")
    limit = data.split.train_end
    params = model.params
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))

    initial = mean_loss(model, data, train_ends, cfg.loss, limit=limit)
    history = [{"epoch": 0, "stage": "init", **{f"train_{k}": v for k, v in initial.items()}}]
    best = (math.inf, 0, None)
    if cfg.validate:
        v = validation_scores(model, data)
        history[0].update(v)
        best = (v["val_mape"], 0, _snapshot(params))

    epoch = 0
    for stage in cfg.stages:
        names = [k for k in params if stage.trainable(k, model.cfg.n_layers)]
        frozen = {k: params[k].data.copy() for k in params if k not in names}
        n_batches = math.ceil(len(train_ends) / cfg.batch_size)
        steps = max(1, stage.epochs * math.ceil(n_batches / cfg.accum_steps))
        sched = WarmupCosine(stage.lr, min(cfg.warmup_steps, steps // 5), steps)
        state = OptimizerState(sched, cfg.beta1, cfg.beta2, cfg.eps)
        for _ in range(stage.epochs):
            epoch += 1
            sums: dict[str, float] = {}
            batches = shuffled_batches(train_ends, cfg.batch_size, rng)
            for b_idx, ends in enumerate(batches):
                batch, tg = make_batch(data, ends, T, limit)
                out = model(batch, training=True, rng=drop_rng)
                loss, parts = composite_loss(out.y_hat, out.p_up, tg, [params[k] for k in names],
                                             cfg.loss, data.scale, _corr_index(model))
                if not np.isfinite(loss.data):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch} ({stage.name}), batch {b_idx}: {parts}",
                        snapshot=_dump_snapshot(params, cfg.snapshot_path),
                    )
                loss.backward()
                for key in ("total", "mse", "bce", "corr"):
                    if not math.isnan(parts[key]):
                        sums[key] = sums.get(key, 0.0) + parts[key]
                if (b_idx + 1) % cfg.accum_steps == 0 or b_idx == len(batches) - 1:
                    grads = {k: params[k].grad for k in names if params[k].grad is not None}
                    try:
                        adam_step(state, params, grads)
                    except TrainingError as exc:
                        raise TrainingError(str(exc), snapshot=_dump_snapshot(params, cfg.snapshot_path)) from None
                    for t in params.values():
                        t.grad = None
            row = {"epoch": epoch, "stage": stage.name, "lr": sched(state.step)}
            row.update({f"batch_{k}": v / len(batches) for k, v in sums.items()})
            if cfg.validate:
                v = validation_scores(model, data)
                row.update(v)
                if v["val_mape"] < best[0]:
                    best = (v["val_mape"], epoch, _snapshot(params))
            history.append(row)
            log.info("epoch %d %s %s", epoch, stage.name, {k: round(v, 6) for k, v in row.items() if isinstance(v, float)})
            if on_epoch is not None:
                on_epoch(row)
        for k, before in frozen.items():
            if not np.array_equal(before, params[k].data):
                raise TrainingError(f"frozen parameter {k} changed during {stage.name}")

    if cfg.validate and cfg.restore_best and best[2] is not None:
        _restore(params, best[2])
    final = mean_loss(model, data, train_ends, cfg.loss, limit=limit)
    return TrainResult(history, best[1], best[0], initial["mse"], final["mse"])


def _dump_snapshot(params, path):
    if not path:
        return None
    from nodecast.checkpoint import save_arrays
    save_arrays(path, _snapshot(params), {"kind": "diagnostic-snapshot"})
    return path


# -- prediction -------------------------------------------------------------------------

def predict(model: NodeFormer, data: PanelData, region: str = "test", label: str = "nodeformer",
            batch_size: int = 256) -> pd.DataFrame:
    """Out-of-sample price forecasts for every origin day in ``region``.

    Inputs may reach back before the region; a row is emitted for each horizon
    whose target day still lies inside the region.
    """
    T = model.cfg.seq_len
    sl = data.split.region(region)
    ends = make_training_windows(data.n_days, data.split, region, T, data.horizons,
                                 allow_prior_context=True, require_all_targets=False)
    frames = []
    with ag.no_grad():
        for k in range(0, len(ends), batch_size):
            chunk = ends[k:k + batch_size]
            batch, tg = make_batch(data, chunk, T, sl.stop)
            out = model(batch)
            frames.append(_rows(data, chunk, out.y_hat.data, out.p_up.data, tg.mask, label))
    if not frames:
        return pd.DataFrame(columns=PREDICTION_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def _rows(data: PanelData, ends, y_hat, p_up, mask, label) -> pd.DataFrame:
    B, N, H = y_hat.shape
    e = np.repeat(ends, N * H).reshape(B, N, H)
    i = np.broadcast_to(np.arange(N)[None, :, None], (B, N, H))
    j = np.broadcast_to(np.arange(H)[None, None, :], (B, N, H))
    hz = np.asarray(data.horizons)[j]
    prior = data.close[e, i]
    pred = prior * np.exp(data.scale[i, j] * y_hat)
    true = data.close[np.minimum(e + hz, data.n_days - 1), i]
    keep = mask.ravel()
    frame = pd.DataFrame({
        "model": label,
        "ticker": np.asarray(data.tickers)[i.ravel()[keep]],
        "date": data.dates[e.ravel()[keep]].astype(str),
        "horizon": hz.ravel()[keep],
        "y_pred": pred.ravel()[keep],
        "y_true": true.ravel()[keep],
        "y_prior": prior.ravel()[keep],
        "p_up": p_up.ravel()[keep],
    })
    return frame.sort_values(["horizon", "date", "ticker"], kind="stable").reset_index(drop=True)


def attention_frame(model: NodeFormer, data: PanelData, date: str) -> pd.DataFrame:
    """Per-layer attention weights for the window ending on ``date``, one row per weight.

    Temporal rows are grouped by stock with query/key as window positions
    (0 = oldest); cross-sectional rows are grouped by window position with
    query/key as tickers.
    """
    T = model.cfg.seq_len
    hits = np.flatnonzero(data.dates.astype(str) == str(date))
    if len(hits) == 0:
        raise ConfigError(f"date {date} is not on the panel calendar")
    end = int(hits[0])
    if end < T - 1:
        raise ConfigError(f"window ending {date} would reach before the first day")
    batch, _ = make_batch(data, np.array([end]), T)
    with ag.no_grad():
        record = model(batch, record_attention=True).attention
    tick = np.asarray(data.tickers)
    parts = []
    for tag in sorted(record):
        w = record[tag][0]
        layer, stage = tag.split(".")
        G, H, Q, K = w.shape
        g, h, q, k = (a.ravel() for a in np.indices(w.shape))
        temporal = stage == "temporal"
        parts.append(pd.DataFrame({
            "layer": int(layer.removeprefix("layer")), "stage": stage, "head": h,
            "group": tick[g] if temporal else g.astype(str),
            "query": q.astype(str) if temporal else tick[q],
            "key": k.astype(str) if temporal else tick[k],
            "weight": w.ravel(),
        }))
    return pd.concat(parts, ignore_index=True)


def validation_scores(model: NodeFormer, data: PanelData) -> dict:
    """Validation MAPE (percent) and directional accuracy at the shortest horizon."""
    frame = predict(model, data, "validation")
    h = min(data.horizons)
    f = frame[frame["horizon"] == h]
    if f.empty:
        return {"val_mape": float("nan"), "val_da": float("nan")}
    mape = float(np.mean(np.abs((f["y_true"] - f["y_pred"]) / f["y_true"])) * 100.0)
    da = float(np.mean((f["y_pred"] > f["y_prior"]) == (f["y_true"] > f["y_prior"])))
    return {"val_mape": mape, "val_da": da}


def full_gradient_check(model: NodeFormer, data: PanelData, coords_per_tensor: int = 4, step: float = 1e-6,
                        margin: float = 1e-4, batch_windows: int = 2, floor: float = 1e-6) -> dict:
    """Finite-difference check of the composite loss against backprop, every parameter tensor.

    The evaluation point is the first group of training windows whose ReLU
    inputs all lie farther than ``margin`` from zero, so no central difference
    straddles a kink. Returns per-tensor worst relative errors plus the overall
    worst under ``"max"``.
    """
    if model.cfg.dropout:
        model = model.with_config(dropout=0.0)
    T = model.cfg.seq_len
    ends = make_training_windows(data.n_days, data.split, "train", T, data.horizons)
    chosen = None
    for k in range(0, len(ends) - batch_windows + 1, 7):
        batch, tg = make_batch(data, ends[k:k + batch_windows], T, data.split.train_end)
        with ag.no_grad(), ag.track_kinks() as seen:
            model(batch)
        if not seen or min(seen) > margin:
            chosen = (batch, tg)
            break
    if chosen is None:
        raise TrainingError(f"no training windows keep every ReLU input beyond {margin} from zero")
    batch, tg = chosen
    names = sorted(model.params)
    tensors = [model.params[n] for n in names]

    def objective():
        out = model(batch)
        return composite_loss(out.y_hat, out.p_up, tg, tensors, LossWeights(), data.scale, _corr_index(model))[0]

    errors = {n: ag.grad_check(objective, [model.params[n]], h=step, max_coords=coords_per_tensor, seed=i, floor=floor)
              for i, n in enumerate(names)}
    errors["max"] = max(errors.values())
    return errors


def clone_model(model: NodeFormer) -> NodeFormer:
    params = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in model.params.items()}
    return NodeFormer(copy.copy(model.cfg), params)
