"""Flat run configuration: one JSON object of tunables per run.

A file may name a ``preset`` (tiny, desk, full); its own keys then replace
the preset values. Unknown keys are rejected. The resolved configuration is
hashed from its canonical JSON, and that hash is stamped on every artifact.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields

from nodecast.errors import ConfigError
from nodecast.nodeformer import ModelConfig
from nodecast.synthgen import SynthConfig
from nodecast.training import LossWeights, StageSpec, TrainConfig

ENV_VAR = "NODECAST_CONFIG"


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    # synthetic market
    n_stocks: int = 6
    n_days: int = 800
    n_sectors: int = 2
    sector_factor_strength: float = 0.8
    sentiment_lead_strength: float = 0.5
    return_ar: float = 0.1
    regime_switch_prob: float = 0.02
    sentiment_noise: float = 0.3
    sentiment_start_day: int = 0
    # panel
    horizons: tuple = (1, 5, 20)
    split_fractions: tuple = (0.7, 0.15, 0.15)
    edge_alpha: float = 0.5
    # model
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    d_stock: int = 8
    seq_len: int = 64
    dropout: float = 0.1
    sentiment_hidden: int = 16
    # loss
    loss_mse: float = 1.0
    loss_direction: float = 0.5
    loss_correlation: float = 0.2
    loss_l2: float = 1e-4
    # schedule
    stage_epochs: tuple = (2, 3, 5)
    stage_lrs: tuple = (1e-3, 5e-4, 1e-4)
    top_k_layers: int = 3
    batch_size: int = 32
    accum_steps: int = 4
    warmup_steps: int = 4000
    max_windows: int = 0
    # baselines, evaluation, backtest
    arima_p_max: int = 3
    arima_d_max: int = 2
    arima_q_max: int = 3
    n_boot: int = 1000
    long_short_k: int = 2
    cost_bps: float = 10.0
    gradcheck_coords: int = 3
    gradcheck_tolerance: float = 1e-4

    def __post_init__(self):
        for name in ("horizons", "split_fractions", "stage_epochs", "stage_lrs"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if len(self.stage_epochs) != 3 or len(self.stage_lrs) != 3:
            raise ConfigError("stage_epochs and stage_lrs need one entry per stage (3)")
        if self.long_short_k < 1 or 2 * self.long_short_k > self.n_stocks:
            raise ConfigError(f"long_short_k={self.long_short_k} needs at least {2 * self.long_short_k} stocks")
        self.synth()
        self.model()
        self.train()

    # -- module configs --------------------------------------------------------------
    def synth(self) -> SynthConfig:
        return SynthConfig(
            n_stocks=self.n_stocks, n_days=self.n_days, n_sectors=self.n_sectors,
            sector_factor_strength=self.sector_factor_strength,
            sentiment_lead_strength=self.sentiment_lead_strength, seed=self.seed,
            return_ar=self.return_ar, regime_switch_prob=self.regime_switch_prob,
            sentiment_noise=self.sentiment_noise, sentiment_start_day=self.sentiment_start_day,
        )

    def model(self) -> ModelConfig:
        return ModelConfig(
            n_stocks=self.n_stocks, n_layers=self.n_layers, n_heads=self.n_heads, d_model=self.d_model,
            d_ff=self.d_ff, d_stock=self.d_stock, seq_len=self.seq_len, dropout=self.dropout,
            horizons=self.horizons, sentiment_hidden=self.sentiment_hidden,
        )

    def train(self) -> TrainConfig:
        top = min(self.top_k_layers, self.n_layers)
        modes = ("none", f"top:{top}", "all")
        stages = tuple(StageSpec(f"stage{k + 1}", int(e), float(lr), m)
                       for k, (e, lr, m) in enumerate(zip(self.stage_epochs, self.stage_lrs, modes)))
        return TrainConfig(
            stages=stages, batch_size=self.batch_size, accum_steps=self.accum_steps,
            warmup_steps=self.warmup_steps, seed=self.seed,
            loss=LossWeights(self.loss_mse, self.loss_direction, self.loss_correlation, self.loss_l2),
            max_windows=self.max_windows or None,
        )

    def arima_grid(self) -> tuple[range, range, range]:
        return range(self.arima_p_max + 1), range(self.arima_q_max + 1), range(self.arima_d_max + 1)

    # -- serialisation ----------------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


PRESETS: dict[str, dict] = {
    "tiny": dict(n_stocks=4, n_days=300, seq_len=16, n_layers=1, n_heads=2, d_model=16, d_ff=32,
                 d_stock=4, sentiment_hidden=8, horizons=(1, 5), stage_epochs=(1, 1, 1), max_windows=64,
                 long_short_k=1, arima_p_max=1, arima_d_max=1, arima_q_max=1, n_boot=1000),
    "desk": {},
    # hyperparameters of the full-scale architecture
    "full": dict(n_stocks=20, n_days=11000, n_sectors=5, n_layers=6, n_heads=8, d_model=512, d_ff=2048,
                  seq_len=252, dropout=0.1, stage_epochs=(10, 20, 30), stage_lrs=(1e-4, 5e-5, 1e-5),
                  batch_size=32, accum_steps=4, warmup_steps=4000, long_short_k=5),
}

_FIELDS = {f.name for f in fields(RunConfig)}


def resolve(values: dict | None = None) -> RunConfig:
    """Preset defaults overlaid with ``values``; unknown keys raise."""
    values = dict(values or {})
    unknown = sorted(set(values) - _FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    preset = values.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    merged = {**PRESETS[preset], **values, "preset": preset}
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None) -> RunConfig:
    """Read a flat JSON config; falls back to $NODECAST_CONFIG, then the desk preset."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return resolve()
    try:
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(values, dict) or any(isinstance(v, dict) for v in values.values()):
        raise ConfigError(f"config {path} must be one flat JSON object")
    return resolve(values)
