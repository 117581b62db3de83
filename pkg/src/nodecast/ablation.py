"""Component ablations: retrain the model with one part switched off at a time.

Every variant starts from the same seeded initialisation (parameters are
keyed by name, so shared tensors begin identical) and follows the same
training schedule. A variant that fails is recorded and the suite carries on.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from nodecast.errors import NodecastError
from nodecast.evaluation import mape
from nodecast.graph import init_edges
from nodecast.nodeformer import ModelConfig, NodeFormer
from nodecast.training import PanelData, TrainConfig, predict, run_training_stages

log = logging.getLogger(__name__)

FULL = "Full Model"

ABLATIONS: dict[str, dict] = {
    FULL: {},
    "Without Sentiment": {"use_sentiment": False},
    "Without Graph Structure": {"use_graph_bias": False, "cross_sectional": False},
    "Without Temporal Encoding": {"use_temporal_encoding": False},
    "Without Feature Gating": {"use_feature_gate": False},
    "Price Features Only": {"feature_set": "price", "use_sentiment": False},
}

ABLATION_COLUMNS = ["configuration", "status", "mape", "delta_pct", "best_epoch", "message"]


@dataclass
class AblationRun:
    table: pd.DataFrame
    predictions: dict[str, pd.DataFrame]
    models: dict[str, NodeFormer]


def build_model(data: PanelData, cfg: ModelConfig, seed: int, edge_alpha: float = 0.5) -> NodeFormer:
    graph = init_edges(data.train_returns(), data.tickers, data.sectors, alpha=edge_alpha)
    return NodeFormer.create(cfg, graph.edge_weights, seed=seed)


def train_variant(data: PanelData, base: ModelConfig, changes: dict, train_cfg: TrainConfig,
                  seed: int, edge_alpha: float = 0.5):
    model = build_model(data, replace(base, **changes), seed, edge_alpha)
    result = run_training_stages(model, data, train_cfg)
    return model, result


def run_ablation(data: PanelData, base: ModelConfig, train_cfg: TrainConfig, seed: int = 0,
                 edge_alpha: float = 0.5, names=None, region: str = "test") -> AblationRun:
    """Train every configuration and score shortest-horizon MAPE on ``region``."""
    names = list(ABLATIONS) if names is None else list(names)
    h = min(data.horizons)
    rows, preds, models = [], {}, {}
    for name in names:
        try:
            model, result = train_variant(data, base, ABLATIONS[name], train_cfg, seed, edge_alpha)
            frame = predict(model, data, region, label=name)
            sub = frame[frame["horizon"] == h]
            score = mape(sub["y_true"].to_numpy(), sub["y_pred"].to_numpy())
            rows.append({"configuration": name, "status": "ok", "mape": score,
                         "best_epoch": result.best_epoch, "message": ""})
            preds[name], models[name] = frame, model
        except (NodecastError, FloatingPointError) as exc:
            log.warning("ablation %s failed: %s", name, exc)
            rows.append({"configuration": name, "status": "failed", "mape": np.nan,
                         "best_epoch": -1, "message": str(exc)})
    table = pd.DataFrame(rows)
    full = table.loc[table["configuration"] == FULL, "mape"]
    ref = float(full.iloc[0]) if len(full) else np.nan
    table["delta_pct"] = (table["mape"] / ref - 1.0) * 100.0
    return AblationRun(table[ABLATION_COLUMNS], preds, models)
