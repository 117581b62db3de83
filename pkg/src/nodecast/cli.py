"""Command-line entry point.

All commands share one working directory with fixed file names, so a run is
``gen``, ``featurize``, ``train``, ``predict``, ``evaluate``, ``backtest``
in sequence. ``gen`` writes the resolved configuration next to the data and
later commands pick it up unless ``--config`` (or $NODECAST_CONFIG) says
otherwise. Any module error exits with status 1; usage errors exit with 2.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from nodecast import checkpoint, io
from nodecast.ablation import ABLATIONS, build_model, run_ablation
from nodecast.backtest import run_backtest
from nodecast.baselines import baseline_predictions
from nodecast.config import ENV_VAR, RunConfig, load_config
from nodecast.errors import InputError, NodecastError
from nodecast.evaluation import (
    compare_models,
    evaluate,
    format_report,
    regime_report,
    regime_thresholds,
    volatility_proxy,
)
from nodecast.features import FEATURE_NAMES
from nodecast.synthgen import generate_market, generate_sentiment
from nodecast.training import (
    PanelData,
    attention_frame,
    full_gradient_check,
    predict,
    prepare_panel,
    run_training_stages,
)

log = logging.getLogger("nodecast")

OHLCV, SENTIMENT, SECTORS, CONFIG = "ohlcv.csv", "sentiment.csv", "sectors.csv", "config.json"
FEATURES, MODEL, TRAIN_LOG, PREDICTIONS = "features.csv", "model.ckpt", "train_log.csv", "predictions.csv"
METRICS, SIGNIFICANCE, REGIMES = "metrics.csv", "significance.csv", "regimes.csv"
LEDGER, BACKTEST, ABLATION, GRADCHECK = "ledger.csv", "backtest.csv", "ablation.csv", "gradcheck.csv"
ATTENTION = "attention.csv"
MODEL_LABEL = "nodeformer"


class Run:
    """Resolved configuration plus the working directory."""

    def __init__(self, cfg: RunConfig, workdir: Path):
        self.cfg = cfg
        self.dir = workdir
        self.hash = cfg.config_hash()
        self.seed = cfg.seed

    def path(self, name: str) -> Path:
        return self.dir / name

    def write(self, name: str, frame: pd.DataFrame) -> Path:
        p = self.path(name)
        io.write_table(p, frame, self.hash, self.seed)
        return p

    def panel(self) -> PanelData:
        market = io.read_ohlcv(self.path(OHLCV), self.path(SECTORS))
        sent = io.read_sentiment(self.path(SENTIMENT)) if self.path(SENTIMENT).exists() else None
        return prepare_panel(market, sent, self.cfg.horizons, self.cfg.split_fractions)


# -- commands ----------------------------------------------------------------------------

def cmd_gen(run: Run, args) -> None:
    sc = run.cfg.synth()
    market = generate_market(sc)
    io.write_ohlcv(run.path(OHLCV), market, run.hash, run.seed)
    io.write_sectors(run.path(SECTORS), market, run.hash, run.seed)
    io.write_sentiment(run.path(SENTIMENT), generate_sentiment(sc, market), run.hash, run.seed)
    run.path(CONFIG).write_text(run.cfg.to_json(), encoding="utf-8")
    print(f"generated {sc.n_stocks} stocks x {sc.n_days} days in {run.dir}")


def cmd_featurize(run: Run, args) -> None:
    data = run.panel()
    D, N, K = data.x.shape
    region = np.full(D, "test", dtype=object)
    region[data.split.train] = "train"
    region[data.split.validation] = "validation"
    frame = pd.DataFrame({
        "date": np.repeat(data.dates.astype(str), N),
        "ticker": np.tile(data.tickers, D),
        "split": np.repeat(region, N),
    })
    for k, name in enumerate(FEATURE_NAMES):
        frame[name] = data.x[:, :, k].ravel()
    for k in range(3):
        frame[f"sentiment_{k}"] = data.sent[:, :, k].ravel()
    run.write(FEATURES, frame)
    print(f"features: {D} days x {N} stocks x {K} features "
          f"(train {data.split.train_end}, validation {data.split.val_end - data.split.train_end}, "
          f"test {D - data.split.val_end})")


def cmd_train(run: Run, args) -> None:
    data = run.panel()
    model = build_model(data, run.cfg.model(), run.seed, run.cfg.edge_alpha)
    tcfg = run.cfg.train()
    if args.snapshot:
        tcfg.snapshot_path = str(run.path("diagnostic.ckpt"))
    result = run_training_stages(model, data, tcfg)
    checkpoint.save_model(run.path(MODEL), model, {
        "config_hash": run.hash, "seed": run.seed, "best_epoch": result.best_epoch,
        "tickers": data.tickers,
    })
    run.write(TRAIN_LOG, pd.DataFrame(result.history))
    drop = (1.0 - result.final_train_mse / result.initial_train_mse) * 100.0
    print(f"trained {tcfg.total_epochs} epochs; best epoch {result.best_epoch} "
          f"(validation MAPE {result.best_val_mape:.4f}%); train MSE down {drop:.1f}%")


def _load_model(run: Run, data: PanelData):
    model, meta = checkpoint.load_model(run.path(MODEL))
    if meta.get("tickers") not in (None, data.tickers):
        raise InputError("checkpoint was trained on a different ticker set")
    return model


def cmd_predict(run: Run, args) -> None:
    data = run.panel()
    model = _load_model(run, data)
    frames = [predict(model, data, args.region, MODEL_LABEL)]
    if not args.no_baselines:
        sl = data.split.region(args.region)
        p, q, d = run.cfg.arima_grid()
        for kind in ("naive", "arima"):
            frame, _ = baseline_predictions(data.dates, data.tickers, data.close, data.split.train_end, sl,
                                            data.horizons, kind, {"p": p, "q": q, "d": d})
            frames.append(frame)
    out = pd.concat(frames, ignore_index=True)
    io.write_predictions(run.path(PREDICTIONS), out, run.hash, run.seed)
    if args.dump_attention:
        run.write(ATTENTION, attention_frame(model, data, args.dump_attention))
    print(f"wrote {len(out)} prediction rows for {out['model'].nunique()} model(s)")


def cmd_evaluate(run: Run, args) -> None:
    frame = io.read_predictions(args.predictions or run.path(PREDICTIONS))
    table = evaluate(frame, run.cfg.n_boot, run.seed)
    run.write(METRICS, table)
    print(format_report(table))
    models = sorted(frame["model"].unique())
    if MODEL_LABEL in models:
        rows = []
        for other in (m for m in models if m != MODEL_LABEL):
            for h in sorted(frame["horizon"].unique()):
                res = compare_models(frame, MODEL_LABEL, other, int(h))
                rows.append({"model_a": MODEL_LABEL, "model_b": other, "horizon": int(h), **asdict(res)})
        if rows:
            run.write(SIGNIFICANCE, pd.DataFrame(rows))
    if run.path(OHLCV).exists() and args.predictions is None:
        data = run.panel()
        proxy = volatility_proxy(data.dates, data.vol[:, -1])
        thresholds = regime_thresholds(proxy, data.dates[data.split.validation].astype(str))
        parts = []
        for (m, h), g in frame.groupby(["model", "horizon"], sort=True):
            rep = regime_report(g, proxy, thresholds)
            rep.insert(0, "horizon", int(h))
            rep.insert(0, "model", m)
            parts.append(rep)
        run.write(REGIMES, pd.concat(parts, ignore_index=True))


def cmd_backtest(run: Run, args) -> None:
    frame = io.read_predictions(args.predictions or run.path(PREDICTIONS))
    ledger, table, _ = run_backtest(frame, run.cfg.long_short_k, run.cfg.cost_bps, args.model)
    run.write(LEDGER, ledger.to_frame())
    run.write(BACKTEST, table.rename_axis("metric").reset_index())
    print(table.to_string(float_format=lambda v: f"{v:.4f}"))


def cmd_ablate(run: Run, args) -> None:
    data = run.panel()
    result = run_ablation(data, run.cfg.model(), run.cfg.train(), run.seed, run.cfg.edge_alpha)
    run.write(ABLATION, result.table)
    print(result.table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    failed = result.table[result.table["status"] != "ok"]
    if len(failed):
        print(f"{len(failed)} configuration(s) failed; see {ABLATION}", file=sys.stderr)


def cmd_gradcheck(run: Run, args) -> None:
    data = run.panel()
    model = build_model(data, run.cfg.model(), run.seed, run.cfg.edge_alpha).with_config(dropout=0.0)
    errors = full_gradient_check(model, data, coords_per_tensor=run.cfg.gradcheck_coords)
    worst = errors.pop("max")
    frame = pd.DataFrame({"tensor": list(errors), "rel_error": list(errors.values())})
    run.write(GRADCHECK, frame)
    tol = run.cfg.gradcheck_tolerance
    print(f"gradient check over {len(errors)} tensors: max relative error {worst:.3e} (tolerance {tol:g})")
    if not worst < tol:
        raise NodecastError(f"gradient check failed: {worst:.3e} >= {tol:g}")


COMMANDS = {
    "gen": (cmd_gen, "generate a synthetic market and sentiment stream"),
    "featurize": (cmd_featurize, "compute, split and normalize features"),
    "train": (cmd_train, "run the staged training schedule and save a checkpoint"),
    "predict": (cmd_predict, "write forecasts for the model and the baselines"),
    "evaluate": (cmd_evaluate, "score a predictions file"),
    "backtest": (cmd_backtest, "simulate the long-short portfolio from predictions"),
    "ablate": (cmd_ablate, "retrain with components removed: " + ", ".join(ABLATIONS)),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the full training loss"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"flat JSON config (default: ${ENV_VAR}, then <workdir>/{CONFIG})")
    common.add_argument("--workdir", default=".", help="directory holding every artifact")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="nodecast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "train":
            p.add_argument("--snapshot", action="store_true", help="dump parameters if training diverges")
        if name == "predict":
            p.add_argument("--region", choices=("validation", "test"), default="test")
            p.add_argument("--no-baselines", action="store_true")
            p.add_argument("--dump-attention", metavar="DATE",
                           help=f"also write per-layer attention weights of the window ending DATE to {ATTENTION}")
        if name in ("evaluate", "backtest"):
            p.add_argument("--predictions", help=f"predictions CSV (default <workdir>/{PREDICTIONS})")
        if name == "backtest":
            p.add_argument("--model", default=MODEL_LABEL)
    return parser


def _resolve_config(args, workdir: Path) -> RunConfig:
    if args.config or os.environ.get(ENV_VAR):
        return load_config(args.config)
    local = workdir / CONFIG
    return load_config(local if local.exists() else None)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    workdir = Path(args.workdir)
    try:
        workdir.mkdir(parents=True, exist_ok=True)
        run = Run(_resolve_config(args, workdir), workdir)
        COMMANDS[args.command][0](run, args)
    except NodecastError as exc:
        print(f"nodecast {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"nodecast {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
