import math

import numpy as np
import pytest

import nodecast.autograd as ag
import nodecast.nodeformer as nf
from nodecast.autograd import Tensor, grad_check
from nodecast.errors import ConfigError, ShapeError, TrainingError
from nodecast.features import DatasetSplit
from nodecast.graph import init_edges
from nodecast.nodeformer import ModelConfig, NodeFormer
from nodecast.synthgen import SynthConfig, generate_market, generate_sentiment
from nodecast.training import (
    PREDICTION_COLUMNS,
    LossWeights,
    StageSpec,
    Targets,
    TrainConfig,
    composite_loss,
    full_gradient_check,
    direction_indicator,
    make_batch,
    make_training_windows,
    staged_schedule,
    predict,
    prepare_panel,
    run_training_stages,
    shuffled_batches,
)


@pytest.fixture(scope="module")
def panel():
    sc = SynthConfig(n_stocks=4, n_days=360, seed=3, sentiment_lead_strength=0.5)
    market = generate_market(sc)
    return prepare_panel(market, generate_sentiment(sc, market), horizons=(1, 5))


def _model(panel, **kw):
    base = dict(n_stocks=panel.n_stocks, n_layers=2, n_heads=2, d_model=16, d_ff=32, seq_len=16,
                horizons=panel.horizons, dropout=0.0)
    base.update(kw)
    g = init_edges(panel.train_returns(), panel.tickers, panel.sectors)
    return NodeFormer.create(ModelConfig(**base), g.edge_weights, seed=0)


# -- windows --------------------------------------------------------------------

def test_window_count_example():
    ends = make_training_windows(140, DatasetSplit(140, 100, 120), "train", 64, (1,))
    assert len(ends) == 36


@pytest.mark.parametrize("region", ["train", "validation", "test"])
@pytest.mark.parametrize("T,horizons", [(8, (1,)), (16, (1, 5, 20)), (30, (1, 5))])
def test_windows_stay_inside_split(region, T, horizons):
    split = DatasetSplit(300, 200, 250)
    sl = split.region(region)
    ends = make_training_windows(300, split, region, T, horizons)
    assert len(ends) == (sl.stop - sl.start) - T - max(horizons) + 1
    assert ends.min() - T + 1 >= sl.start
    assert ends.max() + max(horizons) < sl.stop


def test_window_longer_than_split():
    with pytest.raises(ConfigError):
        make_training_windows(100, DatasetSplit(100, 50, 75), "validation", 30, (1,))


def test_batch_targets_never_cross_limit(panel):
    T = 16
    ends = np.arange(T - 1, panel.split.train_end)
    _, tg = make_batch(panel, ends, T, panel.split.train_end)
    for j, h in enumerate(panel.horizons):
        ok = ends + h < panel.split.train_end
        assert np.array_equal(tg.mask[:, 0, j], ok)
        assert np.isnan(tg.z[~ok, :, j]).all()


def test_shuffle_deterministic():
    ends = np.arange(100)
    a = shuffled_batches(ends, 32, np.random.default_rng(5))
    b = shuffled_batches(ends, 32, np.random.default_rng(5))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(100))


def test_flat_move_counts_as_down():
    assert direction_indicator([1.0, 2.0, 3.0], [1.0, 1.0, 4.0]).tolist() == [0.0, 1.0, 0.0]


# -- loss ----------------------------------------------------------------------------

def _targets(z):
    z = np.asarray(z, dtype=float)
    return Targets(z, (z > 0).astype(float), np.ones(z.shape, dtype=bool))


def test_perfect_predictions_zero_loss():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(3, 5, 2))
    tg = _targets(z)
    loss, parts = composite_loss(Tensor(z), Tensor(tg.up), tg, [], LossWeights(l2=0.0))
    assert parts["mse"] == 0.0 and parts["corr"] == pytest.approx(0.0, abs=1e-12)
    assert loss.data == pytest.approx(0.0, abs=1e-6)          # clamped BCE ~ 1e-7


def test_reduces_to_mse():
    rng = np.random.default_rng(1)
    z, y = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 3))
    tg = _targets(z)
    loss, _ = composite_loss(Tensor(y), Tensor(np.full(z.shape, 0.3)), tg, [Tensor(np.ones(3))],
                             LossWeights(1.0, 0.0, 0.0, 0.0))
    assert loss.data == pytest.approx(np.mean((y - z) ** 2), abs=1e-14)


@pytest.mark.parametrize("sign,expected", [(1.0, 0.0), (-1.0, 2.0)])
def test_correlation_extremes(sign, expected):
    z = np.random.default_rng(2).normal(size=(4, 6, 1))
    tg = _targets(z)
    _, parts = composite_loss(Tensor(sign * z), Tensor(np.full(z.shape, 0.5)), tg, [], LossWeights(l2=0.0))
    assert parts["corr"] == pytest.approx(expected, abs=1e-12)


def test_degenerate_day_skipped():
    z = np.random.default_rng(3).normal(size=(3, 4, 1))
    z[1] = 0.5
    tg = _targets(z)
    _, parts = composite_loss(Tensor(z), Tensor(np.full(z.shape, 0.5)), tg, [], LossWeights())
    assert parts["corr_skipped"] == 1


@pytest.mark.parametrize("seed", range(10))
def test_loss_non_negative(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(3, 4, 2))
    loss, _ = composite_loss(Tensor(rng.normal(size=z.shape)), Tensor(rng.uniform(size=z.shape)),
                             _targets(z), [Tensor(rng.normal(size=5))], LossWeights())
    assert loss.data >= 0


def test_loss_shape_mismatch():
    tg = _targets(np.zeros((2, 3, 1)))
    with pytest.raises(ShapeError):
        composite_loss(Tensor(np.zeros((2, 3, 2))), Tensor(np.zeros((2, 3, 2))), tg, [], LossWeights())


def test_loss_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(mse=0.0)
    with pytest.raises(ConfigError):
        LossWeights(direction=-1.0)


def test_loss_gradient():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(3, 5, 2))
    y = Tensor(rng.normal(size=z.shape), requires_grad=True)
    logit = Tensor(rng.normal(size=z.shape), requires_grad=True)
    w = Tensor(rng.normal(size=4), requires_grad=True)
    scale = rng.uniform(0.5, 2.0, size=(5, 2))
    f = lambda: composite_loss(y, ag.sigmoid(logit), _targets(z), [w], LossWeights(), scale)[0]
    assert grad_check(f, [y, logit, w], h=1e-4) < 1e-6


# -- full pipeline gradient ------------------------------------------------------------------

def test_full_pipeline_gradient(panel):
    errors = full_gradient_check(_model(panel), panel, coords_per_tensor=4)
    assert errors["max"] < 1e-4, {k: v for k, v in errors.items() if v >= 1e-4}


# -- staged training --------------------------------------------------------------------------

def _quick_cfg(**kw):
    base = dict(stages=(StageSpec("s1", 2, 3e-3, "none"), StageSpec("s2", 1, 3e-3, "top:1"),
                        StageSpec("s3", 1, 3e-3, "all")), batch_size=16, warmup_steps=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_stage_one_freezes_trunk(panel):
    model = _model(panel)
    before = {k: v.data.copy() for k, v in model.params.items()}
    cfg = _quick_cfg(stages=(StageSpec("s1", 2, 3e-3, "none"),), validate=False)
    run_training_stages(model, panel, cfg)
    for k, v in model.params.items():
        if nf.param_group(k) == "node":
            assert np.array_equal(before[k], v.data), k
    assert not np.array_equal(before["head.price.W"], model.params["head.price.W"].data)


def test_top_k_unfreezes_only_top_layers(panel):
    model = _model(panel)
    before = {k: v.data.copy() for k, v in model.params.items()}
    run_training_stages(model, panel, _quick_cfg(stages=(StageSpec("s2", 1, 3e-3, "top:1"),), validate=False))
    assert np.array_equal(before["layer0.t.q"], model.params["layer0.t.q"].data)
    assert np.array_equal(before["embed.W"], model.params["embed.W"].data)
    assert not np.array_equal(before["layer1.t.q"], model.params["layer1.t.q"].data)


def test_history_epochs_and_determinism(panel):
    cfg = _quick_cfg()
    a, b = _model(panel), _model(panel)
    ra = run_training_stages(a, panel, cfg)
    rb = run_training_stages(b, panel, cfg)
    assert len(ra.history) == cfg.total_epochs + 1
    assert [r["stage"] for r in ra.history[1:]] == ["s1", "s1", "s2", "s3"]
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    assert math.isfinite(ra.best_val_mape)


def test_default_schedule_totals():
    stages = staged_schedule()
    assert [s.epochs for s in stages] == [10, 20, 30]
    assert sum(s.epochs for s in stages) == 60
    assert [s.lr for s in stages] == [1e-4, 5e-5, 1e-5]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(panel, tmp_path):
    model = _model(panel)
    model.params["head.price.W"].data[:] = np.inf
    snap = tmp_path / "snap.ckpt"
    with pytest.raises(TrainingError) as info:
        run_training_stages(model, panel, _quick_cfg(validate=False, snapshot_path=str(snap)))
    assert info.value.snapshot == str(snap) and snap.exists()


def test_predictions_schema(panel):
    model = _model(panel)
    frame = predict(model, panel, "test")
    assert list(frame.columns) == PREDICTION_COLUMNS
    n_test = panel.n_days - panel.split.val_end
    for h in panel.horizons:
        assert (frame["horizon"] == h).sum() == (n_test - h) * panel.n_stocks
    first_test = panel.dates[panel.split.val_end].astype(str)
    assert frame["date"].min() == first_test
    assert np.all(frame["p_up"].between(0, 1))


def test_predictions_use_only_past_inputs(panel):
    model = _model(panel)
    base = predict(model, panel, "test")
    import copy
    altered = copy.deepcopy(panel)
    cut = panel.split.val_end + 20
    altered.x[cut:] += 3.0
    altered.sent[cut:] -= 0.5
    changed = predict(model, altered, "test")
    early = base["date"] < panel.dates[cut].astype(str)
    np.testing.assert_array_equal(base.loc[early, "y_pred"].to_numpy(), changed.loc[early, "y_pred"].to_numpy())
