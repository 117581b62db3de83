"""Graph-biased transformer over a (stock, day) grid.

Each layer runs two attention passes: first along time for every stock (with
a causal mask, optionally scaling keys by that stock's daily sentiment), then
across stocks at every time step with the current edge matrix added to the
attention logits. After the feed-forward block, edges are re-scored from the
running time-average of node states, so position t never sees position t+1.

Tensors are laid out as (batch, stock, time, channel).
"""
from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from nodecast import autograd as ag
from nodecast.autograd import Tensor
from nodecast.errors import ConfigError, GraphError, ShapeError
from nodecast.features import CLOSE, N_FEATURES, RAW_COLUMNS
from nodecast.fusion import compute_gate, fuse
from nodecast.graph import edge_logits, edges_from_logits, refine_edges
from nodecast.sentiment import mean_abs_sentiment, scale_keys, sentiment_branch_predict

N_RAW = len(RAW_COLUMNS)


@dataclass(frozen=True)
class ModelConfig:
    n_stocks: int = 6
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    d_stock: int = 8
    seq_len: int = 64
    dropout: float = 0.1
    horizons: tuple[int, ...] = (1, 5, 20)
    sentiment_hidden: int = 16
    use_sentiment: bool = True
    use_graph_bias: bool = True
    use_temporal_encoding: bool = True
    use_feature_gate: bool = True
    cross_sectional: bool = True
    feature_set: str = "all"
    d_in: int = N_FEATURES

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ConfigError("d_model must be even for the sinusoidal time encoding")
        if self.seq_len < 1 or self.n_layers < 1 or self.n_stocks < 1:
            raise ConfigError("seq_len, n_layers and n_stocks must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not self.horizons or min(self.horizons) < 1 or len(set(self.horizons)) != len(self.horizons):
            raise ConfigError(f"horizons must be distinct positive integers, got {self.horizons}")
        if self.feature_set not in ("all", "price"):
            raise ConfigError(f"feature_set must be 'all' or 'price', got {self.feature_set!r}")
        if self.d_in != N_FEATURES:
            raise ConfigError(f"d_in must be {N_FEATURES}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["horizons"] = list(self.horizons)
        return d


def temporal_encoding(positions, d: int) -> np.ndarray:
    """Sinusoidal code: even channels sin(t / 10000^(2k/d)), odd channels the matching cos."""
    if d % 2:
        raise ConfigError(f"temporal encoding needs an even width, got {d}")
    t = np.asarray(positions, dtype=np.float64)
    if np.any(t < 0):
        raise ConfigError("time positions must be non-negative")
    k = np.arange(d // 2)
    angle = t[..., None] / np.power(10000.0, 2.0 * k / d)
    out = np.empty(t.shape + (d,))
    out[..., 0::2] = np.sin(angle)
    out[..., 1::2] = np.cos(angle)
    return out


def causal_mask(T: int) -> np.ndarray:
    """Additive mask: 0 where key index <= query index, -inf otherwise."""
    return np.triu(np.full((T, T), -np.inf), 1)


def _running_mean_matrix(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T))) / np.arange(1, T + 1)[:, None]


# -- parameters ---------------------------------------------------------------

def _rng_for(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(name.encode())]))


def _param_specs(cfg: ModelConfig) -> dict:
    """name -> (shape, init) where init is 'zeros', 'ones' or a normal std."""
    d, dff, H = cfg.d_model, cfg.d_ff, len(cfg.horizons)
    specs = {
        "gate.W": ((N_FEATURES, N_FEATURES), 1.0 / math.sqrt(N_FEATURES)),
        "gate.b": ((N_FEATURES,), "zeros"),
        "embed.W": ((N_FEATURES, d), 1.0 / math.sqrt(N_FEATURES)),
        "embed.b": ((d,), "zeros"),
        "stock.emb": ((cfg.n_stocks, cfg.d_stock), 1.0),
        "stock.proj": ((cfg.d_stock, d), 1.0 / math.sqrt(cfg.d_stock)),
        "edge.w": ((2 * d,), 1.0 / math.sqrt(2 * d)),
        "edge.b": ((), "zeros"),
        "head.price.W": ((d, H), 1.0 / math.sqrt(d)),
        "head.price.b": ((H,), "zeros"),
        "head.dir.W": ((d, H), 1.0 / math.sqrt(d)),
        "head.dir.b": ((H,), "zeros"),
        "sent.beta": ((), "zeros"),
        "sent.W1": ((4, cfg.sentiment_hidden), 0.5),
        "sent.b1": ((cfg.sentiment_hidden,), "zeros"),
        "sent.W2": ((cfg.sentiment_hidden, H), 1.0 / math.sqrt(cfg.sentiment_hidden)),
        "sent.b2": ((H,), "zeros"),
        "fusion.w": ((4,), "zeros"),
        "fusion.b": ((), "zeros"),
    }
    for layer in range(cfg.n_layers):
        p = f"layer{layer}"
        for stage in ("t", "x"):
            for m in ("q", "k", "v", "o"):
                specs[f"{p}.{stage}.{m}"] = ((d, d), 1.0 / math.sqrt(d))
        specs[f"{p}.ffn.W1"] = ((d, dff), 1.0 / math.sqrt(d))
        specs[f"{p}.ffn.b1"] = ((dff,), "zeros")
        specs[f"{p}.ffn.W2"] = ((dff, d), 1.0 / math.sqrt(dff))
        specs[f"{p}.ffn.b2"] = ((d,), "zeros")
        for ln in ("ln1", "ln2"):
            specs[f"{p}.{ln}.g"] = ((d,), "ones")
            specs[f"{p}.{ln}.b"] = ((d,), "zeros")
    return specs


def init_params(cfg: ModelConfig, initial_edges: np.ndarray, seed: int = 0) -> dict[str, Tensor]:
    """Every tensor is drawn from its own name-keyed stream, so toggling a
    component never shifts the initial values of any other."""
    if initial_edges.shape != (cfg.n_stocks, cfg.n_stocks):
        raise GraphError(f"initial edges {initial_edges.shape} do not match {cfg.n_stocks} stocks")
    params = {}
    for name, (shape, init) in _param_specs(cfg).items():
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            data = _rng_for(seed, name).normal(0.0, init, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    params["edges.logit"] = Tensor(edge_logits(initial_edges), requires_grad=True, name="edges.logit")
    return params


PARAM_GROUPS = ("node", "heads", "sentiment", "fusion")


def param_group(name: str) -> str:
    if name.startswith("head."):
        return "heads"
    if name.startswith("sent."):
        return "sentiment"
    if name.startswith("fusion."):
        return "fusion"
    return "node"


def layer_of(name: str) -> int | None:
    if name.startswith("layer"):
        return int(name.split(".")[0][5:])
    return None


# -- forward ---------------------------------------------------------------------

@dataclass
class Batch:
    x: np.ndarray            # (B, N, T, 17) normalized features
    sent: np.ndarray         # (B, N, T, 3) multi-scale sentiment
    vol: np.ndarray          # (B, 3) cross-stock rolling volatility at the window end

    def __post_init__(self):
        if self.x.ndim != 4 or self.x.shape[-1] != N_FEATURES:
            raise ShapeError(f"features must be (B, N, T, {N_FEATURES}), got {self.x.shape}")
        if self.sent.shape != self.x.shape[:3] + (3,):
            raise ShapeError(f"sentiment block {self.sent.shape} does not match features {self.x.shape}")
        if self.vol.shape != (self.x.shape[0], 3):
            raise ShapeError(f"volatility block must be ({self.x.shape[0]}, 3), got {self.vol.shape}")


@dataclass
class Output:
    y_node: Tensor           # (B, N, H)
    y_sent: Tensor | None
    alpha: Tensor | None     # (B, 1, 1)
    y_hat: Tensor
    p_up: Tensor
    edges: list = field(default_factory=list)        # (B, N, N) per layer input, then the final refinement
    attention: dict = field(default_factory=dict)


def _linear(x, W, b=None):
    out = x @ W
    return out if b is None else out + b


def _affine_norm(x, g, b):
    return ag.layer_norm(x) * g + b


def _split_heads(x: Tensor, H: int) -> Tensor:
    shape = x.shape
    return ag.swapaxes(ag.reshape(x, shape[:-1] + (H, shape[-1] // H)), -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    x = ag.swapaxes(x, -2, -3)
    shape = x.shape
    return ag.reshape(x, shape[:-2] + (shape[-2] * shape[-1],))


def multi_head_attention(x, Wq, Wk, Wv, Wo, n_heads, mask=None, bias=None, key_scale=None, record=None, tag=""):
    """Scaled dot-product attention over the second-to-last axis of ``x``.

    ``mask`` is a constant additive array, ``bias`` a differentiable additive
    term broadcastable to (..., heads, L, L), ``key_scale`` an optional
    ``(sentiment, beta)`` pair that rescales the keys.
    """
    q, k, v = x @ Wq, x @ Wk, x @ Wv
    if key_scale is not None:
        k = scale_keys(k, key_scale[0], key_scale[1])
    q, k, v = _split_heads(q, n_heads), _split_heads(k, n_heads), _split_heads(v, n_heads)
    scores = (q @ ag.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        scores = scores + bias
    weights = ag.softmax(scores, axis=-1, bias=mask)
    if record is not None:
        record[tag] = weights.data.copy()
    return _merge_heads(weights @ v) @ Wo


class NodeFormer:
    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params
        missing = set(_param_specs(cfg)) - set(params)
        if missing:
            raise ConfigError(f"parameters missing: {sorted(missing)[:5]}")

    @classmethod
    def create(cls, cfg: ModelConfig, initial_edges: np.ndarray, seed: int = 0) -> "NodeFormer":
        return cls(cfg, init_params(cfg, initial_edges, seed))

    def with_config(self, **changes) -> "NodeFormer":
        """Same parameters under a modified configuration (shared, not copied)."""
        return NodeFormer(replace(self.cfg, **changes), self.params)

    # -- pieces -------------------------------------------------------------
    def gate(self, x: Tensor) -> Tensor:
        p = self.params
        return ag.sigmoid(_linear(x, p["gate.W"], p["gate.b"])) * x

    def embed(self, x: Tensor) -> Tensor:
        """(B, N, T, 17) -> (B, N, T, d): projection plus time code plus stock vector."""
        cfg, p = self.cfg, self.params
        if x.shape[-1] != N_FEATURES:
            raise ShapeError(f"expected {N_FEATURES} input features, got {x.shape[-1]}")
        if x.shape[1] != cfg.n_stocks:
            raise ShapeError(f"expected {cfg.n_stocks} stocks, got {x.shape[1]}")
        h = _linear(x, p["embed.W"], p["embed.b"])
        if cfg.use_temporal_encoding:
            h = h + temporal_encoding(np.arange(x.shape[2]), cfg.d_model)
        stock = p["stock.emb"] @ p["stock.proj"]
        return h + ag.reshape(stock, (cfg.n_stocks, 1, cfg.d_model))

    def initial_edges(self) -> Tensor:
        return edges_from_logits(self.params["edges.logit"])

    def layer(self, X, E, layer: int, sent_scale=None, training=False, rng=None, record=None):
        """One block. ``X`` is (B, N, T, d); ``E`` is (N, N) or (B, T, N, N)."""
        cfg, p = self.cfg, self.params
        pre = f"layer{layer}"
        T = X.shape[2]
        a = multi_head_attention(
            X, p[f"{pre}.t.q"], p[f"{pre}.t.k"], p[f"{pre}.t.v"], p[f"{pre}.t.o"], cfg.n_heads,
            mask=causal_mask(T), key_scale=sent_scale, record=record, tag=f"{pre}.temporal",
        )
        if cfg.cross_sectional:
            xs = ag.swapaxes(a, 1, 2)                                  # (B, T, N, d)
            bias = None
            if cfg.use_graph_bias:
                bias = E if E.ndim == 2 else ag.reshape(E, E.shape[:2] + (1,) + E.shape[2:])
            xs = multi_head_attention(
                xs, p[f"{pre}.x.q"], p[f"{pre}.x.k"], p[f"{pre}.x.v"], p[f"{pre}.x.o"], cfg.n_heads,
                bias=bias, record=record, tag=f"{pre}.cross",
            )
            a = ag.swapaxes(xs, 1, 2)
        X1 = _affine_norm(X + ag.dropout(a, cfg.dropout, rng, training), p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
        f = _linear(ag.relu(_linear(X1, p[f"{pre}.ffn.W1"], p[f"{pre}.ffn.b1"])), p[f"{pre}.ffn.W2"], p[f"{pre}.ffn.b2"])
        X2 = _affine_norm(X1 + ag.dropout(f, cfg.dropout, rng, training), p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
        running = _running_mean_matrix(T) @ X2                         # causal time-average
        E_next = refine_edges(ag.swapaxes(running, 1, 2), p["edge.w"], p["edge.b"])
        return X2, E_next

    def sentiment_branch(self, sent_last: Tensor, close_last: Tensor) -> Tensor:
        return sentiment_branch_predict(self.params, sent_last, close_last)

    # -- full pass --------------------------------------------------------------
    def _inputs(self, batch: Batch) -> np.ndarray:
        if self.cfg.feature_set == "price":
            x = batch.x.copy()
            x[..., N_RAW:] = 0.0
            return x
        return batch.x

    def encode(self, batch: Batch, training: bool = False, rng=None, record=None):
        """Node states (B, N, T, d) after all layers, plus the edge matrix fed to each
        layer and the final refined one (each reported at the last time step)."""
        cfg, p = self.cfg, self.params
        x = Tensor(self._inputs(batch))
        if cfg.use_feature_gate:
            x = self.gate(x)
        X = self.embed(x)
        E = self.initial_edges()
        sent_scale = (batch.sent[..., 0:1], p["sent.beta"]) if cfg.use_sentiment else None
        B = batch.x.shape[0]
        edges = [np.broadcast_to(E.data, (B,) + E.shape).copy()]
        for layer in range(cfg.n_layers):
            X, E = self.layer(X, E, layer, sent_scale, training, rng, record)
            edges.append(E.data[:, -1].copy())
        return X, edges

    def forward(self, batch: Batch, training: bool = False, rng=None, record_attention: bool = False) -> Output:
        cfg, p = self.cfg, self.params
        record = {} if record_attention else None
        X, edges = self.encode(batch, training, rng, record)
        last = X[:, :, -1, :]                                         # (B, N, d)
        y_node = _linear(last, p["head.price.W"], p["head.price.b"])
        p_up = ag.sigmoid(_linear(last, p["head.dir.W"], p["head.dir.b"]))
        y_sent = alpha = None
        y_hat = y_node
        if cfg.use_sentiment:
            sent_last = Tensor(batch.sent[:, :, -1, :])
            close_last = Tensor(self._inputs(batch)[:, :, -1, CLOSE:CLOSE + 1])
            y_sent = self.sentiment_branch(sent_last, close_last)
            sbar = mean_abs_sentiment(batch.sent[:, :, -1, 0])
            alpha = ag.reshape(compute_gate(batch.vol, sbar, p["fusion.w"], p["fusion.b"]), (-1, 1, 1))
            y_hat = fuse(y_node, y_sent, alpha)
        return Output(y_node, y_sent, alpha, y_hat, p_up, edges, record or {})

    __call__ = forward

    def horizon_index(self, h: int) -> int:
        try:
            return self.cfg.horizons.index(int(h))
        except ValueError:
            raise ConfigError(f"horizon {h} not in configured set {self.cfg.horizons}") from None

    def n_parameters(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))


def graph_causal_attention(X: Tensor, E, stage_weights: dict, n_heads: int, record=None) -> Tensor:
    """Temporal causal pass followed by the edge-biased cross-sectional pass.

    ``stage_weights`` maps ``t.q`` ... ``x.o`` to (d, d) matrices; ``E`` must be
    a symmetric (N, N) matrix.
    """
    E = ag.as_tensor(E)
    if E.ndim != 2 or E.shape[0] != E.shape[1] or not np.allclose(E.data, E.data.T):
        raise GraphError(f"edge matrix must be square and symmetric, got shape {E.shape}")
    w = stage_weights
    a = multi_head_attention(X, w["t.q"], w["t.k"], w["t.v"], w["t.o"], n_heads,
                             mask=causal_mask(X.shape[2]), record=record, tag="temporal")
    xs = multi_head_attention(ag.swapaxes(a, 1, 2), w["x.q"], w["x.k"], w["x.v"], w["x.o"], n_heads,
                              bias=E, record=record, tag="cross")
    return ag.swapaxes(xs, 1, 2)
