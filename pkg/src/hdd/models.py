"""MLP, CNN, LSTM and CNN-LSTM predictors over (W, D) count sequences.

Inputs are raw nonnegative counts; every model applies log(1+x) first.

    lstm      per-step dense embedding -> LSTM -> last hidden -> dropout -> head
    cnn_lstm  per-step conv/relu/pool -> dense embedding -> LSTM -> dropout -> head
    cnn       conv/relu/pool over the flattened sequence -> dense+relu -> dropout -> head
    mlp       flatten -> dense+relu -> dropout -> dense+relu -> dropout -> head
"""
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import metrics
from .neural.layers import (
    LstmParams,
    ShapeError,
    bce_with_logits,
    conv1d_relu_pool_backward,
    conv1d_relu_pool_forward,
    conv_output_len,
    dense_backward,
    lstm_backward,
    lstm_forward,
    mse_with_grad,
    sigmoid,
)
from .neural.store import AdamConfig, ParamStore, load_checkpoint, optimizer_step, save_checkpoint

log = logging.getLogger(__name__)

ARCHS = ("mlp", "cnn", "lstm", "cnn_lstm")
HEADS = ("sigmoid_binary", "linear_regression")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "lstm"
    embed_dim: int = 32
    hidden_dim: int = 32
    n_filters: int = 8
    kernel_width: int = 5
    pool_width: int = 4
    dense_units: int = 128  # cnn only
    dropout_rate: float = 0.5
    task_head: str = "sigmoid_binary"
    rng_seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.task_head not in HEADS:
            raise ValueError(f"unknown task head {self.task_head!r}")
        for f in ("embed_dim", "hidden_dim", "n_filters", "kernel_width", "pool_width", "dense_units"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


# Full-size layer widths; far too slow for CI.
FULL_SIZE_PRESETS = {
    "lstm": ModelConfig(arch="lstm", embed_dim=512, hidden_dim=512),
    "cnn_lstm": ModelConfig(arch="cnn_lstm", embed_dim=1000, hidden_dim=1000, n_filters=64),
}


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Model:
    def __init__(self, config: ModelConfig, input_shape: tuple[int, int]):
        self.config = config
        self.input_shape = tuple(int(s) for s in input_shape)
        W, D = self.input_shape
        if W < 1 or D < 1:
            raise ShapeError(f"bad input shape {input_shape}")
        c = config
        if c.arch in ("cnn", "cnn_lstm"):
            length = D if c.arch == "cnn_lstm" else W * D
            if length < c.kernel_width:
                raise ShapeError(f"feature length {length} shorter than kernel width {c.kernel_width}")
        rng = np.random.default_rng(c.rng_seed)
        s = self.store = ParamStore()

        def dense(name, n_in, n_out):
            s.add(f"{name}.W", _glorot(rng, (n_out, n_in), n_in, n_out))
            s.add(f"{name}.b", np.zeros(n_out))

        if c.arch in ("cnn", "cnn_lstm"):
            s.add("conv.K", _glorot(rng, (c.n_filters, c.kernel_width), c.kernel_width, c.n_filters))
            s.add("conv.b", np.zeros(c.n_filters))
        if c.arch == "lstm":
            dense("embed", D, c.embed_dim)
        elif c.arch == "cnn_lstm":
            dense("embed", c.n_filters * conv_output_len(D, c.kernel_width, c.pool_width), c.embed_dim)
        if c.arch in ("lstm", "cnn_lstm"):
            H, E = c.hidden_dim, c.embed_dim
            Wl = np.concatenate([_glorot(rng, (H, E), E, H) for _ in range(4)])
            Ul = np.concatenate([_glorot(rng, (H, H), H, H) for _ in range(4)])
            bl = np.zeros(4 * H)
            bl[H:2 * H] = 1.0  # forget gate
            s.add("lstm.W", Wl)
            s.add("lstm.U", Ul)
            s.add("lstm.b", bl)
            dense("head", H, 1)
        elif c.arch == "cnn":
            dense("dense", c.n_filters * conv_output_len(W * D, c.kernel_width, c.pool_width),
                  c.dense_units)
            dense("head", c.dense_units, 1)
        else:
            dense("dense1", W * D, c.embed_dim)
            dense("dense2", c.embed_dim, c.hidden_dim)
            dense("head", c.hidden_dim, 1)

    # -- forward / backward -------------------------------------------------
    def _lstm(self) -> LstmParams:
        return LstmParams(self.store["lstm.W"], self.store["lstm.U"], self.store["lstm.b"])

    def _dropout(self, x, rng):
        rate = self.config.dropout_rate
        if rng is None or rate == 0.0:
            return x, None
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
        return x * mask, mask

    def _dense(self, name, x):
        return x @ self.store[f"{name}.W"].T + self.store[f"{name}.b"]

    def _dense_back(self, name, dout, x):
        dW, db, dx = dense_backward(dout, self.store[f"{name}.W"], x)
        self.store.accumulate(f"{name}.W", dW)
        self.store.accumulate(f"{name}.b", db)
        return dx

    def forward(self, X, dropout_rng=None):
        """Head output (logit or regression value) per sample, plus a cache."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1:] != self.input_shape:
            raise ShapeError(f"expected input (n, {self.input_shape[0]}, {self.input_shape[1]}), got {X.shape}")
        c, s = self.config, self.store
        x = np.log1p(X)
        n, W, D = x.shape
        cache = {"x": x}
        if c.arch in ("lstm", "cnn_lstm"):
            if c.arch == "cnn_lstm":
                pooled, cache["conv"] = conv1d_relu_pool_forward(
                    s["conv.K"], s["conv.b"], x.reshape(n * W, D), c.pool_width)
                feats = pooled.reshape(n, W, -1)
            else:
                feats = x
            cache["feats"] = feats
            emb = self._dense("embed", feats)
            h, cache["lstm"] = lstm_forward(self._lstm(), emb)
            hd, cache["mask"] = self._dropout(h, dropout_rng)
            cache["top"] = hd
        elif c.arch == "cnn":
            pooled, cache["conv"] = conv1d_relu_pool_forward(
                s["conv.K"], s["conv.b"], x.reshape(n, W * D), c.pool_width)
            flat = pooled.reshape(n, -1)
            pre = self._dense("dense", flat)
            hd, cache["mask"] = self._dropout(np.maximum(pre, 0.0), dropout_rng)
            cache.update(flat=flat, pre=pre, top=hd)
        else:
            flat = x.reshape(n, W * D)
            pre1 = self._dense("dense1", flat)
            a1, cache["mask1"] = self._dropout(np.maximum(pre1, 0.0), dropout_rng)
            pre2 = self._dense("dense2", a1)
            hd, cache["mask"] = self._dropout(np.maximum(pre2, 0.0), dropout_rng)
            cache.update(flat=flat, pre1=pre1, a1=a1, pre2=pre2, top=hd)
        out = self._dense("head", cache["top"])[:, 0]
        return out, cache

    def backward(self, dout, cache):
        """Accumulate parameter gradients for d(loss)/d(head output) = dout."""
        c, s = self.config, self.store
        x = cache["x"]
        n, W, D = x.shape
        dtop = self._dense_back("head", dout[:, None], cache["top"])
        if cache.get("mask") is not None:
            dtop = dtop * cache["mask"]
        if c.arch in ("lstm", "cnn_lstm"):
            p = self._lstm()
            demb, dW, dU, db = lstm_backward(p, dtop, cache["lstm"])
            s.accumulate("lstm.W", dW)
            s.accumulate("lstm.U", dU)
            s.accumulate("lstm.b", db)
            dfeats = self._dense_back("embed", demb, cache["feats"])
            if c.arch == "cnn_lstm":
                dK, dbk, _ = conv1d_relu_pool_backward(dfeats.reshape(n * W, c.n_filters, -1),
                                                       cache["conv"], c.pool_width)
                s.accumulate("conv.K", dK)
                s.accumulate("conv.b", dbk)
        elif c.arch == "cnn":
            dpre = dtop * (cache["pre"] > 0)
            dflat = self._dense_back("dense", dpre, cache["flat"])
            dK, dbk, _ = conv1d_relu_pool_backward(dflat.reshape(n, c.n_filters, -1),
                                                   cache["conv"], c.pool_width)
            s.accumulate("conv.K", dK)
            s.accumulate("conv.b", dbk)
        else:
            dpre2 = dtop * (cache["pre2"] > 0)
            da1 = self._dense_back("dense2", dpre2, cache["a1"])
            if cache.get("mask1") is not None:
                da1 = da1 * cache["mask1"]
            dpre1 = da1 * (cache["pre1"] > 0)
            self._dense_back("dense1", dpre1, cache["flat"])

    def loss_and_grad(self, X, y, dropout_rng=None) -> float:
        """Mean batch loss; leaves fresh gradients in ``self.store.grads``."""
        self.store.zero_grad()
        out, cache = self.forward(X, dropout_rng)
        y = np.asarray(y, dtype=np.float64)
        if self.config.task_head == "sigmoid_binary":
            value, dout = bce_with_logits(out, y)
        else:
            value, dout = mse_with_grad(out, y)
        self.backward(dout, cache)
        return value

    def predict(self, X) -> np.ndarray:
        out, _ = self.forward(X)
        return sigmoid(out) if self.config.task_head == "sigmoid_binary" else out

    def n_params(self) -> int:
        return self.store.n_params()


def build_model(config: ModelConfig, input_shape) -> Model:
    return Model(config, input_shape)


def lstm_param_count(D: int, embed: int, hidden: int) -> int:
    """Closed form for the lstm arch: embedding + four gates + head."""
    return (D * embed + embed) + 4 * (hidden * embed + hidden * hidden + hidden) + (hidden + 1)


def predict(model: Model, samples) -> np.ndarray:
    return model.predict(samples.features)


# -- training ---------------------------------------------------------------
class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 5
    val_fraction: float = 0.1
    seed: int = 0


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    metric_name: str = "aupr"
    best_epoch: int = -1
    seconds: float = 0.0

    def traces(self) -> dict:
        """Everything except wall-clock time, for reproducibility checks."""
        d = asdict(self)
        d.pop("seconds")
        return d


def _hash_key(node_id: str) -> bytes:
    return hashlib.blake2b(str(node_id).encode("utf-8"), digest_size=8).digest()


def validation_split(node_ids, fraction: float = 0.1):
    """Indices (train, val): val is the last ``fraction`` of samples by id hash."""
    order = sorted(range(len(node_ids)), key=lambda i: (_hash_key(node_ids[i]), str(node_ids[i])))
    n_val = int(round(fraction * len(order)))
    if len(order) - n_val < 1:
        n_val = 0
    val = sorted(order[len(order) - n_val:]) if n_val else []
    train = sorted(order[:len(order) - n_val])
    return np.array(train, dtype=np.int64), np.array(val, dtype=np.int64)


def _val_score(model: Model, samples):
    """Higher is better: AUPR for the binary head, negative MSE for regression."""
    pred = model.predict(samples.features)
    if model.config.task_head == "linear_regression":
        return -metrics.mse(pred, samples.labels)
    if samples.labels.sum() == 0:
        return None
    return metrics.aupr(pred, samples.labels, samples.node_ids)


def train(model: Model, train_samples, val_samples=None, hyper: TrainConfig = TrainConfig()):
    """Minibatch Adam; keeps the parameters of the best validation epoch.

    Without ``val_samples`` a deterministic hash-based slice of the training
    set is held out. When validation has no positives, training loss decides.
    """
    if len(train_samples) == 0:
        raise TrainingError("empty training set")
    if val_samples is None:
        tr, va = validation_split(train_samples.node_ids, hyper.val_fraction)
        if len(va):
            train_samples, val_samples = train_samples.subset(tr), train_samples.subset(va)
    start = time.perf_counter()
    rng = np.random.default_rng(hyper.seed)
    adam = AdamConfig(hyper.lr, hyper.beta1, hyper.beta2, hyper.eps)
    report = TrainReport(metric_name="aupr" if model.config.task_head == "sigmoid_binary" else "neg_mse")
    X, y = train_samples.features, train_samples.labels
    n = len(y)
    best, best_params, stale = None, model.store.snapshot(), 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            value = model.loss_and_grad(X[idx], y[idx], dropout_rng=rng)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {lo}")
            model.store.check_grads()
            optimizer_step(model.store, adam)
            total += value * len(idx)
        report.epoch_loss.append(total / n)
        score = _val_score(model, val_samples) if val_samples is not None and len(val_samples) else None
        if score is None:
            score = -report.epoch_loss[-1]
        report.val_metric.append(float(score))
        if best is None or score > best:
            best, best_params, stale = score, model.store.snapshot(), 0
            report.best_epoch = epoch
        else:
            stale += 1
            if stale >= hyper.patience:
                break
    model.store.restore(best_params)
    report.seconds = time.perf_counter() - start
    log.info("%s: %d epochs, best %d (%s=%.4f), %.1fs", model.config.arch, len(report.epoch_loss),
             report.best_epoch, report.metric_name, best, report.seconds)
    return model, report


# -- persistence --------------------------------------------------------------
def save_model(model: Model, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model.store, d / "weights.hddw")
    with open(d / "model.cfg", "w", encoding="utf-8") as fh:
        for f in fields(ModelConfig):
            fh.write(f"{f.name} = {getattr(model.config, f.name)}\n")
        fh.write(f"input_steps = {model.input_shape[0]}\n")
        fh.write(f"input_dim = {model.input_shape[1]}\n")


def load_model(directory) -> Model:
    d = Path(directory)
    raw = {}
    with open(d / "model.cfg", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                k, v = (s.strip() for s in line.split("=", 1))
                raw[k] = v
    kw = {}
    for f in fields(ModelConfig):
        if f.name in raw:
            default = getattr(ModelConfig(), f.name)
            kw[f.name] = type(default)(raw[f.name])
    model = Model(replace(ModelConfig(), **kw), (int(raw["input_steps"]), int(raw["input_dim"])))
    weights = load_checkpoint(d / "weights.hddw")
    if set(weights) != set(model.store.names()):
        raise ValueError(f"{d}: checkpoint parameters do not match the config")
    model.store.restore(weights)
    return model
