"""Two-stage conv/pool CNN with dense ReLU head, trained as a speaker classifier.

Layer stack (paper sizes):

    conv1  32 x 3x3, linear      pool1 4x4
    conv2  64 x 3x3, linear      pool2 4x4
    dense1 5000, ReLU            dropout 0.2
    dense2 2500, ReLU   <- embedding layer
    out    550, softmax

Forward and backward passes are written out by hand; the conv/pool inner
loops live in :mod:`voxcluster.kernels`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .binfmt import read_container, write_container
from .errors import ConfigError, DimensionError, FormatError, StateError, TrainingDivergedError

log = logging.getLogger(__name__)

MODEL_MAGIC = b"VOXCNN01"
PARAM_NAMES = ("conv1.w", "conv1.b", "conv2.w", "conv2.b", "dense1.w", "dense1.b",
               "dense2.w", "dense2.b", "out.w", "out.b")


@dataclass(frozen=True)
class Architecture:
    input_shape: tuple = (1, 128, 100)
    conv1: int = 32
    conv2: int = 64
    kernel: int = 3
    pool: int = 4
    dense1: int = 5000
    dense2: int = 2500
    num_classes: int = 550
    dropout: float = 0.2

    def shape_trace(self) -> dict:
        c, h, w = self.input_shape
        k, p = self.kernel, self.pool
        h1, w1 = h - k + 1, w - k + 1
        h2, w2 = h1 // p, w1 // p
        h3, w3 = h2 - k + 1, w2 - k + 1
        h4, w4 = h3 // p, w3 // p
        if min(h4, w4) < 1:
            raise ConfigError(f"input {self.input_shape} too small for two conv/pool stages")
        return {
            "conv1": (self.conv1, h1, w1),
            "pool1": (self.conv1, h2, w2),
            "conv2": (self.conv2, h3, w3),
            "pool2": (self.conv2, h4, w4),
            "flatten": self.conv2 * h4 * w4,
            "dense1": self.dense1,
            "dense2": self.dense2,
            "out": self.num_classes,
        }

    @property
    def flat_dim(self) -> int:
        return self.shape_trace()["flatten"]

    def param_shapes(self) -> dict:
        k, (c, _, _) = self.kernel, self.input_shape
        return {
            "conv1.w": (self.conv1, c, k, k), "conv1.b": (self.conv1,),
            "conv2.w": (self.conv2, self.conv1, k, k), "conv2.b": (self.conv2,),
            "dense1.w": (self.dense1, self.flat_dim), "dense1.b": (self.dense1,),
            "dense2.w": (self.dense2, self.dense1), "dense2.b": (self.dense2,),
            "out.w": (self.num_classes, self.dense2), "out.b": (self.num_classes,),
        }

    def to_json(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Architecture":
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


PAPER_ARCH = Architecture()
# desk-scale variant: same layer pattern, 4/8 filters, 32/16 dense units
REDUCED_ARCH = Architecture(conv1=4, conv2=8, dense1=32, dense2=16, num_classes=8)


def scaled_arch(factor: float, num_classes: int, base: Architecture = PAPER_ARCH) -> Architecture:
    """Divide every filter/unit count of ``base`` by ``factor`` (at least one unit each)."""
    if factor < 1:
        raise ConfigError("scale factor must be >= 1")
    f = lambda n: max(1, int(round(n / factor)))  # noqa: E731
    return replace(base, conv1=f(base.conv1), conv2=f(base.conv2), dense1=f(base.dense1),
                   dense2=f(base.dense2), num_classes=num_classes)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 30
    seed: int = 42
    dropout_rate: float = 0.2

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")


# ---------------------------------------------------------------------------
# single layers


def conv2d_forward(x, filters, bias):
    """Valid cross-correlation with per-channel bias; accepts (C,H,W) or (B,C,H,W)."""
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or filters.ndim != 4 or x.shape[1] != filters.shape[1] or bias.shape != (filters.shape[0],):
        raise DimensionError(f"conv2d: input {x.shape}, filters {filters.shape}, bias {bias.shape}")
    k = filters.shape[2]
    if x.shape[2] < k or x.shape[3] < k:
        raise DimensionError("conv2d: input smaller than kernel")
    dt = np.result_type(x, filters)
    y = kernels.conv2d_forward(x.astype(dt, copy=False), filters.astype(dt, copy=False), bias.astype(dt, copy=False))
    return y[0] if single else y


def maxpool_forward(x, pool: int):
    """Non-overlapping ``pool`` x ``pool`` max pooling; returns (output, argmax)."""
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[2] < pool or x.shape[3] < pool:
        raise DimensionError("maxpool: input smaller than pool size")
    y, idx = kernels.maxpool_forward(x, pool)
    return (y[0], idx[0]) if single else (y, idx)


def relu(z):
    return np.maximum(z, 0)


def dense_forward(x, weights, bias, activation: str = "relu"):
    x = np.asarray(x)
    if weights.shape[1] != x.shape[-1] or bias.shape != (weights.shape[0],):
        raise DimensionError(f"dense: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    z = x @ weights.T + bias
    if activation == "relu":
        return relu(z)
    if activation == "linear":
        return z
    raise ConfigError(f"unknown activation {activation!r}")


def dropout_forward(x, rate: float, mode: str = "train", rng=None):
    """Inverted dropout; returns (output, mask). ``mask`` is None in infer mode."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError("dropout rate must lie in [0, 1)")
    x = np.asarray(x)
    if mode == "infer" or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Stable softmax and -ln p[label]. Works on one vector or a batch (mean loss)."""
    logits = np.asarray(logits)
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    probs = np.exp(logp)
    if logits.ndim == 1:
        return float(-logp[label]), probs
    label = np.asarray(label)
    return float(-logp[np.arange(len(label)), label].mean()), probs


# ---------------------------------------------------------------------------
# initialisation


def _glorot(rng, shape, fan_in, fan_out, dtype):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def _he(rng, shape, fan_in, dtype):
    lim = math.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def init_params(arch: Architecture, seed: int = 42, dtype=np.float32) -> dict:
    rng = np.random.default_rng(seed)
    shapes = arch.param_shapes()
    k2 = arch.kernel ** 2
    c_in = arch.input_shape[0]
    p = {}
    p["conv1.w"] = _glorot(rng, shapes["conv1.w"], c_in * k2, arch.conv1 * k2, dtype)
    p["conv2.w"] = _glorot(rng, shapes["conv2.w"], arch.conv1 * k2, arch.conv2 * k2, dtype)
    p["dense1.w"] = _he(rng, shapes["dense1.w"], arch.flat_dim, dtype)
    p["dense2.w"] = _he(rng, shapes["dense2.w"], arch.dense1, dtype)
    p["out.w"] = _glorot(rng, shapes["out.w"], arch.dense2, arch.num_classes, dtype)
    for name in ("conv1.b", "conv2.b", "dense1.b", "dense2.b", "out.b"):
        p[name] = np.zeros(shapes[name], dtype=dtype)
    return {n: p[n] for n in PARAM_NAMES}


# ---------------------------------------------------------------------------
# model


class CnnModel:
    def __init__(self, arch: Architecture, params: Optional[dict] = None, seed: int = 42,
                 dtype=np.float32, debug: bool = False):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        self.params = params if params is not None else init_params(arch, seed, self.dtype)
        self.debug = debug
        self._cache = None
        shapes = arch.param_shapes()
        for name in PARAM_NAMES:
            if tuple(self.params[name].shape) != tuple(shapes[name]):
                raise DimensionError(f"{name}: shape {self.params[name].shape} != {shapes[name]}")

    def astype(self, dtype) -> "CnnModel":
        return CnnModel(self.arch, {k: v.astype(dtype) for k, v in self.params.items()}, dtype=dtype,
                        debug=self.debug)

    def copy(self) -> "CnnModel":
        return CnnModel(self.arch, {k: v.copy() for k, v in self.params.items()}, dtype=self.dtype,
                        debug=self.debug)

    def _check(self, name, arr):
        if self.debug and not np.all(np.isfinite(arr)):
            raise TrainingDivergedError(f"non-finite values after {name}")

    def _prepare(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None, None]
        elif x.ndim == 3:
            x = x[:, None] if x.shape[0] != self.arch.input_shape[0] or x.shape[1:] != self.arch.input_shape[1:] else x[None]
        if x.shape[1:] != tuple(self.arch.input_shape):
            raise DimensionError(f"input shape {x.shape[1:]} != model input {self.arch.input_shape}")
        return x

    def forward(self, x, mode: str = "infer", rng=None, keep: bool = False) -> dict:
        """Run the network on a batch; returns every intermediate activation.

        With ``keep=True`` (implied by train mode) the activations are cached
        for :meth:`backward`.
        """
        p, a = self.params, self.arch
        x = self._prepare(x)
        act = {"input": x}
        act["conv1"] = kernels.conv2d_forward(x, p["conv1.w"], p["conv1.b"])
        act["pool1"], act["pool1.idx"] = kernels.maxpool_forward(act["conv1"], a.pool)
        act["conv2"] = kernels.conv2d_forward(act["pool1"], p["conv2.w"], p["conv2.b"])
        act["pool2"], act["pool2.idx"] = kernels.maxpool_forward(act["conv2"], a.pool)
        act["flatten"] = act["pool2"].reshape(len(x), -1)
        act["dense1"] = relu(act["flatten"] @ p["dense1.w"].T + p["dense1.b"])
        rate = a.dropout if mode == "train" else 0.0
        act["dropout"], act["dropout.mask"] = dropout_forward(act["dense1"], rate, mode, rng)
        act["dense2"] = relu(act["dropout"] @ p["dense2.w"].T + p["dense2.b"])
        act["logits"] = act["dense2"] @ p["out.w"].T + p["out.b"]
        self._check("forward", act["logits"])
        self._cache = act if (keep or mode == "train") else None
        return act

    def predict_proba(self, x):
        return softmax(self.forward(x)["logits"])

    def embed(self, x):
        """L7 (dense2, post-ReLU) activations in inference mode, shape (B, dense2)."""
        return self.forward(x, mode="infer")["dense2"]

    def loss(self, x, labels, mode="infer", rng=None) -> float:
        return softmax_cross_entropy(self.forward(x, mode, rng)["logits"], labels)[0]

    def backward(self, labels) -> dict:
        """Gradients of the mean cross-entropy w.r.t. every parameter, from the cached forward."""
        act = self._cache
        if act is None:
            raise StateError("backward() called without a cached forward pass")
        p, a = self.params, self.arch
        labels = np.asarray(labels)
        B = len(act["input"])
        if labels.shape != (B,):
            raise DimensionError("one label per batch item required")
        g = {}
        d = softmax(act["logits"])
        d[np.arange(B), labels] -= 1.0
        d /= B
        g["out.w"] = d.T @ act["dense2"]
        g["out.b"] = d.sum(axis=0)
        d = (d @ p["out.w"]) * (act["dense2"] > 0)
        g["dense2.w"] = d.T @ act["dropout"]
        g["dense2.b"] = d.sum(axis=0)
        d = d @ p["dense2.w"]
        if act["dropout.mask"] is not None:
            d = d * act["dropout.mask"]
        d = d * (act["dense1"] > 0)
        g["dense1.w"] = d.T @ act["flatten"]
        g["dense1.b"] = d.sum(axis=0)
        d = (d @ p["dense1.w"]).reshape(act["pool2"].shape)
        d = kernels.maxpool_backward(d, act["pool2.idx"], act["conv2"].shape)
        d, g["conv2.w"], g["conv2.b"] = kernels.conv2d_backward(act["pool1"], p["conv2.w"], d)
        d = kernels.maxpool_backward(d, act["pool1.idx"], act["conv1"].shape)
        _, g["conv1.w"], g["conv1.b"] = kernels.conv2d_backward(act["input"], p["conv1.w"], d)
        return {n: g[n].astype(self.dtype, copy=False) for n in PARAM_NAMES}

    def loss_and_grads(self, x, labels, rng=None, mode="train"):
        act = self.forward(x, mode=mode, rng=rng, keep=True)
        loss, _ = softmax_cross_entropy(act["logits"], labels)
        return loss, self.backward(labels)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        header = {"kind": "cnn", "architecture": self.arch.to_json(), "num_classes": self.arch.num_classes}
        write_container(path, MODEL_MAGIC, header, [(n, self.params[n]) for n in PARAM_NAMES])

    @classmethod
    def load(cls, path) -> "CnnModel":
        header, arrays = read_container(path, MODEL_MAGIC)
        try:
            arch = Architecture.from_json(header["architecture"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: bad architecture record ({exc})") from None
        shapes = arch.param_shapes()
        if [t["name"] for t in header["tensors"]] != list(PARAM_NAMES):
            raise FormatError(f"{path}: unexpected tensor list")
        for n in PARAM_NAMES:
            if tuple(arrays[n].shape) != tuple(shapes[n]):
                raise FormatError(f"{path}: {n} has shape {arrays[n].shape}, architecture needs {shapes[n]}")
        return cls(arch, arrays, dtype=np.float32)


def save_model(model: CnnModel, path) -> None:
    model.save(path)


def load_model(path) -> CnnModel:
    return CnnModel.load(path)


def extract_embedding(model: CnnModel, snippet) -> np.ndarray:
    values = getattr(snippet, "values", snippet)
    values = np.asarray(values)
    if values.shape != tuple(model.arch.input_shape[1:]):
        raise DimensionError(f"snippet shape {values.shape} != model input {model.arch.input_shape[1:]}")
    return model.embed(values[None, None])[0]


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: Optional[float] = None


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    @property
    def losses(self):
        return [e.train_loss for e in self.epochs]


def accuracy(model: CnnModel, x, y, batch_size: int = 64) -> float:
    if len(x) == 0:
        return float("nan")
    hits = 0
    for s in range(0, len(x), batch_size):
        logits = model.forward(x[s:s + batch_size])["logits"]
        hits += int((logits.argmax(axis=1) == y[s:s + batch_size]).sum())
    return hits / len(x)


def sgd_train(model: CnnModel, x, y, config: TrainConfig, val=None, callback=None) -> TrainHistory:
    """Minibatch SGD on mean categorical cross-entropy; mutates ``model`` in place.

    ``x`` is (N, 1, H, W), ``y`` integer labels. ``val`` is an optional
    ``(x_val, y_val)`` pair scored after each epoch. Shuffling and dropout
    masks both come from one generator seeded by ``config.seed``.
    """
    x = np.asarray(x, dtype=model.dtype)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ConfigError("empty training set")
    if y.min() < 0 or y.max() >= model.arch.num_classes:
        raise ConfigError(f"labels must lie in 0..{model.arch.num_classes - 1}")
    if model.arch.dropout != config.dropout_rate:
        model.arch = replace(model.arch, dropout=config.dropout_rate)
    rng = np.random.default_rng(config.seed)
    lr = model.dtype.type(config.learning_rate)
    history = TrainHistory()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x))
        total, hits = 0.0, 0
        for s in range(0, len(x), config.batch_size):
            idx = order[s:s + config.batch_size]
            act = model.forward(x[idx], mode="train", rng=rng)
            loss, probs = softmax_cross_entropy(act["logits"], y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch}, batch {s // config.batch_size}; "
                    f"learning rate {config.learning_rate} is probably too high"
                )
            grads = model.backward(y[idx])
            if config.learning_rate:
                for n in PARAM_NAMES:
                    model.params[n] -= lr * grads[n]
            total += loss * len(idx)
            hits += int((probs.argmax(axis=1) == y[idx]).sum())
        model._cache = None
        stats = EpochStats(epoch, total / len(x), hits / len(x))
        if val is not None and len(val[0]):
            stats.val_acc = accuracy(model, np.asarray(val[0], dtype=model.dtype), np.asarray(val[1]))
        history.epochs.append(stats)
        log.info("epoch %d loss %.4f acc %.3f val %s", epoch, stats.train_loss, stats.train_acc, stats.val_acc)
        if callback is not None:
            callback(stats)
    return history
