"""Feedforward price forecaster written directly in numpy.

One or two ReLU hidden layers and a linear output layer, trained on the mean
absolute error with Adam, Glorot-uniform initialisation and early stopping on
a validation set.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, EmptyDataset, LengthMismatch
from .market_data import ScalingParams

logger = logging.getLogger(__name__)

PARAM_NAMES = ("W_i", "b_1", "W_h", "b_2", "W_o", "b_o")
MODEL_FORMAT = 1


@dataclass(frozen=True)
class NetworkShape:
    n_in: int
    n1: int
    n2: int = 0
    n_out: int = 24

    def __post_init__(self):
        if self.n_in < 1 or self.n1 < 1 or self.n2 < 0 or self.n_out < 1:
            raise ValueError(f"invalid network shape {self}")

    @property
    def depth(self) -> int:
        return 2 if self.n2 else 1


@dataclass
class NetworkWeights:
    """Weight matrices are stored ``(fan_out, fan_in)``.

    ``W_h`` and ``b_2`` are ``None`` for a single hidden layer.
    """

    W_i: np.ndarray
    b_1: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray
    W_h: np.ndarray | None = None
    b_2: np.ndarray | None = None

    @property
    def shape(self) -> NetworkShape:
        n2 = 0 if self.W_h is None else self.W_h.shape[0]
        return NetworkShape(self.W_i.shape[1], self.W_i.shape[0], n2, self.W_o.shape[0])

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES if getattr(self, k) is not None}

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(**{k: v.copy() for k, v in self.params().items()})

    def save(self, path) -> None:
        np.savez(path, **self.params())

    @classmethod
    def load(cls, path) -> "NetworkWeights":
        with np.load(path) as data:
            return cls(**{k: data[k] for k in data.files})


def glorot_init(shape: NetworkShape, seed: int | np.random.Generator) -> NetworkWeights:
    rng = np.random.default_rng(seed)

    def layer(fan_out: int, fan_in: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    W_i = layer(shape.n1, shape.n_in)
    if shape.n2:
        W_h, b_2 = layer(shape.n2, shape.n1), np.zeros(shape.n2)
        W_o = layer(shape.n_out, shape.n2)
    else:
        W_h = b_2 = None
        W_o = layer(shape.n_out, shape.n1)
    return NetworkWeights(W_i, np.zeros(shape.n1), W_o, np.zeros(shape.n_out), W_h, b_2)


def forward(weights: NetworkWeights, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Evaluate the network on one input vector or a batch of row vectors."""
    x = np.asarray(x, dtype=float)
    a1 = x @ weights.W_i.T + weights.b_1
    z1 = np.maximum(a1, 0.0)
    cache = {"x": x, "a1": a1, "z1": z1}
    last = z1
    if weights.W_h is not None:
        a2 = z1 @ weights.W_h.T + weights.b_2
        last = np.maximum(a2, 0.0)
        cache.update(a2=a2, z2=last)
    pred = last @ weights.W_o.T + weights.b_o
    cache.update(last=last, pred=pred)
    return pred, cache


def mae_loss(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise LengthMismatch(f"prediction {pred.shape} vs target {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def loss_gradient(pred, target) -> np.ndarray:
    """Subgradient of :func:`mae_loss` with ``sign(0) = 0``."""
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise LengthMismatch(f"prediction {pred.shape} vs target {target.shape}")
    return np.sign(pred - target) / pred.size


def backward(weights: NetworkWeights, cache: dict, target) -> dict[str, np.ndarray]:
    """Gradients of the MAE of the cached forward pass w.r.t. every parameter.

    For a batch the loss is the mean over all samples and outputs.
    """
    x = cache["x"]
    batched = x.ndim == 2
    X = x if batched else x[None, :]
    delta = loss_gradient(cache["pred"], target)
    if not batched:
        delta = delta[None, :]
    last = cache["last"] if batched else cache["last"][None, :]
    z1 = cache["z1"] if batched else cache["z1"][None, :]
    a1 = cache["a1"] if batched else cache["a1"][None, :]

    grads = {"W_o": delta.T @ last, "b_o": delta.sum(axis=0)}
    back = delta @ weights.W_o
    if weights.W_h is not None:
        a2 = cache["a2"] if batched else cache["a2"][None, :]
        back = back * (a2 > 0)
        grads["W_h"] = back.T @ z1
        grads["b_2"] = back.sum(axis=0)
        back = back @ weights.W_h
    back = back * (a1 > 0)
    grads["W_i"] = back.T @ X
    grads["b_1"] = back.sum(axis=0)
    return grads


@dataclass(frozen=True)
class TrainSettings:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 500
    patience: int = 20
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError(f"invalid train settings {self}")

    def replace(self, **changes) -> "TrainSettings":
        return dataclasses.replace(self, **changes)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, weights: NetworkWeights) -> "AdamState":
        params = weights.params()
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(weights: NetworkWeights, grads: dict[str, np.ndarray], state: AdamState, settings: TrainSettings) -> None:
    """In-place bias-corrected Adam update of ``weights`` and ``state``."""
    state.t += 1
    b1, b2 = settings.beta1, settings.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = settings.learning_rate * (m / c1) / (np.sqrt(v / c2) + settings.eps)
        getattr(weights, name)[...] -= step


@dataclass
class TrainingTrace:
    val_mae: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def epochs(self) -> int:
        return len(self.val_mae)


def evaluate(weights: NetworkWeights, inputs: np.ndarray, targets: np.ndarray) -> float:
    return mae_loss(forward(weights, inputs)[0], targets)


def train(
    train_inputs: np.ndarray,
    train_targets: np.ndarray,
    val_inputs: np.ndarray,
    val_targets: np.ndarray,
    shape: NetworkShape,
    settings: TrainSettings,
    init: NetworkWeights | None = None,
) -> tuple[NetworkWeights, TrainingTrace]:
    """Mini-batch Adam with early stopping; returns the best-validation weights.

    Epochs are numbered from 1; validation MAE is logged after each epoch and
    training stops once ``patience`` consecutive epochs fail to improve it.
    ``init`` warm-starts from existing weights instead of Glorot draws.
    """
    if len(train_inputs) == 0 or len(val_inputs) == 0:
        raise EmptyDataset("training and validation sets must be nonempty")
    rng = np.random.default_rng(settings.seed)
    weights = init.copy() if init is not None else glorot_init(shape, rng)
    state = AdamState.zeros_like(weights)
    n = len(train_inputs)
    trace = TrainingTrace()
    best, best_val, stale = weights.copy(), np.inf, 0

    for epoch in range(1, settings.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, settings.batch_size):
            idx = order[start : start + settings.batch_size]
            _, cache = forward(weights, train_inputs[idx])
            adam_step(weights, backward(weights, cache, train_targets[idx]), state, settings)
        val = evaluate(weights, val_inputs, val_targets)
        trace.val_mae.append(val)
        if not np.isfinite(val):
            break
        if val < best_val:
            best, best_val, stale = weights.copy(), val, 0
            trace.best_epoch = epoch
        else:
            stale += 1
            if stale >= settings.patience:
                break
    logger.debug("stopped after %d epochs, best %d (val MAE %.4f)", trace.epochs, trace.best_epoch, best_val)
    return best, trace


def predict_day(
    weights: NetworkWeights,
    x: np.ndarray,
    scaler: ScalingParams,
    channels: Sequence[str] = ("price_B",),
) -> np.ndarray:
    """Forecast in currency units; output block ``k`` is ``channels[k]``.

    A dual-market net uses ``("price_B", "price_F")``: the first 24 outputs
    are market B, the last 24 market F.
    """
    pred, _ = forward(weights, x)
    blocks = np.split(pred, len(channels), axis=-1)
    return np.concatenate([scaler.invert(b, ch) for b, ch in zip(blocks, channels)], axis=-1)


@dataclass
class ForecastModel:
    """Trained weights plus what is needed to use them on raw data.

    Saved as one ``.npz``: the weight matrices under their own names and a
    JSON string ``meta`` holding the format version, network shape, one
    descriptor per input column, the output channels and the scaler.
    """

    weights: NetworkWeights
    scaler: ScalingParams
    inputs: list[str]
    outputs: tuple[str, ...] = ("price_B",)

    def __post_init__(self):
        shape = self.weights.shape
        if shape.n_in != len(self.inputs) or shape.n_out != 24 * len(self.outputs):
            raise LengthMismatch(f"network {shape} does not fit {len(self.inputs)} inputs and outputs {self.outputs}")

    def predict_day(self, x: np.ndarray) -> np.ndarray:
        return predict_day(self.weights, x, self.scaler, self.outputs)

    def save(self, path) -> None:
        meta = {
            "format": MODEL_FORMAT,
            "shape": dataclasses.asdict(self.weights.shape),
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "scaler": {"minimum": dict(self.scaler.minimum), "maximum": dict(self.scaler.maximum)},
        }
        np.savez(path, meta=np.array(json.dumps(meta)), **self.weights.params())

    @classmethod
    def load(cls, path) -> "ForecastModel":
        with np.load(path) as data:
            if "meta" not in data.files:
                raise DataError(f"{path}: no model metadata")
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != MODEL_FORMAT:
                raise DataError(f"{path}: unsupported model format {meta.get('format')!r}")
            weights = NetworkWeights(**{k: data[k] for k in data.files if k != "meta"})
        if dataclasses.asdict(weights.shape) != meta["shape"]:
            raise DataError(f"{path}: stored shape disagrees with the matrices")
        scaler = ScalingParams(meta["scaler"]["minimum"], meta["scaler"]["maximum"])
        return cls(weights, scaler, meta["inputs"], tuple(meta["outputs"]))
