"""Per-segment depression classifier: a small feed-forward network.

Architecture is 17 -> H1 -> H2 -> 1 with rectifier hidden units, a logistic
output, and inverted dropout (surviving activations scaled by 1/(1-rate))
applied after each hidden activation during training only. Inputs are
z-normalized with statistics computed from the training set and stored in
the model, so held-out data never influences them.

Training minimizes binary cross-entropy by mini-batch SGD and is
deterministic given the config seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

_PROB_EPS = 1e-15  # keep predicted probabilities strictly inside (0, 1)


class SingleClassData(ValueError):
    """Training labels are all identical."""


@dataclass(frozen=True)
class TrainConfig:
    hidden1: int = 32
    hidden2: int = 16
    dropout: float = 0.5
    learning_rate: float = 0.01
    epochs: int = 300
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.hidden1 < 1 or self.hidden2 < 1:
            raise ValueError("hidden sizes must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Layer parameters plus the input normalization applied before them."""

    w1: np.ndarray  # (in, h1)
    b1: np.ndarray  # (h1,)
    w2: np.ndarray  # (h1, h2)
    b2: np.ndarray  # (h2,)
    w3: np.ndarray  # (h2, 1)
    b3: np.ndarray  # (1,)
    input_mean: np.ndarray  # (in,)
    input_std: np.ndarray  # (in,)

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "w3", "b3", "input_mean", "input_std"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if not np.isfinite(a).all():
                raise ValueError(f"{name} must be finite")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.w1.shape[1] != self.b1.shape[0] or self.w2.shape[0] != self.w1.shape[1]:
            raise ValueError("inconsistent layer shapes")
        if self.w3.shape != (self.w2.shape[1], 1):
            raise ValueError("output layer must map to a single unit")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in ("w1", "b1", "w2", "b2", "w3", "b3")}


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_backward(params, x, y, masks=None):
    """Mean binary cross-entropy and its parameter gradients on one batch.

    ``masks`` are pre-scaled inverted-dropout masks for the two hidden
    activations, or None for a deterministic pass.
    """
    z1 = x @ params["w1"] + params["b1"]
    a1 = np.maximum(z1, 0.0)
    a1d = a1 * masks[0] if masks is not None else a1
    z2 = a1d @ params["w2"] + params["b2"]
    a2 = np.maximum(z2, 0.0)
    a2d = a2 * masks[1] if masks is not None else a2
    z3 = a2d @ params["w3"] + params["b3"]
    p = np.clip(_sigmoid(z3[:, 0]), _PROB_EPS, 1.0 - _PROB_EPS)
    n = x.shape[0]
    loss = -float(np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))

    dz3 = ((p - y) / n)[:, None]
    grads = {"w3": a2d.T @ dz3, "b3": dz3.sum(axis=0)}
    da2 = dz3 @ params["w3"].T
    if masks is not None:
        da2 = da2 * masks[1]
    dz2 = da2 * (z2 > 0)
    grads["w2"] = a1d.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    da1 = dz2 @ params["w2"].T
    if masks is not None:
        da1 = da1 * masks[0]
    dz1 = da1 * (z1 > 0)
    grads["w1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


def loss_and_gradients(model: MlpModel, descriptors, labels):
    """Deterministic (dropout-off) loss and gradients; used for training-free
    inspection and gradient checking."""
    x = (np.asarray(descriptors, dtype=np.float64) - model.input_mean) / model.input_std
    y = np.asarray(labels, dtype=np.float64)
    return _forward_backward(model.params(), x, y)


def train_mlp(descriptors, labels, config: TrainConfig) -> MlpModel:
    """Fit the network on descriptor vectors with binary labels.

    Dropout masks are drawn only when the rate is positive, so training at
    rate 0 consumes the same random stream as a plain no-dropout loop.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("descriptors must be (n, dim) with one label per row")
    if x.shape[0] < 2:
        raise ValueError("need at least two training examples")
    if not np.isfinite(x).all():
        raise ValueError("descriptors must be finite")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    if len(np.unique(y)) < 2:
        raise SingleClassData("training labels are all identical")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    xn = (x - mean) / std

    rng = np.random.default_rng(config.seed)
    dim = x.shape[1]
    params = {
        "w1": rng.normal(0.0, np.sqrt(2.0 / dim), (dim, config.hidden1)),
        "b1": np.zeros(config.hidden1),
        "w2": rng.normal(0.0, np.sqrt(2.0 / config.hidden1), (config.hidden1, config.hidden2)),
        "b2": np.zeros(config.hidden2),
        "w3": rng.normal(0.0, np.sqrt(2.0 / config.hidden2), (config.hidden2, 1)),
        "b3": np.zeros(1),
    }

    n = xn.shape[0]
    keep = 1.0 - config.dropout
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = xn[idx], y[idx]
            masks = None
            if config.dropout > 0.0:
                masks = (
                    (rng.random((len(idx), config.hidden1)) < keep) / keep,
                    (rng.random((len(idx), config.hidden2)) < keep) / keep,
                )
            _, grads = _forward_backward(params, xb, yb, masks)
            for name, grad in grads.items():
                params[name] -= config.learning_rate * grad

    return MlpModel(**params, input_mean=mean, input_std=std)


def predict_probs(model: MlpModel, descriptors) -> np.ndarray:
    """Depression probabilities for a batch of descriptor vectors."""
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    xn = (x - model.input_mean) / model.input_std
    z1 = np.maximum(xn @ model.w1 + model.b1, 0.0)
    z2 = np.maximum(z1 @ model.w2 + model.b2, 0.0)
    p = _sigmoid((z2 @ model.w3 + model.b3)[:, 0])
    return np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)


def predict_segment(model: MlpModel, descriptor) -> tuple[float, int]:
    """Probability and binary vote for one descriptor; dropout is off and the
    vote is 1 only when the probability strictly exceeds 0.5."""
    prob = float(predict_probs(model, descriptor)[0])
    return prob, int(prob > 0.5)


def save_mlp(model: MlpModel, path: str | Path, config: TrainConfig | None = None):
    payload = {
        "format_version": FORMAT_VERSION,
        "shapes": {k: list(v.shape) for k, v in model.params().items()},
        "params": {k: v.tolist() for k, v in model.params().items()},
        "input_mean": model.input_mean.tolist(),
        "input_std": model.input_std.tolist(),
        "train_config": asdict(config) if config is not None else None,
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_mlp(path: str | Path) -> tuple[MlpModel, TrainConfig | None]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format: {payload.get('format_version')}")
    arrays = {k: np.array(v) for k, v in payload["params"].items()}
    model = MlpModel(
        **arrays,
        input_mean=np.array(payload["input_mean"]),
        input_std=np.array(payload["input_std"]),
    )
    config = TrainConfig(**payload["train_config"]) if payload["train_config"] else None
    return model, config
