"""Small numpy MLP for two-dimensional binary inputs.

Rectifier hidden layers, two output logits, softmax cross-entropy, and Adam.
Three uncertainty backbones are built from it: a single softmax network, a
deep ensemble of independently initialised networks, and MC-Dropout (one
network sampled with dropout left on at inference).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .core import PredictionRecord
from .errors import DegenerateData, InvalidParameter
from .rng import derive_rng

INPUT_DIM = 2
OUTPUT_DIM = 2
BACKBONE_KINDS = ("softmax", "deep_ensemble", "mc_dropout")


@dataclass(frozen=True)
class MlpConfig:
    hidden_sizes: tuple[int, ...] = (64, 32)
    dropout_rate: float = 0.0
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(h) for h in self.hidden_sizes)
        if not sizes or any(h < 1 for h in sizes):
            raise InvalidParameter(f"hidden_sizes must be non-empty positive counts, got {sizes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidParameter(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.activation != "relu":
            raise InvalidParameter("only the relu activation is supported")
        object.__setattr__(self, "hidden_sizes", sizes)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (INPUT_DIM, *self.hidden_sizes, OUTPUT_DIM)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 504
    learning_rate: float = 0.025
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidParameter(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidParameter(f"batch_size must be >= 1, got {self.batch_size}")
        # zero is allowed so a no-update run can be checked against the initialisation
        if not self.learning_rate >= 0:
            raise InvalidParameter(f"learning_rate must be non-negative, got {self.learning_rate}")


@dataclass
class MlpModel:
    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    training_seed: int = 0

    def __post_init__(self):
        sizes = self.config.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise InvalidParameter("layer count does not match the configuration")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise InvalidParameter(f"layer {k} has shape {w.shape}/{b.shape}, "
                                       f"expected {(sizes[k], sizes[k + 1])}")

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(self.config, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.training_seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def to_dict(self) -> dict:
        return {
            "config": {"mlp": asdict(self.config)},
            "training_seed": self.training_seed,
            "layers": [{"shape": list(w.shape), "weights": w.ravel().tolist(), "bias": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        mlp = d["config"]["mlp"]
        config = MlpConfig(tuple(mlp["hidden_sizes"]), float(mlp["dropout_rate"]),
                           mlp.get("activation", "relu"))
        weights = [np.array(layer["weights"], dtype=float).reshape(layer["shape"]) for layer in d["layers"]]
        biases = [np.array(layer["bias"], dtype=float) for layer in d["layers"]]
        return cls(config, weights, biases, int(d.get("training_seed", 0)))

    @classmethod
    def from_json(cls, text: str) -> "MlpModel":
        return cls.from_dict(json.loads(text))


def init_model(config: MlpConfig, seed: int) -> MlpModel:
    """Glorot-uniform weights and zero biases."""
    rng = derive_rng(seed, "init")
    sizes = config.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(config, weights, biases, seed)


def dropout_masks(config: MlpConfig, n_rows: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Inverted-dropout masks, one per hidden layer, with entries 0 or 1/(1-rate)."""
    rate = config.dropout_rate
    keep = 1.0 - rate
    return [(rng.random((n_rows, h)) >= rate) / keep for h in config.hidden_sizes]


def _forward(model: MlpModel, x: np.ndarray, masks=None):
    """Return logits and the per-layer cache needed by backprop."""
    a = x
    cache = []
    n_hidden = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        if k == n_hidden:
            cache.append((a, None, None))
            return z, cache
        h = np.maximum(z, 0.0)
        m = None if masks is None else masks[k]
        if m is not None:
            h = h * m
        cache.append((a, z, m))
        a = h
    raise AssertionError("unreachable")


def forward_batch(model: MlpModel, x, masks=None) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).reshape(-1, INPUT_DIM)
    logits, _ = _forward(model, x, masks)
    return logits, softmax(logits, axis=1)


def forward(model: MlpModel, x, dropout_draw: np.random.Generator | None = None):
    """One pass for a single input.

    With ``dropout_draw`` the hidden units are masked using that generator;
    without it the pass is deterministic.
    """
    x = np.asarray(x, dtype=float).reshape(1, INPUT_DIM)
    masks = None
    if dropout_draw is not None:
        masks = dropout_masks(model.config, 1, dropout_draw)
    logits, probs = forward_batch(model, x, masks)
    return logits[0], probs[0]


def cross_entropy(model: MlpModel, x, y, masks=None) -> float:
    logits, _ = _forward(model, np.asarray(x, float).reshape(-1, INPUT_DIM), masks)
    y = np.asarray(y, np.int64)
    return float(-np.mean(log_softmax(logits, axis=1)[np.arange(len(y)), y]))


def gradients(model: MlpModel, x, y, masks=None) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy and its gradient, ordered like ``model.params``."""
    x = np.asarray(x, float).reshape(-1, INPUT_DIM)
    y = np.asarray(y, np.int64)
    n = len(y)
    logits, cache = _forward(model, x, masks)
    logp = log_softmax(logits, axis=1)
    loss = float(-np.mean(logp[np.arange(n), y]))
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: list[np.ndarray] = [None] * (2 * len(model.weights))
    for k in range(len(model.weights) - 1, -1, -1):
        a_in, _, _ = cache[k]
        grads[2 * k] = a_in.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k == 0:
            break
        _, z_prev, m_prev = cache[k - 1]
        delta = delta @ model.weights[k].T
        if m_prev is not None:
            delta = delta * m_prev
        delta = delta * (z_prev > 0)
    return loss, grads


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(dataset, mlp_cfg: MlpConfig, train_cfg: TrainConfig, return_history: bool = False):
    """Mini-batch Adam on mean cross-entropy.

    The trailing partial batch of each epoch is kept. Dropout, when configured,
    is active during training.
    """
    x = np.asarray(dataset.x, float)
    y = np.asarray(dataset.y, np.int64)
    if len(np.unique(y)) < 2:
        raise DegenerateData("training set contains a single class")
    model = init_model(mlp_cfg, train_cfg.seed)
    shuffle_rng = derive_rng(train_cfg.seed, "shuffle")
    drop_rng = derive_rng(train_cfg.seed, "dropout")
    params = model.params
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps, lr = train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_eps, train_cfg.learning_rate
    step = 0
    history = []
    for _ in range(train_cfg.epochs):
        for idx in _batches(len(y), train_cfg.batch_size, shuffle_rng):
            masks = None
            if mlp_cfg.dropout_rate > 0:
                masks = dropout_masks(mlp_cfg, len(idx), drop_rng)
            _, grads = gradients(model, x[idx], y[idx], masks)
            step += 1
            corr1 = 1.0 - b1 ** step
            corr2 = 1.0 - b2 ** step
            for p, g, mk, vk in zip(params, grads, m, v):
                mk *= b1
                mk += (1.0 - b1) * g
                vk *= b2
                vk += (1.0 - b2) * g * g
                p -= lr * (mk / corr1) / (np.sqrt(vk / corr2) + eps)
        if return_history:
            history.append(cross_entropy(model, x, y))
    return (model, history) if return_history else model


def grad_check(model: MlpModel, batch, epsilon: float = 1e-5, n_coords: int = 50, seed: int = 0,
               grad_fn: Callable | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Compares ``n_coords`` randomly chosen parameter coordinates. The relative
    error is ``|analytic - numeric| / max(|numeric|, 1e-6)``; the floor keeps
    coordinates with vanishing gradient from dominating through round-off.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise InvalidParameter(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    x = np.asarray(batch.x, float)
    y = np.asarray(batch.y, np.int64)
    grad_fn = grad_fn or (lambda mdl, xx, yy: gradients(mdl, xx, yy)[1])
    analytic = np.concatenate([g.ravel() for g in grad_fn(model, x, y)])
    probe = model.copy()
    params = probe.params
    sizes = [p.size for p in params]
    offsets = np.cumsum([0] + sizes)
    total = offsets[-1]
    rng = derive_rng(seed, "grad-check")
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    worst = 0.0
    for c in coords:
        k = int(np.searchsorted(offsets, c, side="right") - 1)
        flat = params[k].reshape(-1)
        j = c - offsets[k]
        orig = flat[j]
        flat[j] = orig + epsilon
        plus = cross_entropy(probe, x, y)
        flat[j] = orig - epsilon
        minus = cross_entropy(probe, x, y)
        flat[j] = orig
        numeric = (plus - minus) / (2.0 * epsilon)
        err = abs(analytic[c] - numeric) / max(abs(numeric), 1e-6)
        worst = max(worst, err)
    return float(worst)


@dataclass
class UqBackbone:
    kind: str
    models: list[MlpModel]
    n_mc: int = 0
    inference_seed: int = 0
    label: str = field(default="")

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise InvalidParameter(f"unknown backbone kind {self.kind!r}")
        if not self.models:
            raise InvalidParameter("backbone needs at least one model")
        if self.kind == "deep_ensemble" and len(self.models) < 2:
            raise InvalidParameter("a deep ensemble needs at least two models")
        if self.kind != "deep_ensemble" and len(self.models) != 1:
            raise InvalidParameter(f"{self.kind} backbone takes exactly one model")
        if self.kind == "mc_dropout" and self.n_mc < 1:
            raise InvalidParameter("mc_dropout needs n_mc >= 1")

    @property
    def n_members(self) -> int:
        if self.kind == "deep_ensemble":
            return len(self.models)
        return self.n_mc if self.kind == "mc_dropout" else 1


def predict_members(backbone: UqBackbone, x, ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Member logits and probabilities with shape ``(n, n_members, 2)``.

    MC-Dropout masks for a sample come from a stream keyed by
    ``(inference_seed, sample_id)``, so a sample's members do not depend on
    which other samples share the batch.
    """
    x = np.asarray(x, float).reshape(-1, INPUT_DIM)
    n = len(x)
    if backbone.kind in ("softmax", "deep_ensemble"):
        logits = np.stack([forward_batch(m, x)[0] for m in backbone.models], axis=1)
        return logits, softmax(logits, axis=2)
    model = backbone.models[0]
    k = backbone.n_mc
    per_layer = [[] for _ in model.config.hidden_sizes]
    for sid in ids:
        rng = derive_rng(backbone.inference_seed, "mc-dropout", sid)
        for layer, mask in zip(per_layer, dropout_masks(model.config, k, rng)):
            layer.append(mask)
    masks = [np.concatenate(layer, axis=0) for layer in per_layer]
    logits, _ = forward_batch(model, np.repeat(x, k, axis=0), masks)
    logits = logits.reshape(n, k, OUTPUT_DIM)
    return logits, softmax(logits, axis=2)


def predict(backbone: UqBackbone, x, sample_id: str = "0") -> PredictionRecord:
    logits, probs = predict_members(backbone, np.asarray(x, float).reshape(1, INPUT_DIM), [sample_id])
    return PredictionRecord.from_arrays(sample_id, probs[0], logits[0])


def predict_records(backbone: UqBackbone, x, ids: Sequence[str]) -> list[PredictionRecord]:
    logits, probs = predict_members(backbone, x, ids)
    return [PredictionRecord.from_arrays(sid, p, lg) for sid, p, lg in zip(ids, probs, logits)]
