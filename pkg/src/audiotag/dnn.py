"""Pyramid MLP tagger: sigmoid outputs trained as a multi-label regression.

The canonical topology is 2208 -> 1000 -> 500 -> 7 with ReLU hidden units
(the hidden nonlinearity is a config option), mean-squared-error loss over
mini-batches, SGD with classical momentum, and dropout applied as raw
Bernoulli masks during training with a (1 - rho) weight discount at
inference time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .audio_io import TAGS
from .errors import ConfigError, DataError, ShapeError
from .features import FeatureMatrix, NormStats, build_context_windows, estimate_noise, normalize

logger = logging.getLogger(__name__)

HIDDEN_ACTIVATIONS = ("relu", "sigmoid")


def tags_to_vector(tags: Iterable[str]) -> np.ndarray:
    """Binary reference tag vector in fixed alphabetical order b,c,f,m,o,p,v."""
    tag_set = set(tags)
    return np.array([1.0 if t in tag_set else 0.0 for t in TAGS])


@dataclass
class MlpParams:
    """Layer weights and biases; weights[l] has shape (out_units, in_units)."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"

    def __post_init__(self) -> None:
        expected = list(zip(self.layer_sizes[1:], self.layer_sizes[:-1]))
        shapes = [w.shape for w in self.weights]
        if shapes != expected:
            raise ShapeError(f"weight shapes {shapes} do not chain as {expected}")
        for b, size in zip(self.biases, self.layer_sizes[1:]):
            if b.shape != (size,):
                raise ShapeError(f"bias shape {b.shape} does not match layer size {size}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unknown hidden activation {self.hidden_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            hidden_activation=self.hidden_activation,
        )


@dataclass
class TrainConfig:
    """Hyperparameters; the defaults reproduce the canonical configuration."""

    learning_rate: float = 0.005
    momentum: float = 0.9
    batch_size: int = 3
    dropout_input: float = 0.1
    dropout_hidden: float = 0.2
    epochs: int = 30
    seed: int = 0
    hidden_sizes: tuple[int, ...] = (1000, 500)
    hidden_activation: str = "relu"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for rho in (self.dropout_input, self.dropout_hidden):
            if not 0.0 <= rho < 1.0:
                raise ConfigError(f"dropout rate {rho} outside [0, 1)")
        if not self.hidden_sizes:
            raise ConfigError("at least one hidden layer is required")
        # pyramid shape: hidden sizes must shrink (or hold) toward the output
        if any(a < b for a, b in zip(self.hidden_sizes, self.hidden_sizes[1:])):
            raise ConfigError(f"hidden sizes {self.hidden_sizes} are not non-increasing")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unknown hidden activation {self.hidden_activation!r}")


@dataclass
class ForwardCache:
    """Intermediate values of one forward pass, reused by backprop."""

    masked_input: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]  # post-mask hidden activations
    input_mask: np.ndarray | None
    hidden_masks: list[np.ndarray | None]
    outputs: np.ndarray


def init_mlp(
    layer_sizes: Sequence[int], seed: int, hidden_activation: str = "relu"
) -> MlpParams:
    """Uniform Glorot initialization: W ~ U(+-sqrt(6/(fan_in+fan_out))), b = 0."""
    if any(s < 1 for s in layer_sizes):
        raise ConfigError(f"layer sizes must be >= 1, got {list(layer_sizes)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(
        layer_sizes=list(layer_sizes),
        weights=weights,
        biases=biases,
        hidden_activation=hidden_activation,
    )


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _hidden_act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return sigmoid(z)


def _hidden_act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    s = sigmoid(z)
    return s * (1.0 - s)


def forward(
    params: MlpParams,
    inputs: np.ndarray,
    mode: str = "inference",
    dropout_input: float = 0.0,
    dropout_hidden: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network; hidden layers use the configured activation, output sigmoid.

    ``mode="train"`` multiplies input units by Bernoulli(1 - dropout_input)
    masks and hidden activations by Bernoulli(1 - dropout_hidden) masks drawn
    from ``rng``.  ``mode="inference"`` applies no masks and expects weights
    already discounted by scale_for_inference.
    """
    x = np.asarray(inputs, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != params.layer_sizes[0]:
        raise ShapeError(
            f"input dimension {x.shape[1]} does not match layer size {params.layer_sizes[0]}"
        )
    if mode not in ("train", "inference"):
        raise ConfigError(f"unknown forward mode {mode!r}")

    input_mask = None
    hidden_masks: list[np.ndarray | None] = []
    if mode == "train" and (dropout_input > 0 or dropout_hidden > 0):
        if rng is None:
            raise ConfigError("train-mode dropout requires an rng")
        if dropout_input > 0:
            input_mask = (rng.random(x.shape) >= dropout_input).astype(np.float64)
            x = x * input_mask

    pre_activations: list[np.ndarray] = []
    activations: list[np.ndarray] = []
    h = x
    for layer in range(params.n_layers - 1):
        z = h @ params.weights[layer].T + params.biases[layer]
        pre_activations.append(z)
        a = _hidden_act(z, params.hidden_activation)
        mask = None
        if mode == "train" and dropout_hidden > 0:
            mask = (rng.random(a.shape) >= dropout_hidden).astype(np.float64)
            a = a * mask
        hidden_masks.append(mask)
        activations.append(a)
        h = a
    z_out = h @ params.weights[-1].T + params.biases[-1]
    pre_activations.append(z_out)
    outputs = sigmoid(z_out)

    cache = ForwardCache(
        masked_input=x,
        pre_activations=pre_activations,
        activations=activations,
        input_mask=input_mask,
        hidden_masks=hidden_masks,
        outputs=outputs,
    )
    return (outputs[0] if squeeze else outputs), cache


def mmse_loss(pred: np.ndarray, ref: np.ndarray) -> float:
    """Mean over the batch of the squared L2 distance between tag vectors."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    ref = np.atleast_2d(np.asarray(ref, dtype=np.float64))
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction batch {pred.shape} != reference batch {ref.shape}")
    return float(np.sum((pred - ref) ** 2, axis=1).mean())


def backprop(
    params: MlpParams, cache: ForwardCache, refs: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact gradients of the batch MMSE loss w.r.t. every weight and bias.

    Dropout masks recorded in the cache are treated as constants, so
    gradients through masked units are zero.
    """
    refs = np.atleast_2d(np.asarray(refs, dtype=np.float64))
    outputs = cache.outputs
    if refs.shape != outputs.shape:
        raise ShapeError(f"reference batch {refs.shape} != output batch {outputs.shape}")
    batch = outputs.shape[0]

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * params.n_layers  # type: ignore[list-item]
    delta = (2.0 / batch) * (outputs - refs) * outputs * (1.0 - outputs)
    for layer in range(params.n_layers - 1, -1, -1):
        below = cache.activations[layer - 1] if layer > 0 else cache.masked_input
        grads[layer] = (delta.T @ below, delta.sum(axis=0))
        if layer > 0:
            delta = delta @ params.weights[layer]
            mask = cache.hidden_masks[layer - 1]
            if mask is not None:
                delta = delta * mask
            delta = delta * _hidden_act_grad(
                cache.pre_activations[layer - 1], params.hidden_activation
            )
    return grads


def init_velocity(params: MlpParams) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(params.weights, params.biases)]


def sgd_momentum_step(
    params: MlpParams,
    grads: list[tuple[np.ndarray, np.ndarray]],
    velocity: list[tuple[np.ndarray, np.ndarray]],
    learning_rate: float,
    momentum: float,
) -> tuple[MlpParams, list[tuple[np.ndarray, np.ndarray]]]:
    """Classical (heavy-ball) momentum update, in place.

    velocity <- momentum * velocity - lr * gradient; params <- params + velocity.
    With momentum 0 this reduces to plain gradient descent.
    """
    new_velocity = []
    for layer, (dw, db) in enumerate(grads):
        vw, vb = velocity[layer]
        vw = momentum * vw - learning_rate * dw
        vb = momentum * vb - learning_rate * db
        params.weights[layer] += vw
        params.biases[layer] += vb
        new_velocity.append((vw, vb))
    return params, new_velocity


def scale_for_inference(params: MlpParams, dropout_input: float, dropout_hidden: float) -> MlpParams:
    """Discount weights by (1 - rho) to replace the training-time masks.

    The first layer consumes dropped inputs, so it scales by (1 - rho_in);
    every layer fed by a hidden layer scales by (1 - rho_hidden).  Biases are
    unchanged.
    """
    scaled = params.copy()
    scaled.weights[0] *= 1.0 - dropout_input
    for layer in range(1, scaled.n_layers):
        scaled.weights[layer] *= 1.0 - dropout_hidden
    return scaled


def train_params(
    params: MlpParams,
    windows: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
) -> list[float]:
    """Run seeded mini-batch SGD on existing parameters; returns per-epoch losses."""
    windows = np.asarray(windows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if windows.ndim != 2 or len(windows) == 0:
        raise DataError("training set must be a nonempty 2-D array of windows")
    if len(labels) != len(windows):
        raise ShapeError(f"{len(labels)} labels for {len(windows)} windows")

    rng = np.random.default_rng(config.seed + 1)
    velocity = init_velocity(params)
    n = len(windows)
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            preds, cache = forward(
                params,
                windows[batch],
                mode="train",
                dropout_input=config.dropout_input,
                dropout_hidden=config.dropout_hidden,
                rng=rng,
            )
            batch_losses.append(mmse_loss(preds, labels[batch]))
            grads = backprop(params, cache, labels[batch])
            params, velocity = sgd_momentum_step(
                params, grads, velocity, config.learning_rate, config.momentum
            )
        epoch_losses.append(float(np.mean(batch_losses)))
        logger.info("epoch %d/%d: training loss %.6f", epoch + 1, config.epochs, epoch_losses[-1])
    return epoch_losses


def train(windows: np.ndarray, labels: np.ndarray, config: TrainConfig) -> MlpParams:
    """Initialize and train the tagger; deterministic given (data, config, seed)."""
    windows = np.asarray(windows, dtype=np.float64)
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if windows.size == 0:
        raise DataError("training set is empty")
    layer_sizes = [windows.shape[1], *config.hidden_sizes, labels.shape[1]]
    params = init_mlp(layer_sizes, config.seed, config.hidden_activation)
    train_params(params, windows, labels, config)
    return params


def predict_chunk(
    params: MlpParams,
    features: FeatureMatrix,
    stats: NormStats,
    noise_frames: int = 6,
    width: int = 91,
) -> np.ndarray:
    """Chunk-level tag probabilities: mean sigmoid output over context windows.

    ``params`` must already be inference-scaled.  Features are normalized
    before noise estimation and windowing.
    """
    normed = normalize(features, stats)
    noise = estimate_noise(normed, noise_frames)
    windows = build_context_windows(normed, noise, width)
    stacked = np.stack([w.values for w in windows])
    outputs, _ = forward(params, stacked, mode="inference")
    return outputs.mean(axis=0)
