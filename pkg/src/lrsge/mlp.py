"""Small fully connected classifier trained with plain mini-batch SGD.

Weights are stored as ``(fan_in, fan_out)`` matrices; hidden layers use
ReLU (or identity), the output layer is a softmax with mean cross-entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


@dataclass
class MLP:
    weights: list
    biases: list
    hidden_activation: str = "relu"

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self):
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.hidden_activation)

    def parameters(self):
        """Flat list of all parameter arrays (weights then bias per layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_mlp(layer_sizes, rng, hidden_activation="relu") -> MLP:
    """Glorot-uniform weights, zero biases."""
    if len(layer_sizes) < 2:
        raise ValueError("need at least input and output sizes")
    if hidden_activation not in ("relu", "identity"):
        raise ValueError(f"unknown activation {hidden_activation!r}")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        r = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-r, r, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases, hidden_activation)


def _check(model, X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.weights[0].shape[0]:
        raise ShapeError(f"input shape {X.shape} does not match input size {model.weights[0].shape[0]}")
    if len(X) == 0:
        raise ShapeError("empty batch")
    if y is not None:
        y = np.asarray(y)
        if y.shape != (len(X),):
            raise ShapeError(f"labels shape {y.shape} does not match batch size {len(X)}")
        n_out = model.weights[-1].shape[1]
        if y.min() < 0 or y.max() >= n_out:
            raise ShapeError(f"labels must lie in [0, {n_out})")
    return X, y


def _forward(model, X):
    acts, pre = [X], []
    a = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        if i < last and model.hidden_activation == "relu":
            a = np.maximum(z, 0.0)
        else:
            a = z
        acts.append(a)
    return acts, pre


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict_logits(model: MLP, X) -> np.ndarray:
    X, _ = _check(model, X)
    return _forward(model, X)[0][-1]


def loss_and_accuracy(model: MLP, X, y):
    X, y = _check(model, X, y)
    logp = _log_softmax(_forward(model, X)[0][-1])
    loss = -logp[np.arange(len(y)), y].mean()
    acc = float(np.mean(logp.argmax(axis=1) == y))
    return float(loss), acc


def mlp_forward_backward(model: MLP, batch):
    """Mean cross-entropy of ``batch = (X, y)`` and its exact gradients.

    Returns ``(loss, (weight_grads, bias_grads))``.
    """
    X, y = _check(model, *batch)
    acts, pre = _forward(model, X)
    logp = _log_softmax(acts[-1])
    n = len(y)
    loss = -logp[np.arange(n), y].mean()

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gw, gb = [None] * len(model.weights), [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            if model.hidden_activation == "relu":
                delta = delta * (pre[i - 1] > 0)
    return float(loss), (gw, gb)


def sgd_step(model: MLP, grads, lr: float) -> None:
    gw, gb = grads
    for w, b, dw, db in zip(model.weights, model.biases, gw, gb):
        w -= lr * dw
        b -= lr * db
