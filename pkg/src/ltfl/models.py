"""Desk-scale loss models with hand-written gradients.

Every model works on a flat parameter vector so pruning, quantization and
aggregation never need to know the layer layout.  ``loss`` and ``gradient``
return batch means; a single sample is a batch of one.
"""
from __future__ import annotations

import numpy as np


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _as_batch(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    return x, y


class SoftmaxRegression:
    """Multinomial logistic regression, parameters laid out as ``[W (d x C), b (C)]``."""

    def __init__(self, n_features: int, n_classes: int, l2: float = 0.0):
        self.n_features = int(n_features)
        self.n_classes = int(n_classes)
        self.l2 = float(l2)
        self.dim = (self.n_features + 1) * self.n_classes

    def _unpack(self, w):
        d, c = self.n_features, self.n_classes
        return w[: d * c].reshape(d, c), w[d * c:]

    def init_params(self, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray:
        return scale * rng.standard_normal(self.dim)

    def logits(self, w, x):
        weights, bias = self._unpack(w)
        return np.atleast_2d(x) @ weights + bias

    def loss(self, w, x, y) -> float:
        x, y = _as_batch(x, y)
        logp = _log_softmax(self.logits(w, x))
        value = -logp[np.arange(len(y)), y].mean()
        return float(value + 0.5 * self.l2 * w @ w)

    def gradient(self, w, x, y) -> np.ndarray:
        x, y = _as_batch(x, y)
        probs = np.exp(_log_softmax(self.logits(w, x)))
        probs[np.arange(len(y)), y] -= 1.0
        probs /= len(y)
        grad = np.concatenate([(x.T @ probs).ravel(), probs.sum(axis=0)])
        return grad + self.l2 * w

    def predict(self, w, x) -> np.ndarray:
        return self.logits(w, x).argmax(axis=1)


class TwoLayerMLP:
    """``softmax(W2 tanh(W1 x + b1) + b2)`` with manual backpropagation.

    Parameter layout: ``[W1 (d x h), b1 (h), W2 (h x C), b2 (C)]``.
    """

    def __init__(self, n_features: int, n_hidden: int, n_classes: int, l2: float = 0.0):
        self.n_features = int(n_features)
        self.n_hidden = int(n_hidden)
        self.n_classes = int(n_classes)
        self.l2 = float(l2)
        d, h, c = self.n_features, self.n_hidden, self.n_classes
        self._sizes = [d * h, h, h * c, c]
        self.dim = sum(self._sizes)

    def _unpack(self, w):
        d, h, c = self.n_features, self.n_hidden, self.n_classes
        parts = np.split(w, np.cumsum(self._sizes)[:-1])
        return parts[0].reshape(d, h), parts[1], parts[2].reshape(h, c), parts[3]

    def init_params(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        # 1/sqrt(fan_in) weights; ``scale`` multiplies them.  Tiny weights leave tanh units symmetric.
        d, h, c = self.n_features, self.n_hidden, self.n_classes
        w1 = rng.standard_normal((d, h)) * np.sqrt(1.0 / d)
        w2 = rng.standard_normal((h, c)) * np.sqrt(1.0 / h)
        return scale * np.concatenate([w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(c)])

    def _forward(self, w, x):
        w1, b1, w2, b2 = self._unpack(w)
        hidden = np.tanh(x @ w1 + b1)
        return hidden, hidden @ w2 + b2

    def logits(self, w, x):
        return self._forward(w, np.atleast_2d(x))[1]

    def loss(self, w, x, y) -> float:
        x, y = _as_batch(x, y)
        _, logits = self._forward(w, x)
        logp = _log_softmax(logits)
        return float(-logp[np.arange(len(y)), y].mean() + 0.5 * self.l2 * w @ w)

    def gradient(self, w, x, y) -> np.ndarray:
        x, y = _as_batch(x, y)
        _, _, w2, _ = self._unpack(w)
        hidden, logits = self._forward(w, x)
        delta_out = np.exp(_log_softmax(logits))
        delta_out[np.arange(len(y)), y] -= 1.0
        delta_out /= len(y)
        delta_hidden = (delta_out @ w2.T) * (1.0 - hidden ** 2)
        grad = np.concatenate([
            (x.T @ delta_hidden).ravel(),
            delta_hidden.sum(axis=0),
            (hidden.T @ delta_out).ravel(),
            delta_out.sum(axis=0),
        ])
        return grad + self.l2 * w

    def predict(self, w, x) -> np.ndarray:
        return self.logits(w, x).argmax(axis=1)


def build_model(kind: str, n_features: int, n_classes: int, hidden: int = 32, l2: float = 0.0):
    kind = kind.lower()
    if kind in ("softmax", "logistic", "logreg"):
        return SoftmaxRegression(n_features, n_classes, l2=l2)
    if kind == "mlp":
        return TwoLayerMLP(n_features, hidden, n_classes, l2=l2)
    raise ValueError(f"unknown model kind {kind!r}")
