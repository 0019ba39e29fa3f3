"""Federated learning primitives: local gradients, weighted aggregation, updates.

Models are flat ``numpy`` vectors.  Checkpoints are flat little-endian float64
vectors behind a 24-byte header (8-byte magic, uint64 dimension, uint64 round).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"LTFLCKPT"
_HEADER = struct.Struct("<8sQQ")


class EmptyRoundError(RuntimeError):
    """Raised when no packet reached the server in a round."""


class DivergenceError(FloatingPointError):
    """Raised when a gradient or model contains non-finite entries."""


@dataclass
class DeviceDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if len(self.labels) < 1:
            raise ValueError("a device dataset needs at least one sample")
        if self.features.shape[0] != len(self.labels):
            raise ValueError("features and labels disagree on the sample count")

    @property
    def count(self) -> int:
        return len(self.labels)

    def __len__(self):
        return self.count


def local_gradient(weights: np.ndarray, data: DeviceDataset, loss) -> np.ndarray:
    """Full-batch mean gradient of ``loss`` over one device's samples."""
    grad = loss.gradient(weights, data.features, data.labels)
    if grad.shape != weights.shape:
        raise ValueError(f"gradient has shape {grad.shape}, model has {weights.shape}")
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite local gradient; training diverged")
    return grad


def global_loss(weights: np.ndarray, datasets: Sequence[DeviceDataset], loss) -> float:
    """Sample-count weighted mean of the per-device losses."""
    if not datasets:
        raise ValueError("need at least one device")
    counts = np.array([d.count for d in datasets], dtype=float)
    losses = np.array([loss.loss(weights, d.features, d.labels) for d in datasets])
    return float(counts @ losses / counts.sum())


def aggregate(packets: Iterable[tuple[float, int, np.ndarray]]) -> np.ndarray:
    """Weighted mean ``sum(N a g) / sum(N a)`` over received packets.

    Each packet is ``(n_samples, alpha, gradient)`` where pruned coordinates of
    ``gradient`` are already zero-filled to full length.
    """
    total = None
    weight = 0.0
    for n_samples, alpha, grad in packets:
        if not alpha:
            continue
        w = float(n_samples) * alpha
        total = w * np.asarray(grad, dtype=float) if total is None else total + w * grad
        weight += w
    if total is None or weight <= 0:
        raise EmptyRoundError("no gradient was received this round")
    return total / weight


def apply_update(weights: np.ndarray, agg_gradient: np.ndarray, eta: float) -> np.ndarray:
    if not eta > 0:
        raise ValueError("learning rate must be positive")
    new = weights - eta * agg_gradient
    if not np.all(np.isfinite(new)):
        raise DivergenceError("non-finite model after update")
    return new


def accuracy(weights: np.ndarray, model, features: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(model.predict(weights, features) == labels))


def save_checkpoint(path, weights: np.ndarray, round_index: int) -> None:
    weights = np.ascontiguousarray(weights, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, weights.size, int(round_index)))
        fh.write(weights.tobytes())


def load_checkpoint(path) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    magic, dim, round_index = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    body = raw[_HEADER.size:]
    if len(body) != 8 * dim:
        raise ValueError(f"{path}: expected {dim} weights, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").copy(), int(round_index)
