"""Synthetic and file-backed datasets, and their split across devices."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .fl import DeviceDataset


def make_blobs(n_samples: int, n_features: int, n_classes: int, rng: np.random.Generator,
               center_scale: float = 1.0, cluster_std: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Balanced isotropic Gaussian clusters, one per class.

    Class centres are drawn from ``N(0, center_scale**2 I)``.  Labels are
    shuffled so any prefix of the data is roughly balanced.
    """
    centers = center_scale * rng.standard_normal((n_classes, n_features))
    labels = np.arange(n_samples) % n_classes
    rng.shuffle(labels)
    features = centers[labels] + cluster_std * rng.standard_normal((n_samples, n_features))
    return features, labels.astype(np.int64)


def load_delimited(path, delimiter: str = ",", skip_header: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Read ``label, f1, f2, ...`` rows; labels must be non-negative integers.

    Blank lines and lines starting with ``#`` are ignored.
    """
    rows = []
    lines = Path(path).read_text().splitlines()
    if skip_header and lines:
        lines = lines[1:]
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f for f in line.split(delimiter)] if delimiter else line.split()
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no samples")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise ValueError(f"{path}: rows have differing widths {sorted(width)}")
    table = np.asarray(rows)
    labels = table[:, 0]
    if np.any(labels < 0) or np.any(labels != np.round(labels)):
        raise ValueError(f"{path}: labels must be non-negative integers")
    return table[:, 1:], labels.astype(np.int64)


def train_test_split(features, labels, test_fraction: float, rng: np.random.Generator):
    order = rng.permutation(len(labels))
    n_test = int(round(test_fraction * len(labels)))
    test, train = order[:n_test], order[n_test:]
    return (features[train], labels[train]), (features[test], labels[test])


def device_sizes(n_available: int, n_devices: int, rng: np.random.Generator,
                 size_range=(400, 600), scale: str = "fit") -> np.ndarray:
    """Per-device sample counts drawn uniformly from ``size_range``.

    ``scale="fit"`` rescales the draws so they sum to ``n_available`` (every
    sample is used); ``scale="cap"`` rescales only when the draws would exceed
    the data; ``scale="none"`` requires that they fit.
    """
    if n_available < n_devices:
        raise ValueError(f"dataset has {n_available} samples, fewer than {n_devices} devices")
    lo, hi = size_range
    raw = rng.uniform(lo, hi, size=n_devices)
    total = raw.sum()
    if scale == "fit" or (scale == "cap" and total > n_available):
        raw = raw * n_available / total
    elif scale not in ("cap", "none"):
        raise ValueError(f"unknown scale mode {scale!r}")
    sizes = np.maximum(np.floor(raw).astype(int), 1)
    if scale == "fit":
        # Hand out the floor() remainder so the union is the whole dataset.
        short = n_available - sizes.sum()
        order = np.argsort(-(raw - np.floor(raw)), kind="stable")
        for i in range(int(short)):
            sizes[order[i % n_devices]] += 1
    while sizes.sum() > n_available:
        sizes[np.argmax(sizes)] -= 1
    return sizes


def partition_data(features, labels, n_devices: int, rng: np.random.Generator, mode: str = "iid",
                   alpha: float = 0.5, size_range=(400, 600), scale: str = "fit") -> list[DeviceDataset]:
    """Split a labelled dataset into disjoint per-device datasets.

    ``mode="iid"`` shuffles and slices.  ``mode="dirichlet"`` draws each
    device's class proportions from ``Dir(alpha)`` and fills its quota from
    the class pools; if a pool runs dry the remaining quota is spread over the
    classes that still have samples, in proportion to the device's weights.
    """
    labels = np.asarray(labels)
    n = len(labels)
    sizes = device_sizes(n, n_devices, rng, size_range, scale)
    if mode == "iid":
        order = rng.permutation(n)
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        parts = [order[bounds[i]:bounds[i + 1]] for i in range(n_devices)]
    elif mode == "dirichlet":
        if not alpha > 0:
            raise ValueError("Dirichlet concentration must be positive")
        parts = _dirichlet_parts(labels, sizes, alpha, rng)
    else:
        raise ValueError(f"unknown partition mode {mode!r}")
    return [DeviceDataset(features[idx], labels[idx]) for idx in parts]


def _dirichlet_parts(labels, sizes, alpha, rng):
    classes = np.unique(labels)
    pools = {c: list(rng.permutation(np.flatnonzero(labels == c))) for c in classes}
    parts = []
    for size in sizes:
        props = rng.dirichlet(np.full(len(classes), alpha))
        wanted = rng.multinomial(size, props)
        taken = []
        for c, k in zip(classes, wanted):
            grab = min(k, len(pools[c]))
            taken.extend(pools[c][:grab])
            del pools[c][:grab]
        missing = size - len(taken)
        while missing > 0:
            open_classes = [i for i, c in enumerate(classes) if pools[c]]
            if not open_classes:
                break
            weights = props[open_classes] + 1e-12
            pick = classes[open_classes[rng.choice(len(open_classes), p=weights / weights.sum())]]
            taken.append(pools[pick].pop())
            missing -= 1
        parts.append(np.asarray(taken, dtype=int))
    return parts


def class_histogram(dataset: DeviceDataset, n_classes: int) -> np.ndarray:
    return np.bincount(dataset.labels, minlength=n_classes) / dataset.count
