"""Magnitude pruning and stochastic uniform quantization of gradients.

The quantizer works on magnitudes.  For a packet with magnitude range
``[g_min, g_max]`` and ``delta`` bits, the grid is
``b_t = g_min + t * (g_max - g_min) / (2**delta - 1)`` for
``t = 0 .. 2**delta - 1``; each magnitude rounds to one of its two
neighbouring grid points with probabilities that make the result unbiased,
and the original sign is kept.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_XI_BITS = 96  # two float32 range bounds + 32-bit header


class MalformedPacketError(ValueError):
    pass


@dataclass(frozen=True)
class PruneMask:
    kept_indices: np.ndarray
    dim: int
    ratio: float

    @property
    def n_pruned(self) -> int:
        return self.dim - len(self.kept_indices)

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Scatter kept-coordinate values into a zero vector of length ``dim``."""
        out = np.zeros(self.dim)
        out[self.kept_indices] = values
        return out


@dataclass(frozen=True)
class QuantizedGradient:
    level_indices: np.ndarray
    signs: np.ndarray
    g_min: float
    g_max: float
    bits_per_coord: int
    model_dim: int
    xi: int = DEFAULT_XI_BITS

    @property
    def step(self) -> float:
        return (self.g_max - self.g_min) / (2 ** self.bits_per_coord - 1)

    @property
    def payload_bits(self) -> int:
        """Modelled packet size ``V * delta + xi`` (before the (1 - rho) factor)."""
        return payload_bits(self.model_dim, self.bits_per_coord, self.xi)

    def magnitudes(self) -> np.ndarray:
        return _grid_values(np.asarray(self.level_indices), self.g_min, self.g_max, 2 ** self.bits_per_coord)


def payload_bits(model_dim: int, delta, xi: int = DEFAULT_XI_BITS):
    """Bits of a quantized gradient, ``V * delta + xi``; ``delta`` may be an array."""
    return model_dim * delta + xi


def importance_scores(weights: np.ndarray) -> np.ndarray:
    return np.abs(weights)


def pruned_count(dim: int, ratio: float) -> int:
    # The epsilon absorbs products such as 0.57 * 100 = 56.999999999999993.
    return int(math.floor(ratio * dim + 1e-9))


def prune(weights: np.ndarray, ratio: float) -> tuple[np.ndarray, PruneMask]:
    """Zero the ``floor(ratio * V)`` smallest-magnitude weights.

    Ties go to the lower index (stable sort), so the result is deterministic.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"pruning ratio must be in [0, 1], got {ratio}")
    dim = weights.size
    k = pruned_count(dim, ratio)
    order = np.argsort(importance_scores(weights), kind="stable")
    kept = np.sort(order[k:])
    pruned = np.zeros_like(weights)
    pruned[kept] = weights[kept]
    return pruned, PruneMask(kept, dim, ratio)


def _grid_position(mags, g_min, step, n_levels):
    """Lower neighbouring grid index and the probability of rounding up."""
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = np.where(step > 0, (mags - g_min) / np.where(step > 0, step, 1.0), 0.0)
    # Snap values that sit on a grid point up to roundoff so they never move.
    nearest = np.rint(pos)
    pos = np.where(np.abs(pos - nearest) < 1e-9, nearest, pos)
    lower = np.clip(np.floor(pos), 0, n_levels - 2)
    return lower.astype(np.int64), pos - lower


def _stochastic_levels(mags, g_min, step, n_levels, rng):
    """Randomized rounding of magnitudes to grid indices (broadcasts over rows)."""
    lower, frac = _grid_position(mags, g_min, step, n_levels)
    return lower + (rng.random(frac.shape) < frac)


def _grid_values(levels, g_min, g_max, n_levels):
    # The top level maps to g_max exactly rather than g_min + (n - 1) * step.
    step = (g_max - g_min) / (n_levels - 1)
    return np.where(levels == n_levels - 1, g_max, g_min + levels * step)


def quantize(gradient: np.ndarray, delta: int, rng: np.random.Generator, model_dim: int | None = None,
             xi: int = DEFAULT_XI_BITS) -> QuantizedGradient:
    """Stochastically quantize the kept coordinates of a local gradient.

    ``g_min``/``g_max`` are the smallest and largest magnitudes in the packet.
    An all-zero gradient yields a degenerate packet that dequantizes to zero.
    """
    g = np.asarray(gradient, dtype=float).ravel()
    delta = int(delta)
    if delta < 1:
        raise ValueError("need at least one bit per coordinate")
    if not np.all(np.isfinite(g)):
        raise ValueError("cannot quantize a non-finite gradient")
    model_dim = g.size if model_dim is None else int(model_dim)
    signs = np.where(g < 0, -1, 1).astype(np.int8)
    if g.size == 0:
        return QuantizedGradient(np.zeros(0, np.int64), signs, 0.0, 0.0, delta, model_dim, xi)
    mags = np.abs(g)
    g_min, g_max = float(mags.min()), float(mags.max())
    n_levels = 2 ** delta
    step = (g_max - g_min) / (n_levels - 1)
    levels = _stochastic_levels(mags, g_min, step, n_levels, rng)
    return QuantizedGradient(levels, signs, g_min, g_max, delta, model_dim, xi)


def quantize_rows(gradients: np.ndarray, delta: int, rng: np.random.Generator) -> np.ndarray:
    """Quantize then dequantize each row as an independent packet.

    Vectorized twin of ``dequantize(quantize(row))`` for Monte-Carlo work.
    """
    g = np.atleast_2d(np.asarray(gradients, dtype=float))
    mags = np.abs(g)
    g_min = mags.min(axis=1, keepdims=True)
    g_max = mags.max(axis=1, keepdims=True)
    n_levels = 2 ** int(delta)
    step = (g_max - g_min) / (n_levels - 1)
    levels = _stochastic_levels(mags, g_min, step, n_levels, rng)
    return np.where(g < 0, -1.0, 1.0) * _grid_values(levels, g_min, g_max, n_levels)


def repeated_quantization(gradient: np.ndarray, delta: int, n_draws: int, rng: np.random.Generator,
                          chunk: int = 50_000):
    """Outcome counts of ``n_draws`` independent quantizations of one gradient.

    Each coordinate can only land on one of two neighbouring grid values, so
    the draws are summarized as ``(low, high, n_high)``: the two signed
    values per coordinate and how many draws rounded up.  Means and variances
    of the dequantized draws follow exactly from these counts.
    """
    g = np.asarray(gradient, dtype=float).ravel()
    mags = np.abs(g)
    g_min, g_max = mags.min(), mags.max()
    n_levels = 2 ** int(delta)
    step = (g_max - g_min) / (n_levels - 1)
    lower, frac = _grid_position(mags, g_min, step, n_levels)
    n_high = np.zeros(g.size, dtype=np.int64)
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        n_high += (rng.random((m, g.size)) < frac).sum(axis=0)
        done += m
    sign = np.where(g < 0, -1.0, 1.0)
    low = sign * _grid_values(lower, g_min, g_max, n_levels)
    high = sign * _grid_values(lower + 1, g_min, g_max, n_levels)
    return low, high, n_high


def dequantize(packet: QuantizedGradient, mask: PruneMask | None = None) -> np.ndarray:
    """Rebuild a full-length gradient; pruned coordinates come back as zero."""
    levels = np.asarray(packet.level_indices)
    if levels.shape != np.asarray(packet.signs).shape:
        raise MalformedPacketError("level and sign arrays differ in length")
    if levels.size and (levels.min() < 0 or levels.max() >= 2 ** packet.bits_per_coord):
        raise MalformedPacketError("level index outside the quantization grid")
    values = packet.signs * packet.magnitudes()
    if mask is None:
        return values.astype(float)
    if len(mask.kept_indices) != levels.size:
        raise MalformedPacketError(f"packet carries {levels.size} values but mask keeps {len(mask.kept_indices)}")
    if levels.size and (mask.kept_indices.min() < 0 or mask.kept_indices.max() >= mask.dim):
        raise MalformedPacketError("mask index outside the model")
    return mask.expand(values)


def quantization_mse_bound(g_min: float, g_max: float, n_coords: int, delta) -> float:
    """Worst-case ``E||Q(g) - g||^2`` for a packet: ``n (g_max - g_min)^2 / (4 (2^delta - 1)^2)``."""
    return n_coords * (g_max - g_min) ** 2 / (4.0 * (2.0 ** np.asarray(delta) - 1.0) ** 2)
