"""Convergence-gap objective and estimators for its constants.

The gap for one round is

    gamma = (3 * sum_u Q_u + 3 L^2 D^2 sum_u rho_u + (12 v1 / N) sum_u N_u q_u) / (1 - 12 v2)

with ``Q_u = n_u (g_max_u - g_min_u)^2 / (4 (2^delta_u - 1)^2)`` the quantizer
variance bound of device ``u``.  :class:`GapTerms` reports the three summands
already divided by ``1 - 12 v2`` so that they add up to ``gamma``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class BoundConstants:
    lipschitz: float = 10.0
    weight_bound_sq: float = 10.0
    upsilon1: float = 1.0
    upsilon2: float = 0.01
    learning_rate: float | None = None

    def __post_init__(self):
        if not self.lipschitz > 0:
            raise ConfigurationError("Lipschitz constant must be positive")
        if not self.weight_bound_sq > 0:
            raise ConfigurationError("weight bound must be positive")
        if self.upsilon1 < 0 or self.upsilon2 < 0:
            raise ConfigurationError("variance constants must be non-negative")
        if self.upsilon2 >= 1.0 / 12.0:
            raise ConfigurationError(f"upsilon2 = {self.upsilon2} >= 1/12 makes the bound vacuous")

    @property
    def eta(self) -> float:
        return 1.0 / self.lipschitz if self.learning_rate is None else float(self.learning_rate)

    @property
    def scale(self) -> float:
        return 1.0 / (1.0 - 12.0 * self.upsilon2)


@dataclass(frozen=True)
class GradRange:
    """Magnitude range of a device's last packet and how many coordinates it carried."""

    g_min: float
    g_max: float
    n_coords: int

    @property
    def spread_sq_sum(self) -> float:
        return self.n_coords * (self.g_max - self.g_min) ** 2

    @classmethod
    def of(cls, gradient: np.ndarray) -> "GradRange":
        mags = np.abs(np.asarray(gradient, dtype=float))
        if mags.size == 0:
            return cls(0.0, 0.0, 0)
        return cls(float(mags.min()), float(mags.max()), int(mags.size))


@dataclass(frozen=True)
class GapTerms:
    quant_term: float
    prune_term: float
    trans_term: float
    gamma: float


def gap_contributions(rho, delta, per, n_samples, spread_sq_sum, consts: BoundConstants, n_total=None):
    """Per-device (quant, prune, trans) contributions to the gap.

    All array arguments broadcast, so callers can evaluate whole grids of
    candidate decisions at once.  ``n_total`` defaults to ``sum(n_samples)``.
    """
    n_samples = np.asarray(n_samples, dtype=float)
    n_total = n_samples.sum() if n_total is None else float(n_total)
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 1):
        raise ValueError("quantization bits must be >= 1")
    scale = consts.scale
    quant = 3.0 * scale * np.asarray(spread_sq_sum, dtype=float) / (4.0 * (2.0 ** delta - 1.0) ** 2)
    prune = 3.0 * scale * consts.lipschitz ** 2 * consts.weight_bound_sq * np.asarray(rho, dtype=float)
    trans = scale * 12.0 * consts.upsilon1 * n_samples * np.asarray(per, dtype=float) / n_total
    return quant, prune, trans


def gamma(strategy, n_samples: Sequence[float], grad_ranges: Sequence[GradRange],
          consts: BoundConstants, per) -> GapTerms:
    """Convergence gap of a strategy given per-device packet error rates ``per``."""
    n = strategy.n_devices
    if len(n_samples) != n or len(grad_ranges) != n or np.size(per) != n:
        raise ValueError("strategy, devices, gradient ranges and error rates must agree in length")
    spreads = np.array([r.spread_sq_sum for r in grad_ranges])
    quant, prune, trans = gap_contributions(strategy.rho, strategy.delta, per, n_samples, spreads, consts)
    q, p, t = float(quant.sum()), float(prune.sum()), float(trans.sum())
    return GapTerms(q, p, t, q + p + t)


def estimate_lipschitz(grad_fn: Callable[[np.ndarray], np.ndarray], pairs) -> float:
    """Largest observed ``||grad(w1) - grad(w2)|| / ||w1 - w2||`` over probe pairs."""
    best = 0.0
    for w1, w2 in pairs:
        dist = np.linalg.norm(w1 - w2)
        if dist > 0:
            best = max(best, np.linalg.norm(grad_fn(w1) - grad_fn(w2)) / dist)
    if best <= 0:
        raise ValueError("no informative probe pair")
    return float(best)


def estimate_weight_bound(weights_seen) -> float:
    return float(max(np.dot(w, w) for w in weights_seen))


def fit_variance_bound(sample_sq_norms, full_sq_norms, margin: float = 1e-6) -> tuple[float, float]:
    """Fit ``||grad f_i||^2 <= v1 + v2 ||grad F||^2`` to observed pairs.

    Least squares gives the slope, which is clamped to ``[0, 1/12)``; the
    intercept is then raised until every observation satisfies the bound.
    """
    a = np.asarray(full_sq_norms, dtype=float)
    b = np.asarray(sample_sq_norms, dtype=float)
    design = np.column_stack([np.ones_like(a), a])
    (_, slope), *_ = np.linalg.lstsq(design, b, rcond=None)
    v2 = float(np.clip(slope, 0.0, 1.0 / 12.0 - margin))
    v1 = float(max(0.0, np.max(b - v2 * a)))
    return v1, v2
