"""Per-device control decisions and their box limits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ControlLimits:
    p_min: float = 0.01
    p_max: float = 0.1
    rho_max: float = 0.5
    delta_max: int = 8

    def __post_init__(self):
        if not 0 < self.p_min <= self.p_max:
            raise ValueError("need 0 < p_min <= p_max")
        if not 0 <= self.rho_max < 1:
            raise ValueError("rho_max must lie in [0, 1)")
        if int(self.delta_max) < 1:
            raise ValueError("delta_max must be a positive integer")


@dataclass(frozen=True)
class ControlStrategy:
    """Pruning ratio, quantization bits and transmit power for every device."""

    rho: np.ndarray
    delta: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        delta = np.atleast_1d(np.asarray(self.delta))
        power = np.atleast_1d(np.asarray(self.power, dtype=float))
        if not (rho.shape == delta.shape == power.shape and rho.ndim == 1):
            raise ValueError("rho, delta and power must be 1-D arrays of equal length")
        if np.any(delta != np.round(delta)):
            raise ValueError("quantization bits must be integers")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "delta", delta.astype(np.int64))
        object.__setattr__(self, "power", power)

    @classmethod
    def uniform(cls, n_devices: int, rho: float, delta: int, power: float) -> "ControlStrategy":
        return cls(np.full(n_devices, rho), np.full(n_devices, delta), np.full(n_devices, power))

    @property
    def n_devices(self) -> int:
        return self.rho.size

    def check(self, limits: ControlLimits) -> None:
        """Raise ``ValueError`` unless every box constraint holds."""
        if np.any(self.rho < 0) or np.any(self.rho > limits.rho_max):
            raise ValueError("pruning ratio outside [0, rho_max]")
        if np.any(self.delta < 1) or np.any(self.delta > limits.delta_max):
            raise ValueError("quantization bits outside [1, delta_max]")
        if np.any(self.power < limits.p_min) or np.any(self.power > limits.p_max):
            raise ValueError("power outside [p_min, p_max]")

    def replace(self, **changes) -> "ControlStrategy":
        fields = {"rho": self.rho, "delta": self.delta, "power": self.power}
        fields.update(changes)
        return ControlStrategy(**fields)
