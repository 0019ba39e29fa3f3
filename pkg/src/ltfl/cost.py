"""Per-round delay and energy of the devices under a control strategy."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import ChannelParams
from .compression import DEFAULT_XI_BITS, payload_bits


@dataclass(frozen=True)
class DeviceProfile:
    """Static description of a device.

    ``cpu_freq`` in Hz, ``cycles_per_sample`` in CPU cycles, ``energy_coeff``
    is the effective switched capacitance ``k`` and ``energy_exponent`` the
    exponent ``sigma`` of the ``k f^sigma`` power model.
    """

    n_samples: int
    cpu_freq: float
    cycles_per_sample: float
    channel: ChannelParams
    energy_coeff: float = 1.25e-26
    energy_exponent: float = 3.0

    def __post_init__(self):
        for name in ("n_samples", "cpu_freq", "cycles_per_sample", "energy_coeff"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.energy_exponent < 2:
            raise ValueError("energy exponent must be >= 2")

    @property
    def full_compute_time(self) -> float:
        """``N c0 / f``: unpruned local training time."""
        return self.n_samples * self.cycles_per_sample / self.cpu_freq

    @property
    def energy_per_unpruned_round(self) -> float:
        """``k f^(sigma-1) N c0``: unpruned local training energy."""
        return self.energy_coeff * self.cpu_freq ** (self.energy_exponent - 1) * self.n_samples * self.cycles_per_sample


@dataclass(frozen=True)
class Budgets:
    t_max: float
    e_max: float
    server_time: float = 0.05

    def __post_init__(self):
        if not (self.t_max > 0 and self.e_max > 0 and self.server_time >= 0):
            raise ValueError("budgets must be positive and the server time non-negative")


def training_delay(n_samples, cycles_per_sample, cpu_freq, rho):
    return n_samples * cycles_per_sample * (1.0 - np.asarray(rho, dtype=float)) / cpu_freq


def upload_delay(bits, rho, rate):
    return bits * (1.0 - np.asarray(rho, dtype=float)) / rate


def training_energy(energy_coeff, cpu_freq, energy_exponent, t_train):
    return energy_coeff * cpu_freq ** energy_exponent * t_train


def upload_energy(power, t_upload):
    return power * t_upload


@dataclass(frozen=True)
class DeviceCost:
    t_lt: float
    t_lu: float
    e_lt: float
    e_lu: float

    @property
    def e_total(self) -> float:
        return self.e_lt + self.e_lu

    @property
    def t_total(self) -> float:
        return self.t_lt + self.t_lu


@dataclass(frozen=True)
class RoundCostReport:
    per_device: tuple[DeviceCost, ...]
    round_delay: float
    server_time: float
    budgets: Budgets | None
    violating: tuple[int, ...] = field(default=())

    @property
    def feasible(self) -> bool:
        return not self.violating

    @property
    def energies(self) -> np.ndarray:
        return np.array([c.e_total for c in self.per_device])


def device_costs(device: DeviceProfile, rho, delta, power, rate, model_dim: int, xi: int = DEFAULT_XI_BITS,
                 bits=None):
    """``(t_lt, t_lu, e_lt, e_lu)`` for one device; arguments broadcast.

    ``bits`` overrides the ``V * delta + xi`` payload (used by the baselines).
    """
    bits = payload_bits(model_dim, np.asarray(delta, dtype=float), xi) if bits is None else bits
    t_lt = training_delay(device.n_samples, device.cycles_per_sample, device.cpu_freq, rho)
    t_lu = upload_delay(bits, rho, rate)
    e_lt = training_energy(device.energy_coeff, device.cpu_freq, device.energy_exponent, t_lt)
    e_lu = upload_energy(np.asarray(power, dtype=float), t_lu)
    return t_lt, t_lu, e_lt, e_lu


def device_feasible(device: DeviceProfile, budgets: Budgets, rho, delta, power, rate, model_dim: int,
                    xi: int = DEFAULT_XI_BITS):
    """Whether a device alone meets the delay and energy budgets (broadcasts)."""
    t_lt, t_lu, e_lt, e_lu = device_costs(device, rho, delta, power, rate, model_dim, xi)
    return (t_lt + t_lu + budgets.server_time <= budgets.t_max) & (e_lt + e_lu <= budgets.e_max)


def round_cost(strategy, devices: Sequence[DeviceProfile], rates, model_dim: int, xi: int = DEFAULT_XI_BITS,
               budgets: Budgets | None = None, server_time: float | None = None, bits=None) -> RoundCostReport:
    """Delay/energy decomposition of one round and the budget check.

    Round delay is the slowest device's compute plus upload time plus the
    server constant.  ``bits`` optionally gives a per-device payload instead
    of ``V * delta + xi``.
    """
    if len(devices) != strategy.n_devices or np.size(rates) != strategy.n_devices:
        raise ValueError("strategy, devices and rates must agree in length")
    rates = np.asarray(rates, dtype=float)
    if np.any(rates <= 0):
        raise ValueError("rates must be positive")
    if server_time is None:
        server_time = budgets.server_time if budgets is not None else 0.0
    per_device = []
    for u, dev in enumerate(devices):
        b = None if bits is None else np.asarray(bits, dtype=float)[u]
        t_lt, t_lu, e_lt, e_lu = device_costs(dev, strategy.rho[u], strategy.delta[u], strategy.power[u],
                                              rates[u], model_dim, xi, bits=b)
        per_device.append(DeviceCost(float(t_lt), float(t_lu), float(e_lt), float(e_lu)))
    round_delay = max(c.t_total for c in per_device) + server_time
    violating = ()
    if budgets is not None:
        violating = tuple(u for u, c in enumerate(per_device)
                          if c.t_total + server_time > budgets.t_max or c.e_total > budgets.e_max)
    return RoundCostReport(tuple(per_device), float(round_delay), float(server_time), budgets, violating)
