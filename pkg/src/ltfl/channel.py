"""Uplink channel model: rate, packet error rate and per-round delivery draws.

All powers are in watts, bandwidths in Hz and the noise power spectral
density in W/Hz.  Table-style inputs given in dB/dBm are converted once with
:func:`db_to_linear` and :func:`dbm_to_watts` before building
:class:`ChannelParams`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class FadingMode(str, enum.Enum):
    """How the fading coefficient enters the channel gain."""

    DETERMINISTIC = "deterministic"
    RAYLEIGH_MEAN_SCALED = "rayleigh_mean_scaled"


def db_to_linear(value_db):
    """Convert a power ratio in dB to a linear ratio."""
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def dbm_to_watts(value_dbm):
    """Convert dBm (or dBm/Hz) to W (or W/Hz)."""
    return 10.0 ** ((np.asarray(value_dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Static uplink parameters of one device.

    Attributes
    ----------
    bandwidth_ul : float
        Allocated uplink bandwidth in Hz.
    noise_psd : float
        Noise power spectral density in W/Hz (linear).
    waterfall_threshold : float
        Waterfall threshold of the packet error model (linear).
    interference : float
        Interference power in W.
    fading_coeff : float
        Fading coefficient multiplying the path loss.
    distance : float
        Device to access point distance in m.
    fading_mode : FadingMode
        ``DETERMINISTIC`` uses the coefficient as is; ``RAYLEIGH_MEAN_SCALED``
        multiplies it by a unit-mean exponential power gain and averages the
        rate / error rate over ``mc_samples`` draws.
    mc_samples : int
        Monte-Carlo sample count for the expectation (ignored when
        deterministic).
    """

    bandwidth_ul: float
    noise_psd: float
    waterfall_threshold: float
    interference: float
    fading_coeff: float
    distance: float
    fading_mode: FadingMode = FadingMode.DETERMINISTIC
    mc_samples: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "fading_mode", FadingMode(self.fading_mode))
        for name in ("bandwidth_ul", "noise_psd", "waterfall_threshold", "fading_coeff", "distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not self.interference >= 0:
            raise ValueError(f"interference must be non-negative, got {self.interference!r}")
        if int(self.mc_samples) < 1:
            raise ValueError("mc_samples must be >= 1")

    @property
    def noise_plus_interference(self) -> float:
        """I + B * N0 in watts."""
        return self.interference + self.bandwidth_ul * self.noise_psd


@dataclass(frozen=True)
class TransmissionOutcome:
    alpha: int
    rate: float
    per: float


def channel_gain(params: ChannelParams, rng: np.random.Generator | None = None) -> float:
    """Channel gain ``fading * distance**-2``.

    In Rayleigh mode a single unit-mean exponential sample from ``rng`` scales
    the gain.
    """
    gain = params.fading_coeff * params.distance ** -2.0
    if params.fading_mode is FadingMode.RAYLEIGH_MEAN_SCALED:
        if rng is None:
            raise ValueError("a random stream is required in Rayleigh mode")
        gain *= rng.exponential(1.0)
    return float(gain)


def _gain_samples(params: ChannelParams, rng: np.random.Generator | None) -> np.ndarray:
    base = params.fading_coeff * params.distance ** -2.0
    if params.fading_mode is FadingMode.DETERMINISTIC:
        return np.array([base])
    # Fixed default stream keeps expectations reproducible (common random numbers).
    rng = np.random.default_rng(0) if rng is None else rng
    return base * rng.exponential(1.0, size=int(params.mc_samples))


def uplink_rate(params: ChannelParams, power, rng: np.random.Generator | None = None):
    """Expected uplink rate in bit/s, ``B * E_h[log2(1 + p h / (I + B N0))]``.

    ``power`` may be a scalar or an array; the result has the same shape.
    """
    p = np.asarray(power, dtype=float)
    if np.any(p < 0):
        raise ValueError("power must be non-negative")
    h = _gain_samples(params, rng)
    snr = p[..., None] * h / params.noise_plus_interference
    rate = params.bandwidth_ul * np.log2(1.0 + snr).mean(axis=-1)
    return float(rate) if rate.ndim == 0 else rate


def packet_error_rate(params: ChannelParams, power, rng: np.random.Generator | None = None):
    """Expected packet error rate ``E_h[1 - exp(-Y (I + B N0) / (p h))]``.

    Scalar or array ``power``; strictly decreasing in power.
    """
    p = np.asarray(power, dtype=float)
    if np.any(p <= 0):
        raise ValueError("power must be positive")
    h = _gain_samples(params, rng)
    exponent = params.waterfall_threshold * params.noise_plus_interference / (p[..., None] * h)
    per = -np.expm1(-exponent).mean(axis=-1)
    return float(per) if per.ndim == 0 else per


def draw_transmission(params: ChannelParams, power: float, rng: np.random.Generator,
                      *, per: float | None = None, rate: float | None = None) -> TransmissionOutcome:
    """Draw the delivery indicator for one packet.

    The packet is received when a uniform draw ``u`` satisfies ``u >= per``.
    Using one uniform per (device, round) couples runs that differ only in
    channel quality: a packet delivered under a worse channel is also
    delivered under a better one.  Pre-computed ``per``/``rate`` may be passed
    to skip re-evaluating the expectations.
    """
    if per is None:
        per = packet_error_rate(params, power)
    if rate is None:
        rate = uplink_rate(params, power)
    u = rng.random()
    return TransmissionOutcome(alpha=int(u >= per), rate=float(rate), per=float(per))


def device_stream(master_seed: int, device_id: int, round_index: int, purpose: int = 0) -> np.random.Generator:
    """Independent random stream for one (device, round, purpose).

    Streams do not depend on how many devices exist, so adding devices does
    not reshuffle the draws of the others.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(device_id), int(round_index), int(purpose)))
    return np.random.default_rng(seq)
