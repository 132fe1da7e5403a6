"""Uplink channel: log-distance pathloss, Rayleigh block fading and per-UE SNR."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ChannelConfig, ConfigError


@dataclass(frozen=True)
class ChannelDraw:
    """One UE's channel for one step. All quantities linear SI."""
    large_scale_gain: float
    rayleigh_coeff_sq: float
    subband_bandwidth: float
    noise_psd: float

    def __post_init__(self):
        if self.large_scale_gain <= 0 or self.subband_bandwidth <= 0 or self.noise_psd <= 0:
            raise ValueError("gain, bandwidth and noise PSD must be positive")
        if self.rayleigh_coeff_sq < 0:
            raise ValueError("|h|^2 must be non-negative")


def pathloss_db(distance_m: float, config: ChannelConfig) -> float:
    d = max(float(distance_m), config.min_distance_m)
    return config.pl0_db + 10.0 * config.pl_exponent * math.log10(d / config.pl_ref_m)


def pathloss_gain(distance_m: float, carrier_hz: float, config: ChannelConfig) -> float:
    """Linear large-scale power gain ``10**(-PL_dB/10)``.

    ``carrier_hz`` is validated but the log-distance intercept ``pl0_db`` is
    already quoted at the configured carrier.
    """
    if carrier_hz <= 0:
        raise ConfigError("carrier frequency must be positive")
    if config.pl_exponent <= 0:
        raise ConfigError("pathloss exponent must be positive")
    return 10.0 ** (-pathloss_db(distance_m, config) / 10.0)


def draw_fading(rng: np.random.Generator, size=None):
    """Sample |h|^2 for h ~ CN(0, 1), i.e. the sum of two N(0, 1/2) squares."""
    shape = (2,) if size is None else (2, *np.atleast_1d(size).tolist())
    xy = rng.normal(0.0, math.sqrt(0.5), size=shape)
    out = xy[0] ** 2 + xy[1] ** 2
    return float(out) if size is None else out


def snr(rho: int, p: float, draw: ChannelDraw) -> float:
    if p < 0:
        raise ValueError(f"transmit power must be non-negative, got {p}")
    if rho not in (0, 1):
        raise ValueError(f"rho must be 0 or 1, got {rho}")
    if rho == 0:
        return 0.0
    return p * draw.large_scale_gain * draw.rayleigh_coeff_sq / (draw.subband_bandwidth * draw.noise_psd)


def make_draws(gains, fading_sq, config: ChannelConfig) -> list[ChannelDraw]:
    return [ChannelDraw(float(g), float(h), config.subband_hz, config.noise_psd_w_hz)
            for g, h in zip(gains, fading_sq)]
