"""Bernoulli-exponential arrival process and its effective bandwidth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError


@dataclass(frozen=True)
class QueueProfile:
    """Traffic and QoS description of one (device, class) queue.

    Attributes
    ----------
    arrival_prob : float
        Per-slot arrival probability ``p_n`` (shared by all classes of a device).
    mean_bits : float
        Mean packet size in bits.
    qos_exponent : float
        QoS exponent theta in 1/bit.
    per : float
        Target packet error rate.
    delay_bound, queue_threshold, tx_power : float
        Delay bound (s), backlog threshold (bits) and transmit power (W).
    """

    arrival_prob: float
    mean_bits: float
    qos_exponent: float
    per: float = 1e-5
    delay_bound: float = 0.05
    queue_threshold: float = 5000.0
    tx_power: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise DomainError("arrival probability must lie in [0, 1]")
        if not self.mean_bits > 0:
            raise DomainError("mean packet size must be positive")
        if not self.qos_exponent > 0:
            raise DomainError("QoS exponent must be positive")
        if self.qos_exponent * self.mean_bits >= 1.0:
            raise DomainError("theta * mean_bits must be < 1 for the arrival MGF to exist")
        if not 0.0 < self.per < 1.0:
            raise DomainError("packet error rate must lie in (0, 1)")


def effective_bandwidth(theta, p, L_bar, T_d):
    """Effective bandwidth (bit/s) of Bernoulli(p) arrivals of Exp(L_bar) bits per slot.

    ``A(theta) = log(p / (1 - theta L_bar) + 1 - p) / (theta T_d)``
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise DomainError("theta must be positive")
    if not T_d > 0:
        raise DomainError("slot duration must be positive")
    tl = theta * L_bar
    if np.any(tl >= 1.0):
        raise DomainError("theta * L_bar >= 1: arrival MGF diverges")
    # log1p keeps the small-theta limit accurate
    out = np.log1p(p * tl / (1.0 - tl)) / (theta * T_d)
    return float(out) if out.ndim == 0 else out


def sample_arrival(rng: np.random.Generator, p: float, L_bar: float, size=None):
    """Bits arriving in one slot: 0 with probability ``1 - p``, else an Exp(L_bar) draw."""
    hit = rng.random(size) < p
    bits = rng.exponential(L_bar, size)
    return np.where(hit, bits, 0.0) if size is not None else (float(bits) if hit else 0.0)


def mean_rate(p: float, L_bar: float, T_d: float) -> float:
    return p * L_bar / T_d


def arrival_log_mgf(theta: float, p: float, L_bar: float) -> float:
    """Per-slot log moment generating function of the arrival size."""
    tl = theta * L_bar
    if tl >= 1.0:
        return math.inf
    return math.log1p(p * tl / (1.0 - tl))
