"""Radio-layer math: path loss, Q-function pair, finite-blocklength rate.

All functions are pure and accept numpy arrays where that makes sense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import ConfigurationError, DomainError

LOG2E = math.log2(math.e)
_SQRT2 = math.sqrt(2.0)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def q_func(x):
    """Gaussian tail probability ``Q(x) = P(Z > x)`` for standard normal Z.

    Saturates to 0 (or 1) for large ``|x|`` instead of raising.
    """
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / _SQRT2)


def _log_q(x: float) -> float:
    return float(special.log_ndtr(-x))


def q_inv(p: float, *, rtol: float = 1e-12, max_iter: int = 200) -> float:
    """Inverse of :func:`q_func` on ``(0, 1)``.

    Safeguarded Newton iteration on ``log Q(x) - log p`` with a bisection
    fallback whenever the Newton step leaves the current bracket.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"q_inv needs 0 < p < 1, got {p!r}")
    if p == 0.5:
        return 0.0
    target = math.log(p)
    lo, hi = -40.0, 40.0
    # log Q is strictly decreasing, so g(lo) > 0 > g(hi)
    x = 0.0
    for _ in range(max_iter):
        g = _log_q(x) - target
        if g > 0.0:
            lo = x
        else:
            hi = x
        # d/dx log Q(x) = -phi(x) / Q(x)
        slope = -math.exp(-0.5 * x * x - _log_q(x)) / math.sqrt(2.0 * math.pi)
        step = x - g / slope if slope != 0.0 else 0.5 * (lo + hi)
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        if abs(step - x) <= rtol * max(1.0, abs(x)):
            return step
        x = step
    return x


def path_loss_db(distance_m):
    """Large-scale path loss ``60 + 37.6 log10(X)`` in dB, X in meters."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d < 1.0):
        raise DomainError("path loss model is only defined for distances >= 1 m")
    out = 60.0 + 37.6 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def path_gain(distance_m):
    """Linear mean path gain ``G = 10^(-PL/10)``."""
    return 10.0 ** (-np.asarray(path_loss_db(distance_m)) / 10.0)


def finite_blocklength_rate(snr, S, eps):
    """Normal-approximation coding rate in bits per channel use.

    ``log2(1 + snr) - sqrt((1 - (1 + snr)^-2) / S) * Qinv(eps) * log2(e)``,
    clamped at zero. ``snr`` may be an array; ``S`` and ``eps`` are scalars
    or broadcastable arrays.
    """
    snr = np.asarray(snr, dtype=float)
    if np.any(snr < 0):
        raise DomainError("snr must be nonnegative")
    S = np.asarray(S, dtype=float)
    if np.any(S < 1):
        raise DomainError("blocklength S must be >= 1")
    qi = _q_inv_array(eps)
    dispersion = -np.expm1(-2.0 * np.log1p(snr))
    r = np.log1p(snr) * LOG2E - np.sqrt(dispersion / S) * qi * LOG2E
    r = np.maximum(r, 0.0)
    return float(r) if r.ndim == 0 else r


def _q_inv_array(eps):
    eps = np.asarray(eps, dtype=float)
    if eps.ndim == 0:
        return q_inv(float(eps))
    flat = np.array([q_inv(e) for e in eps.ravel()])
    return flat.reshape(eps.shape)


def zero_rate_snr(S: float, eps: float) -> float:
    """Smallest SNR at which the finite-blocklength rate becomes positive.

    Below this value the (unclamped) normal approximation is negative. The
    rate is decreasing-then-increasing in SNR with ``r(0) = 0``, so the
    positive root is unique.
    """
    from scipy.optimize import brentq

    qi = q_inv(eps)
    if qi <= 0.0:
        return 0.0

    def excess(g):
        return math.log1p(g) - qi * math.sqrt(-math.expm1(-2.0 * math.log1p(g)) / S)

    hi = max(4.0 * qi * qi / S, 1e-12)
    while excess(hi) <= 0.0:
        hi *= 2.0
    lo = hi
    while excess(lo) > 0.0 and lo > 1e-300:
        lo *= 0.5
    if excess(lo) > 0.0:
        return 0.0
    return brentq(excess, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)


@dataclass(frozen=True)
class BlocklengthSpec:
    """Timing and bandwidth constants that fix the data-phase blocklength."""

    data_phase: float  # T_f, seconds
    symbol_duration: float  # a, seconds
    bandwidth: float  # B_n, Hz
    symbol_bandwidth: float  # c, Hz


def symbols_per_frame(spec: BlocklengthSpec) -> int:
    """Number of OFDM symbols ``S = round((T_f / a) * (B / c))``."""
    fields = (spec.data_phase, spec.symbol_duration, spec.bandwidth, spec.symbol_bandwidth)
    if any(not v > 0 for v in fields):
        raise ConfigurationError(f"blocklength fields must be positive: {spec}")
    s = round((spec.data_phase / spec.symbol_duration) * (spec.bandwidth / spec.symbol_bandwidth))
    if s < 1:
        raise ConfigurationError(f"blocklength rounds to {s} symbols")
    return int(s)


@dataclass(frozen=True)
class ChannelModel:
    """Per-device large-scale gains plus a unit-mean Rayleigh power law.

    ``fading="none"`` pins ``|H|^2`` to 1, which is handy for hand checks.
    """

    distances: np.ndarray
    noise_power: float
    fading: str = "rayleigh"

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        object.__setattr__(self, "distances", d)
        if not self.noise_power > 0:
            raise ConfigurationError("noise power must be positive")
        if self.fading not in ("rayleigh", "none"):
            raise ConfigurationError(f"unknown fading law {self.fading!r}")

    @property
    def gains(self) -> np.ndarray:
        return np.asarray(path_gain(self.distances))

    def mean_snr(self, power) -> np.ndarray:
        """Mean SNR ``P * G / N0``; ``power`` broadcasts against devices."""
        power = np.asarray(power, dtype=float)
        g = self.gains
        if power.ndim == 2:
            g = g[:, None]
        return power * g / self.noise_power

    def sample_power_gain(self, rng: np.random.Generator, size=None) -> np.ndarray:
        if self.fading == "none":
            return np.ones(size if size is not None else len(self.distances))
        return rng.exponential(1.0, size if size is not None else len(self.distances))
