"""Effective-capacity analysis of priority-queueing access class barring.

Scalar helpers mirror the per-queue formulas one to one; the ``*_matrix``
functions evaluate the same quantities for every (device, class) pair at
once and broadcast over leading batch axes of the policy array ``x`` (shape
``(..., N, K)``), which is what the optimizers use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import phy
from .exceptions import ConfigurationError, DomainError, InfeasibleQoSError, NoCrossingError
from .traffic import effective_bandwidth

GL_NODES = 16  # Gauss-Legendre points per panel
POWER_BRACKET = (1e-6, 10.0)
REL_TOL = 1e-6
MAX_BISECT = 200


@lru_cache(maxsize=8)
def _fade_rule(n: int):
    """Composite Gauss-Legendre rule for ``int_0^inf g(t) e^{-t} dt``.

    Panels are graded geometrically towards ``t = 0`` because just above the
    zero-rate threshold the rate rises on a scale of ``1 / snr``, which a
    single Gauss-Laguerre rule cannot resolve at high SNR. The cut at
    ``t = 80`` drops a tail weight below ``e^-80``.
    """
    xg, wg = np.polynomial.legendre.leggauss(n)
    edges = np.concatenate([[0.0], np.geomspace(1e-9, 80.0, 48)])
    a, b = edges[:-1, None], edges[1:, None]
    t = (0.5 * (b - a) * (xg + 1.0) + a).ravel()
    w = (0.5 * (b - a) * wg).ravel() * np.exp(-t)
    return t, w


# ---------------------------------------------------------------------------
# barring policy


@dataclass(frozen=True, eq=False)
class BarringPolicy:
    """Decision vector ``x`` in ``[x_min, x_max]`` with ``d = 1 - exp(-x)``."""

    x: np.ndarray
    x_min: float
    x_max: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if np.any(x < self.x_min - 1e-12) or np.any(x > self.x_max + 1e-12):
            raise DomainError("policy outside [x_min, x_max]")

    @property
    def d(self) -> np.ndarray:
        return to_d(self.x)

    @classmethod
    def from_d(cls, d, d_min: float, d_max: float) -> "BarringPolicy":
        return cls(to_x(d), to_x(d_min), to_x(d_max))


def to_d(x):
    return -np.expm1(-np.asarray(x, dtype=float))


def to_x(d):
    return -np.log1p(-np.asarray(d, dtype=float))


# ---------------------------------------------------------------------------
# per-queue primitives


def idle_prob_approx(theta_star, L_bar):
    """Empty-buffer probability approximation ``clip(theta* L_bar, 0, 1)``."""
    return np.clip(np.asarray(theta_star, dtype=float) * L_bar, 0.0, 1.0)


def attempt_prob(d: float, idle_higher, idle_self: float) -> float:
    """Probability that queue k's head-of-line packet attempts access.

    ``d * prod(idle_higher) * (1 - idle_self)``; ``idle_higher`` holds the
    idle probabilities of the higher-priority queues of the same device.
    """
    return float(d * np.prod(np.asarray(idle_higher, dtype=float)) * (1.0 - idle_self))


def success_prob(P_a: float, D_others, M: int) -> float:
    """Contention success probability ``P_a * prod_l (1 - D_l / M)``."""
    if M < 1:
        raise ConfigurationError("need at least one preamble")
    D = np.asarray(D_others, dtype=float)
    if np.any(D / M > 1.0 + 1e-12):
        raise DomainError("activation probability exceeds the preamble count")
    return float(P_a * np.prod(1.0 - D / M))


def fading_gap(theta: float, S: float, eps: float, snr_mean: float, *, nodes: int = GL_NODES,
               fading: str = "rayleigh") -> float:
    """``1 - E[exp(-theta * r * S)]`` over ``|H|^2 ~ Exp(1)``.

    Computed directly (not as ``1 - E``) so tiny values keep full relative
    precision. The clamped-rate region ``|H|^2 < h0`` contributes exactly
    zero; the rest is integrated on graded panels after shifting by ``h0``.
    """
    if theta < 0 or snr_mean < 0:
        raise DomainError("theta and snr_mean must be nonnegative")
    if theta == 0 or snr_mean == 0:
        return 0.0
    if fading == "none":
        r = phy.finite_blocklength_rate(snr_mean, S, eps)
        return float(-math.expm1(-theta * S * r))
    h0 = phy.zero_rate_snr(S, eps) / snr_mean
    if h0 > 745.0:
        return 0.0
    u, w = _fade_rule(nodes)
    r = phy.finite_blocklength_rate(snr_mean * (h0 + u), S, eps)
    return float(math.exp(-h0) * np.dot(w, -np.expm1(-theta * S * r)))


def fading_expectation(theta: float, S: float, eps: float, snr_mean: float, *,
                       nodes: int = GL_NODES, fading: str = "rayleigh") -> float:
    """``E_H[exp(-theta * r * S)]`` with the finite-blocklength rate ``r``."""
    return 1.0 - fading_gap(theta, S, eps, snr_mean, nodes=nodes, fading=fading)


def fading_gap_matrix(theta, S, per, snr_mean, *, fading: str = "rayleigh") -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)
    for idx in np.ndindex(theta.shape):
        out[idx] = fading_gap(theta[idx], S, per[idx], snr_mean[idx], fading=fading)
    return out


def phi(fading_exp: float, eps: float, idle_higher, idle_self: float, D_others, M: int) -> float:
    """Per-unit-d success weight of one queue.

    ``(1 - E)(1 - eps) prod(idle_higher)(1 - idle_self) prod_l (1 - D_l / M)``
    """
    access = attempt_prob(1.0, idle_higher, idle_self)
    return (1.0 - fading_exp) * (1.0 - eps) * success_prob(access, D_others, M)


def capacity_from_success(theta: float, T: float, F_s: float, eps: float, fading_exp: float) -> float:
    """Effective capacity in the success-probability form.

    ``-log(F_s (1 - eps) E + 1 - F_s (1 - eps)) / (theta T)``
    """
    q = F_s * (1.0 - eps)
    return -math.log1p(-q * (1.0 - fading_exp)) / (theta * T)


def capacity_from_phi(theta: float, T: float, d: float, phi_value: float) -> float:
    """Effective capacity in the game form ``-log(1 - d * Phi) / (theta T)``."""
    if d * phi_value >= 1.0:
        raise DomainError("d * Phi >= 1")
    return -math.log1p(-d * phi_value) / (theta * T)


def queue_violation_prob(theta_star: float, Q_th: float, P_idle: float) -> float:
    """``(1 - P_idle) * exp(-theta* Q_th)``, capped at 1."""
    if not theta_star > 0:
        raise DomainError("theta* must be positive")
    return min(1.0, (1.0 - P_idle) * math.exp(-theta_star * Q_th))


def delay_violation_prob(theta_star: float, A_at_theta_star: float, D_max: float, P_idle: float) -> float:
    """``(1 - P_idle) * exp(-theta* A(theta*) D_max)``."""
    if not theta_star > 0:
        raise DomainError("theta* must be positive")
    return min(1.0, (1.0 - P_idle) * math.exp(-theta_star * A_at_theta_star * D_max))


# ---------------------------------------------------------------------------
# vectorised access state


class AccessState(NamedTuple):
    idle: np.ndarray  # (N, K)
    attempt: np.ndarray  # (..., N, K)
    activation: np.ndarray  # (..., N)
    success: np.ndarray  # (..., N, K)


def exclusive_product(f: np.ndarray) -> np.ndarray:
    """``out[..., n] = prod_{l != n} f[..., l]`` without division (zeros are fine)."""
    ones = np.ones(f.shape[:-1] + (1,))
    left = np.cumprod(np.concatenate([ones, f[..., :-1]], axis=-1), axis=-1)
    right = np.cumprod(np.concatenate([ones, f[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
    return left * right


def activation(scenario, x) -> np.ndarray:
    """Per-device activation probability ``D_n`` for policy ``x``."""
    return (to_d(x) * scenario.attempt_base).sum(axis=-1)


def collision_factor(scenario, x) -> np.ndarray:
    """``prod_{l != n} (1 - D_l / M)`` for every device, shape ``(..., N)``."""
    return exclusive_product(1.0 - activation(scenario, x) / scenario.n_preambles)


def access_state(scenario, x) -> AccessState:
    d = to_d(x)
    pa = d * scenario.attempt_base
    D = pa.sum(axis=-1)
    coll = exclusive_product(1.0 - D / scenario.n_preambles)
    return AccessState(scenario.idle, pa, D, pa * coll[..., None])


def phi_matrix(scenario, x) -> np.ndarray:
    """``Phi[n, k]`` for all queues; depends on ``x`` only through other devices."""
    coll = collision_factor(scenario, x)
    return scenario.fading_gap * (1.0 - scenario.per) * scenario.attempt_base * coll[..., None]


def capacity_matrix(scenario, x) -> np.ndarray:
    """Effective capacity ``C[n, k]`` (bit/s) of every queue under policy ``x``."""
    x = np.asarray(x, dtype=float)
    dphi = to_d(x) * phi_matrix(scenario, x)
    return -np.log1p(-dphi) / (scenario.theta * scenario.time_constant)


def effective_capacity(n: int, k: int, scenario, x) -> float:
    return float(capacity_matrix(scenario, x)[n, k])


# ---------------------------------------------------------------------------
# composition solvers


class PowerSolution(NamedTuple):
    power: float
    slack: bool  # True when even the minimum power over-provisions the queue


def _geometric_bisect(f, lo: float, hi: float, scale: float, rtol: float) -> float:
    """Root of increasing ``f`` on ``[lo, hi]`` by bisection in log space."""
    flo = f(lo)
    for _ in range(MAX_BISECT):
        mid = math.sqrt(lo * hi)
        fm = f(mid)
        if abs(fm) <= rtol * scale:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi / lo - 1.0 < 1e-15:
            break
    return math.sqrt(lo * hi)


def capacity_at_power(n: int, k: int, scenario, x, power: float, theta: float | None = None) -> float:
    """Effective capacity of queue (n, k) if it transmitted with ``power`` watts."""
    theta = float(scenario.theta[n, k]) if theta is None else theta
    snr = power * scenario.channel.gains[n] / scenario.channel.noise_power
    gap = fading_gap(theta, scenario.symbols, scenario.per[n, k], snr,
                     fading=scenario.channel.fading)
    coll = collision_factor(scenario, x)[n]
    phi_value = gap * (1.0 - scenario.per[n, k]) * scenario.attempt_base[n, k] * coll
    return capacity_from_phi(theta, scenario.time_constant, float(to_d(x[n, k])), phi_value)


def solve_power(n: int, k: int, scenario, x, *, bracket=POWER_BRACKET, rtol: float = REL_TOL) -> PowerSolution:
    """Transmit power at which the queue's effective capacity meets its effective bandwidth.

    Bisection relies on the capacity being increasing in power.

    Raises
    ------
    InfeasibleQoSError
        If the capacity at the largest admissible power is still short.
    """
    x = np.asarray(x, dtype=float)
    theta = float(scenario.theta[n, k])
    target = effective_bandwidth(theta, scenario.arrival_prob[n], scenario.mean_bits[n, k], scenario.slot)
    p_lo, p_hi = bracket
    c_hi = capacity_at_power(n, k, scenario, x, p_hi)
    if c_hi < target * (1.0 - rtol):
        raise InfeasibleQoSError(
            f"queue ({n}, {k}): capacity {c_hi:.6g} bit/s at {p_hi} W is below demand {target:.6g} bit/s"
        )
    if capacity_at_power(n, k, scenario, x, p_lo) >= target:
        return PowerSolution(p_lo, True)
    p = _geometric_bisect(lambda P: capacity_at_power(n, k, scenario, x, P) - target,
                          p_lo, p_hi, target, rtol)
    return PowerSolution(p, False)


def backlogged_capacity(n: int, k: int, scenario, x, theta: float) -> float:
    """Effective capacity of queue (n, k) at exponent ``theta`` while it is backlogged.

    Same as :func:`capacity_matrix` but without the queue's own ``1 - P_idle``
    factor: the tail decay is governed by the service seen when the queue
    is nonempty.
    """
    x = np.asarray(x, dtype=float)
    higher = float(np.prod(scenario.idle[n, :k]))
    gap = fading_gap(theta, scenario.symbols, scenario.per[n, k], scenario.snr_mean[n, k],
                     fading=scenario.channel.fading)
    coll = collision_factor(scenario, x)[n]
    phi_value = gap * (1.0 - scenario.per[n, k]) * higher * coll
    return capacity_from_phi(theta, scenario.time_constant, float(to_d(x[n, k])), phi_value)


def solve_qos_exponent(n: int, k: int, scenario, x, *, bracket=None, rtol: float = REL_TOL) -> float:
    """QoS exponent theta* at which effective bandwidth equals effective capacity.

    Raises
    ------
    NoCrossingError
        If ``A - C`` does not change sign on the bracket.
    """
    L = float(scenario.mean_bits[n, k])
    lo, hi = bracket if bracket is not None else (1e-8, 0.99 / L)
    p = float(scenario.arrival_prob[n])

    def excess(theta):
        return (effective_bandwidth(theta, p, L, scenario.slot)
                - backlogged_capacity(n, k, scenario, x, theta))

    e_lo, e_hi = excess(lo), excess(hi)
    if e_lo >= 0 or e_hi <= 0:
        raise NoCrossingError(
            f"queue ({n}, {k}): A - C is {e_lo:.3g} at {lo:.3g} and {e_hi:.3g} at {hi:.3g}"
        )

    def rel(theta):
        return excess(theta) / effective_bandwidth(theta, p, L, scenario.slot)

    return _geometric_bisect(rel, lo, hi, 1.0, rtol)
