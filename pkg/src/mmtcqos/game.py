"""Non-cooperative barring game with linear access prices.

Each device ``n`` picks ``x[n, :]`` (``d = 1 - exp(-x)``) to maximise

    U_n = sum_k C[n, k](x) - price[n, k] * x[n, k].

The best response has a closed form, and synchronous best-response rounds
(with a one-off safeguard at round two) converge to the unique equilibrium.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator

from . import qos
from .exceptions import DomainError
from .validation import check_policy, check_prices, check_scenario

SuccessEstimator = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# utilities and derivatives


def utilities(scenario, x, prices) -> np.ndarray:
    """Utility of every device, shape ``(..., N)``."""
    x = np.asarray(x, dtype=float)
    return (qos.capacity_matrix(scenario, x) - prices * x).sum(axis=-1)


def utility(n: int, scenario, x, prices) -> float:
    return float(utilities(scenario, x, prices)[..., n])


def utility_gradient_matrix(scenario, x, prices, phi=None) -> np.ndarray:
    """``dU_n / dx[n, k]`` for all queues."""
    x = np.asarray(x, dtype=float)
    phi = qos.phi_matrix(scenario, x) if phi is None else phi
    e = np.exp(-x)
    T = scenario.time_constant
    return e * phi / (scenario.theta * T * (1.0 - phi + e * phi)) - prices


def utility_gradient(n: int, k: int, scenario, x, prices) -> float:
    return float(utility_gradient_matrix(scenario, x, prices)[n, k])


# ---------------------------------------------------------------------------
# best response


def best_response(phi: float, price: float, theta: float, T: float, x_min: float, x_max: float) -> float:
    """Closed-form utility maximiser for one queue.

    ``clip(log(1 / (price theta T) - 1) - log(1 / phi - 1), x_min, x_max)``.
    When ``price * theta * T >= 1`` the gradient is negative on the whole
    interval and ``x_min`` is returned.
    """
    if not 0.0 < phi < 1.0:
        raise DomainError(f"best response needs 0 < Phi < 1, got {phi!r}")
    a = price * theta * T
    if a >= 1.0:
        return x_min
    if a <= 0.0:
        return x_max
    raw = math.log(1.0 / a - 1.0) - math.log(1.0 / phi - 1.0)
    return min(max(raw, x_min), x_max)


def best_response_matrix(scenario, phi, prices) -> np.ndarray:
    """Vectorised :func:`best_response` for a full ``Phi`` table.

    ``Phi == 0`` (a queue that can never deliver, e.g. a deep-fade device
    whose fading gap underflows) maps to ``x_min``: its gradient is ``-price``.
    """
    a = np.broadcast_to(prices * scenario.theta * scenario.time_constant, phi.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.log(1.0 / a - 1.0) - np.log(1.0 / phi - 1.0)
    raw = np.where(a <= 0.0, scenario.x_max, raw)
    raw = np.where((a >= 1.0) | (phi <= 0.0), scenario.x_min, raw)
    return np.clip(raw, scenario.x_min, scenario.x_max)


def phi_distributed(fading_exp: float, F_s_estimate: float, x_self: float) -> float:
    """Locally computable ``Phi`` from an ACK-based success estimate.

    ``(1 - E) * F_s_estimate / (1 - exp(-x_self))``
    """
    if not x_self > 0:
        raise DomainError("x_self must be positive (d = 0 makes the estimate undefined)")
    if not 0.0 <= F_s_estimate <= 1.0:
        raise DomainError("success estimate must lie in [0, 1]")
    return (1.0 - fading_exp) * F_s_estimate / -math.expm1(-x_self)


def analytic_success_estimate(scenario) -> SuccessEstimator:
    """Perfect ACK estimator: ``(1 - eps) * F_s`` from the analytic access model."""

    def estimate(x):
        return (1.0 - scenario.per) * qos.access_state(scenario, x).success

    return estimate


def distributed_phi_matrix(scenario, x, success) -> np.ndarray:
    return scenario.fading_gap * success / qos.to_d(x)


# ---------------------------------------------------------------------------
# best-response dynamics


@dataclass
class GameOutcome:
    """Result of a best-response or price-update run."""

    x: np.ndarray
    trajectory: list = field(repr=False)
    utility_trajectory: list = field(repr=False)
    prices: np.ndarray = field(repr=False)
    residual: float = math.inf
    converged: bool = False
    n_iter: int = 0
    messages: int = 0

    @property
    def d(self) -> np.ndarray:
        return qos.to_d(self.x)

    @property
    def utilities(self) -> np.ndarray:
        return self.utility_trajectory[-1]

    def to_csv(self, fh=None, header_comment: str | None = None) -> str:
        """Rows ``(iteration, player, queue, x, d, utility)``; returns the text."""
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "player", "queue", "x", "d", "utility"])
        for it, (x, u) in enumerate(zip(self.trajectory, self.utility_trajectory)):
            d = qos.to_d(x)
            for n in range(x.shape[0]):
                for k in range(x.shape[1]):
                    w.writerow([it, n, k, repr(float(x[n, k])), repr(float(d[n, k])), repr(float(u[n]))])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def best_response_round(scenario, x, prices, info_mode: str = "full",
                        estimator: SuccessEstimator | None = None) -> np.ndarray:
    """One synchronous round: every queue best-responds to ``x``."""
    if info_mode == "full":
        phi = qos.phi_matrix(scenario, x)
    elif info_mode == "distributed":
        est = estimator if estimator is not None else analytic_success_estimate(scenario)
        phi = distributed_phi_matrix(scenario, x, est(x))
    else:
        raise DomainError(f"unknown info mode {info_mode!r}")
    return best_response_matrix(scenario, phi, prices)


def best_response_residual(scenario, x, prices) -> float:
    return float(np.max(np.abs(x - best_response_round(scenario, x, prices))))


def run_algorithm1(scenario, prices, initial_x=None, *, tol: float = 1e-6, delta: float = 1e-3,
                   max_iter: int = 500, info_mode: str = "full",
                   estimator: SuccessEstimator | None = None) -> GameOutcome:
    """Synchronous best-response dynamics with the round-two safeguard.

    Round two is forced to move away from the starting point: if the best
    response does not exceed ``x0`` for a coordinate that moved up in round
    one, that coordinate is set to ``x0 + delta`` (mirrored for coordinates
    that moved down). Hitting ``max_iter`` yields ``converged=False``.
    """
    scenario = check_scenario(scenario)
    prices = check_prices(prices, scenario)
    x = check_policy(scenario.x_min if initial_x is None else initial_x, scenario)
    traj = [x]
    utils = [utilities(scenario, x, prices)]
    messages = 0
    per_round = x.size if info_mode == "full" else 0
    converged = False
    residual = math.inf
    x0 = x
    t = 0
    while t < max_iter:
        t += 1
        new = best_response_round(scenario, x, prices, info_mode, estimator)
        if t == 2:
            up = traj[1] > x0
            down = traj[1] < x0
            new = np.where(up & (new <= x0), np.minimum(x0 + delta, scenario.x_max), new)
            new = np.where(down & (new >= x0), np.maximum(x0 - delta, scenario.x_min), new)
        messages += per_round
        change = float(np.max(np.abs(new - x)))
        x = new
        traj.append(x)
        utils.append(utilities(scenario, x, prices))
        if change <= tol:
            residual = float(np.max(np.abs(
                x - best_response_round(scenario, x, prices, info_mode, estimator))))
            if residual <= tol:
                converged = True
                break
    if not converged:
        residual = float(np.max(np.abs(x - best_response_round(scenario, x, prices, info_mode, estimator))))
    return GameOutcome(x=x, trajectory=traj, utility_trajectory=utils, prices=prices,
                       residual=residual, converged=converged, n_iter=t, messages=messages)


class BestResponseGame(BaseEstimator):
    """Estimator wrapper around :func:`run_algorithm1`.

    ``fit(scenario)`` computes the equilibrium policy; ``score(scenario)``
    returns the total effective capacity it achieves (higher is better),
    so parameter sweeps over ``price`` can use ``clone``/``set_params``.

    Parameters
    ----------
    price : float or array of shape (N, K)
        Access price per unit of ``x``.
    tol : float
        Stop once the largest per-round change and the best-response
        residual are both below this value.
    delta : float
        Round-two safeguard increment.
    max_iter : int
        Round cap.
    info_mode : {"full", "distributed"}
        Source of ``Phi``: the exchanged policy vector, or local ACK counts.
    init : {"min", "max", "random"}
        Starting point when ``fit`` is not given ``x0``.
    random_state : int or None
        Seed for ``init="random"``.
    """

    def __init__(self, price=1000.0, tol=1e-6, delta=1e-3, max_iter=500, info_mode="full",
                 init="min", random_state=None):
        self.price = price
        self.tol = tol
        self.delta = delta
        self.max_iter = max_iter
        self.info_mode = info_mode
        self.init = init
        self.random_state = random_state

    def _initial(self, scenario):
        if self.init == "min":
            return np.full(scenario.shape, scenario.x_min)
        if self.init == "max":
            return np.full(scenario.shape, scenario.x_max)
        if self.init == "random":
            rng = np.random.default_rng(self.random_state)
            return rng.uniform(scenario.x_min, scenario.x_max, scenario.shape)
        raise DomainError(f"unknown init {self.init!r}")

    def fit(self, scenario, x0=None, estimator: SuccessEstimator | None = None):
        scenario = check_scenario(scenario)
        start = self._initial(scenario) if x0 is None else x0
        self.outcome_ = run_algorithm1(scenario, self.price, start, tol=self.tol, delta=self.delta,
                                       max_iter=self.max_iter, info_mode=self.info_mode,
                                       estimator=estimator)
        self.x_ = self.outcome_.x
        self.d_ = self.outcome_.d
        self.n_iter_ = self.outcome_.n_iter
        self.converged_ = self.outcome_.converged
        return self

    def predict(self, scenario=None):
        """Barring probabilities ``d`` of the fitted equilibrium."""
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "x_")
        return self.d_

    def score(self, scenario):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "x_")
        scenario = check_scenario(scenario)
        return float(qos.capacity_matrix(scenario, self.x_).sum())
