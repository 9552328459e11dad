"""Externality prices and the price-update algorithm.

At an interior point the selfish best response coincides with a stationary
point of the total effective capacity when each queue pays exactly the
marginal capacity loss it inflicts on all other devices. That externality
``f[n, k]`` has a closed form; the price-update loop tracks it with a damped update
interleaved with one best-response round.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from . import qos
from .game import GameOutcome, best_response_round, utilities, utility_gradient_matrix
from .validation import check_policy, check_prices, check_scenario


def price_gradient_matrix(scenario, x) -> np.ndarray:
    """Externality ``f[n, k] = -sum_{m != n} sum_b dC[m, b] / dx[n, k]``.

    Device ``n`` enters everybody else's ``Phi`` only through the factor
    ``1 - D_n / M``, which gives

        f[n, k] = base[n, k] e^{-x[n, k]} / (T (M - D_n))
                  * sum_{m != n} sum_b (1 / theta[m, b]) dPhi / (1 - dPhi)

    with ``base`` the idle-probability product of the attempt probability.
    """
    x = np.asarray(x, dtype=float)
    M = scenario.n_preambles
    D = qos.activation(scenario, x)
    dphi = qos.to_d(x) * qos.phi_matrix(scenario, x)
    g = (dphi / (1.0 - dphi) / scenario.theta).sum(axis=-1)
    others = g.sum(axis=-1, keepdims=True) - g
    scale = scenario.attempt_base * np.exp(-x) / (scenario.time_constant * (M - D))[..., None]
    return scale * others[..., None]


def price_gradient(n: int, k: int, scenario, x) -> float:
    return float(price_gradient_matrix(scenario, x)[n, k])


@dataclass(frozen=True)
class PriceState:
    """Prices plus the step-size schedule ``rho_t = rho0 / (1 + t / rho_scale)``."""

    prices: np.ndarray
    t: int = 0
    rho0: float = 0.5
    rho_scale: float = 100.0

    @property
    def rho(self) -> float:
        return self.rho0 / (1.0 + self.t / self.rho_scale)


def price_step(state: PriceState, x, scenario) -> PriceState:
    """``lambda[t+1] = (1 - rho_t) lambda[t] + rho_t f(x)``."""
    f = price_gradient_matrix(scenario, x)
    rho = state.rho
    return replace(state, prices=(1.0 - rho) * state.prices + rho * f, t=state.t + 1)


def price_gap(scenario, x, prices) -> float:
    """``max |lambda - f(x)|`` normalised by ``max(1, max f)``."""
    f = price_gradient_matrix(scenario, np.asarray(x, dtype=float))
    return float(np.max(np.abs(prices - f)) / max(1.0, float(np.max(f))))


def kkt_residual(scenario, x, prices=None) -> float:
    """Stationarity violation of the total-capacity problem, in price units.

    For interior coordinates of an equilibrium this is ``|lambda - f(x)|``
    (own marginal capacity equals the price there). Coordinates pinned at a
    bound only violate the first-order conditions when the marginal total
    capacity points back into the box. Normalised by ``max(1, max f)``.
    ``prices`` is accepted for call-site symmetry but not needed.
    """
    x = np.asarray(x, dtype=float)
    f = price_gradient_matrix(scenario, x)
    own = utility_gradient_matrix(scenario, x, 0.0)
    g = own - f  # d(total capacity) / dx
    at_min = x <= scenario.x_min + 1e-12
    at_max = x >= scenario.x_max - 1e-12
    viol = np.where(at_min, np.maximum(g, 0.0), np.where(at_max, np.maximum(-g, 0.0), np.abs(g)))
    return float(np.max(viol) / max(1.0, float(np.max(f))))


@dataclass
class PriceOutcome:
    game: GameOutcome
    state: PriceState
    price_trajectory: list = field(repr=False)
    capacity_trajectory: list = field(repr=False)
    kkt_trajectory: list = field(repr=False)
    kkt_residual: float = math.inf
    price_gap: float = math.inf

    @property
    def x(self) -> np.ndarray:
        return self.game.x

    @property
    def converged(self) -> bool:
        return self.game.converged

    def to_csv(self, fh=None, header_comment: str | None = None) -> str:
        """Rows ``(iteration, n, k, x, lambda, total_EC, kkt_residual)``."""
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "n", "k", "x", "lambda", "total_EC", "kkt_residual"])
        rows = zip(self.game.trajectory, self.price_trajectory, self.capacity_trajectory, self.kkt_trajectory)
        for it, (x, lam, cap, kkt) in enumerate(rows):
            for n in range(x.shape[0]):
                for k in range(x.shape[1]):
                    w.writerow([it, n, k, repr(float(x[n, k])), repr(float(lam[n, k])),
                                repr(float(cap)), repr(float(kkt))])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def run_algorithm2(scenario, initial_x=None, initial_prices=None, *, rho0: float = 0.5,
                   rho_scale: float = 100.0, tol: float = 1e-6, max_iter: int = 20000,
                   record_every: int = 1) -> PriceOutcome:
    """Alternate one price update with one synchronous best-response round.

    Stops when ``max |x[t] - x[t-1]| <= tol``. Prices start at ``f(x0)``
    unless given. The outcome reports both the projected stationarity
    residual and the raw gap ``max |lambda - f|``; the two coincide when
    every coordinate is interior.
    """
    scenario = check_scenario(scenario)
    x = check_policy(scenario.x_min if initial_x is None else initial_x, scenario)
    lam0 = price_gradient_matrix(scenario, x) if initial_prices is None else check_prices(initial_prices, scenario)
    state = PriceState(lam0, 0, rho0, rho_scale)

    def snapshot(x, lam):
        traj.append(x)
        prices.append(lam)
        utils.append(utilities(scenario, x, lam))
        caps.append(float(qos.capacity_matrix(scenario, x).sum()))
        kkts.append(kkt_residual(scenario, x, lam))

    traj, prices, utils, caps, kkts = [], [], [], [], []
    snapshot(x, state.prices)
    converged = False
    messages = 0
    t = 0
    while t < max_iter:
        t += 1
        state = price_step(state, x, scenario)
        new = best_response_round(scenario, x, state.prices)
        messages += 2 * x.size  # policy up to the BS, price back down
        change = float(np.max(np.abs(new - x)))
        x = new
        if t % record_every == 0 or change <= tol:
            snapshot(x, state.prices)
        if change <= tol:
            converged = True
            break
    if traj[-1] is not x:
        snapshot(x, state.prices)
    residual = float(np.max(np.abs(x - best_response_round(scenario, x, state.prices))))
    outcome = GameOutcome(x=x, trajectory=traj, utility_trajectory=utils, prices=state.prices,
                          residual=residual, converged=converged, n_iter=t, messages=messages)
    return PriceOutcome(outcome, state, prices, caps, kkts, kkt_residual(scenario, x),
                        price_gap(scenario, x, state.prices))


class PriceUpdateGame(BaseEstimator):
    """Estimator wrapper around :func:`run_algorithm2`."""

    def __init__(self, rho0=0.5, rho_scale=100.0, tol=1e-6, max_iter=20000, init="min",
                 random_state=None, record_every=1):
        self.rho0 = rho0
        self.rho_scale = rho_scale
        self.tol = tol
        self.max_iter = max_iter
        self.init = init
        self.random_state = random_state
        self.record_every = record_every

    def fit(self, scenario, x0=None, prices0=None):
        scenario = check_scenario(scenario)
        if x0 is None:
            if self.init == "random":
                x0 = np.random.default_rng(self.random_state).uniform(scenario.x_min, scenario.x_max,
                                                                      scenario.shape)
            else:
                x0 = scenario.x_max if self.init == "max" else scenario.x_min
        self.outcome_ = run_algorithm2(scenario, x0, prices0, rho0=self.rho0, rho_scale=self.rho_scale,
                                       tol=self.tol, max_iter=self.max_iter,
                                       record_every=self.record_every)
        self.x_ = self.outcome_.x
        self.d_ = qos.to_d(self.x_)
        self.prices_ = self.outcome_.state.prices
        self.n_iter_ = self.outcome_.game.n_iter
        self.converged_ = self.outcome_.converged
        self.kkt_residual_ = self.outcome_.kkt_residual
        return self

    def predict(self, scenario=None):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "x_")
        return self.d_

    def score(self, scenario):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "x_")
        return float(qos.capacity_matrix(check_scenario(scenario), self.x_).sum())
