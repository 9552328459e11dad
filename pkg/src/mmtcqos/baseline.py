"""Centralised references for the total-capacity problem.

Both searchers work directly on the box ``[x_min, x_max]^(N K)`` and
evaluate the objective in batches (the capacity model broadcasts over
leading axes).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import qos
from .exceptions import ConfigurationError, DomainError
from .validation import check_policy, check_scenario

GRID_MAX_DIM = 4


def total_effective_capacity(x, scenario) -> np.ndarray | float:
    """Sum of effective capacities over all queues; batched over leading axes of ``x``."""
    scenario = check_scenario(scenario)
    x = np.asarray(x, dtype=float)
    out = qos.capacity_matrix(scenario, x).sum(axis=(-1, -2))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 40
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    max_iter: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ConfigurationError("swarm needs at least two particles")
        if min(self.inertia, self.cognitive, self.social) < 0:
            raise ConfigurationError("PSO weights must be nonnegative")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")


@dataclass
class SearchResult:
    x: np.ndarray
    objective: float
    history: list = field(default_factory=list, repr=False)  # best objective per iteration
    evaluations: int = 0


def pso_optimize(scenario, cfg: PsoConfig | None = None) -> SearchResult:
    """Global-best particle swarm with the constriction-style defaults.

    Particles that leave the box are clipped back onto it and their
    velocity component is zeroed, so bound optima are reached exactly.
    """
    scenario = check_scenario(scenario)
    cfg = cfg or PsoConfig()
    rng = np.random.default_rng(cfg.seed)
    lo, hi = scenario.x_min, scenario.x_max
    shape = (cfg.swarm_size,) + scenario.shape
    span = hi - lo

    pos = rng.uniform(lo, hi, shape)
    vel = rng.uniform(-span, span, shape) * 0.1
    f = total_effective_capacity(pos, scenario)
    pbest, pbest_f = pos.copy(), f.copy()
    g = int(np.argmax(f))
    gbest, gbest_f = pos[g].copy(), float(f[g])
    history = [gbest_f]
    evals = cfg.swarm_size

    for _ in range(cfg.max_iter):
        r1 = rng.random(shape)
        r2 = rng.random(shape)
        vel = cfg.inertia * vel + cfg.cognitive * r1 * (pbest - pos) + cfg.social * r2 * (gbest - pos)
        vel = np.clip(vel, -span, span)
        pos = pos + vel
        out = (pos < lo) | (pos > hi)
        pos = np.clip(pos, lo, hi)
        vel[out] = 0.0
        f = total_effective_capacity(pos, scenario)
        evals += cfg.swarm_size
        better = f > pbest_f
        pbest[better] = pos[better]
        pbest_f[better] = f[better]
        g = int(np.argmax(pbest_f))
        if pbest_f[g] > gbest_f:
            gbest, gbest_f = pbest[g].copy(), float(pbest_f[g])
        history.append(gbest_f)
    return SearchResult(gbest, gbest_f, history, evals)


def grid_search_oracle(scenario, resolution: int = 200, *, refine: int = 0, chunk: int = 1 << 18) -> SearchResult:
    """Exhaustive argmax over a regular grid of the box.

    ``refine`` extra passes re-grid the cell around the incumbent at the
    same resolution; the incumbent is always kept, so refinement never
    lowers the result.

    Raises
    ------
    DomainError
        If ``N * K`` exceeds the cost guard.
    """
    scenario = check_scenario(scenario)
    dim = scenario.n_devices * scenario.n_classes
    if dim > GRID_MAX_DIM:
        raise DomainError(f"grid search is limited to N*K <= {GRID_MAX_DIM}, got {dim}")
    if resolution < 2:
        raise DomainError("resolution must be >= 2")
    lo = np.full(dim, scenario.x_min)
    hi = np.full(dim, scenario.x_max)
    best_x, best_f = None, -np.inf
    history = []
    evals = 0
    for _ in range(refine + 1):
        axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
        step = (hi - lo) / (resolution - 1)
        points = itertools.product(*axes)
        while True:
            block = np.array(list(itertools.islice(points, chunk)))
            if block.size == 0:
                break
            f = total_effective_capacity(block.reshape((-1,) + scenario.shape), scenario)
            evals += f.size
            i = int(np.argmax(f))
            if f[i] > best_f:
                best_x, best_f = block[i].reshape(scenario.shape), float(f[i])
        history.append(best_f)
        c = best_x.ravel()
        lo = np.maximum(c - step, scenario.x_min)
        hi = np.minimum(c + step, scenario.x_max)
    return SearchResult(best_x, best_f, history, evals)


class ParticleSwarm(BaseEstimator):
    """Estimator wrapper of :func:`pso_optimize`; ``score`` is the total capacity."""

    def __init__(self, swarm_size=40, inertia=0.729, cognitive=1.49445, social=1.49445,
                 max_iter=300, random_state=0):
        self.swarm_size = swarm_size
        self.inertia = inertia
        self.cognitive = cognitive
        self.social = social
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, scenario):
        cfg = PsoConfig(self.swarm_size, self.inertia, self.cognitive, self.social, self.max_iter,
                        0 if self.random_state is None else int(self.random_state))
        res = pso_optimize(scenario, cfg)
        self.x_, self.objective_, self.history_ = res.x, res.objective, res.history
        self.d_ = qos.to_d(res.x)
        return self

    def predict(self, scenario=None):
        check_is_fitted(self, "x_")
        return self.d_

    def score(self, scenario):
        check_is_fitted(self, "x_")
        return total_effective_capacity(self.x_, scenario)


class GridSearch(BaseEstimator):
    """Estimator wrapper of :func:`grid_search_oracle`."""

    def __init__(self, resolution=200, refine=0):
        self.resolution = resolution
        self.refine = refine

    def fit(self, scenario):
        res = grid_search_oracle(scenario, self.resolution, refine=self.refine)
        self.x_, self.objective_ = res.x, res.objective
        self.d_ = qos.to_d(res.x)
        return self

    def predict(self, scenario=None):
        check_is_fitted(self, "x_")
        return self.d_

    def score(self, scenario):
        check_is_fitted(self, "x_")
        return total_effective_capacity(self.x_, scenario)


def fixed_policy_capacity(scenario, d) -> float:
    """Total capacity of a fixed barring policy ``d`` (scalar or (N, K))."""
    scenario = check_scenario(scenario)
    x = check_policy(qos.to_x(np.broadcast_to(np.asarray(d, dtype=float), scenario.shape)), scenario)
    return total_effective_capacity(x, scenario)
