"""Effective-capacity analysis and access-barring games for massive MTC uplinks."""

from .baseline import GridSearch, ParticleSwarm, PsoConfig, grid_search_oracle, pso_optimize, total_effective_capacity
from .exceptions import (ConfigurationError, DomainError, InfeasibleQoSError, MmtcError, NoCrossingError,
                         NoEstimateError)
from .game import BestResponseGame, GameOutcome, best_response, run_algorithm1
from .pricing import PriceUpdateGame, run_algorithm2
from .qos import BarringPolicy, capacity_matrix, effective_capacity, solve_power, solve_qos_exponent
from .scenario import Scenario, ScenarioConfig, load_scenario
from .sim import SimStats, run_simulation

__version__ = "0.1.0"

__all__ = [
    "BarringPolicy", "BestResponseGame", "ConfigurationError", "DomainError", "GameOutcome", "GridSearch",
    "InfeasibleQoSError", "MmtcError", "NoCrossingError", "NoEstimateError", "ParticleSwarm", "PriceUpdateGame",
    "PsoConfig", "Scenario", "ScenarioConfig", "SimStats", "best_response", "capacity_matrix",
    "effective_capacity", "grid_search_oracle", "load_scenario", "pso_optimize", "run_algorithm1",
    "run_algorithm2", "run_simulation", "solve_power", "solve_qos_exponent", "total_effective_capacity",
]
