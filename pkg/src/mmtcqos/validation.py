"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigurationError, DomainError


def check_scenario(scenario):
    """Coerce a scenario-like object into a :class:`~mmtcqos.scenario.Scenario`."""
    from .scenario import load_scenario

    return load_scenario(scenario)


def check_policy(x, scenario, *, name: str = "x") -> np.ndarray:
    """Return ``x`` as a float ``(N, K)`` array inside ``[x_min, x_max]``.

    Scalars broadcast. Values within 1e-12 of a bound are snapped onto it.
    """
    arr = np.asarray(x, dtype=float)
    try:
        arr = np.broadcast_to(arr, scenario.shape).copy()
    except ValueError:
        raise ConfigurationError(f"{name} has shape {arr.shape}, expected {scenario.shape}") from None
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    lo, hi = scenario.x_min, scenario.x_max
    if np.any(arr < lo - 1e-12) or np.any(arr > hi + 1e-12):
        raise DomainError(f"{name} outside [{lo:.6g}, {hi:.6g}]")
    return np.clip(arr, lo, hi)


def check_prices(prices, scenario) -> np.ndarray:
    arr = np.asarray(prices, dtype=float)
    try:
        arr = np.broadcast_to(arr, scenario.shape).copy()
    except ValueError:
        raise ConfigurationError(f"prices have shape {arr.shape}, expected {scenario.shape}") from None
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise DomainError("prices must be finite and nonnegative")
    return arr
