"""Scenario configuration and the derived per-queue arrays.

A :class:`ScenarioConfig` mirrors the JSON scenario file section by section.
:class:`Scenario` is the immutable, fully-derived view the numerical code
works with: every per-(device, class) quantity is an ``(N, K)`` array.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import phy
from .exceptions import ConfigurationError
from .traffic import QueueProfile

_NUM = {"type": "number"}
_NUM_OR_LIST = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 1}]}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_devices": {"type": "integer", "minimum": 1},
                "n_classes": {"type": "integer", "minimum": 1},
                "n_preambles": {"type": "integer", "minimum": 1},
                "slot": {"type": "number", "exclusiveMinimum": 0},
                "superframe": {"type": "number", "exclusiveMinimum": 0},
                "data_phase": {"type": "number", "exclusiveMinimum": 0},
                "access_phase": {"type": ["number", "null"]},
                "bandwidth": {"type": "number"},
                "symbol_duration": {"type": "number"},
                "symbol_bandwidth": {"type": "number"},
                "symbols": {"type": ["integer", "null"], "minimum": 1},
                "area_side": {"type": "number", "exclusiveMinimum": 0},
                "noise_density_dbm": _NUM,
                "tx_power_dbm": _NUM_OR_LIST,
                "fading": {"enum": ["rayleigh", "none"]},
                "distances": {"type": ["array", "null"], "items": _NUM},
                "time_constant": {
                    "oneOf": [{"enum": ["superframe", "access_phase"]}, {"type": "number"}]
                },
            },
        },
        "traffic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "arrival_prob": _NUM_OR_LIST,
                "packet_bits": _NUM_OR_LIST,
                "qos_exponent": _NUM_OR_LIST,
                "per": _NUM_OR_LIST,
                "delay_bound": _NUM_OR_LIST,
                "queue_threshold": _NUM_OR_LIST,
                "idle_mode": {"enum": ["analytic", "fixed", "empirical"]},
                "idle": {"type": ["array", "number", "null"]},
            },
        },
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d_min": _NUM,
                "d_max": _NUM,
                "fixed": {"oneOf": [_NUM_OR_LIST, {"enum": ["game"]}]},
            },
        },
        "game": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "price": _NUM_OR_LIST,
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "info_mode": {"enum": ["full", "distributed"]},
                "init": {"enum": ["min", "max", "random"]},
            },
        },
        "pricing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rho0": {"type": "number", "minimum": 0, "maximum": 1},
                "rho_scale": {"type": "number", "exclusiveMinimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizon": {"type": "integer", "minimum": 1},
                "warmup": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "replications": {"type": "integer", "minimum": 1},
                "saturated": {"type": "boolean"},
                "track_delays": {"type": "boolean"},
                "hist_bin_bits": {"type": "integer", "minimum": 1},
                "hist_bins": {"type": "integer", "minimum": 1},
                "ema_weight": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preambles": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "bandwidths": {"type": "array", "items": _NUM},
                "theta": {"type": "array", "items": _NUM},
                "class_index": {"type": "integer", "minimum": 0},
                "prices": {"type": "array", "items": _NUM},
                "fixed_d": {"type": "array", "items": _NUM},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}


@dataclass(frozen=True)
class SystemConfig:
    n_devices: int = 100
    n_classes: int = 2
    n_preambles: int = 50
    slot: float = 0.5e-3
    superframe: float = 4e-3
    data_phase: float = 3e-3
    access_phase: float | None = None
    bandwidth: float = 360e3
    symbol_duration: float = 66.7e-6
    symbol_bandwidth: float = 15e3
    symbols: int | None = None
    area_side: float = 500.0
    noise_density_dbm: float = -174.0
    tx_power_dbm: float | tuple = 10.0
    fading: str = "rayleigh"
    distances: tuple | None = None
    time_constant: str | float = "superframe"


@dataclass(frozen=True)
class TrafficConfig:
    arrival_prob: float | tuple = 0.1
    packet_bits: float | tuple = 500.0
    qos_exponent: float | tuple = (1e-3, 1e-5)
    per: float | tuple = 1e-5
    delay_bound: float | tuple = 0.1
    queue_threshold: float | tuple = 5000.0
    idle_mode: str = "analytic"
    idle: Any = None


@dataclass(frozen=True)
class PolicyConfig:
    d_min: float = 0.1
    d_max: float = 0.9
    fixed: Any = (0.9, 0.5)


@dataclass(frozen=True)
class GameConfig:
    price: float | tuple = 1000.0
    tol: float = 1e-6
    delta: float = 1e-3
    max_iter: int = 500
    info_mode: str = "full"
    init: str = "min"


@dataclass(frozen=True)
class PricingConfig:
    rho0: float = 0.5
    rho_scale: float = 100.0
    tol: float = 1e-6
    max_iter: int = 20000


@dataclass(frozen=True)
class SimConfig:
    horizon: int = 10000
    warmup: float = 0.1
    replications: int = 1
    saturated: bool = False
    track_delays: bool = False
    hist_bin_bits: int = 100
    hist_bins: int = 2000
    ema_weight: float = 0.01


@dataclass(frozen=True)
class SweepConfig:
    preambles: tuple = (10, 20, 30, 40, 50, 60)
    bandwidths: tuple = (180e3, 360e3, 720e3, 1440e3)
    theta: tuple = (1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 1.5e-3)
    class_index: int = 0
    prices: tuple = (1e2, 1e3, 1e4, 1e5)
    fixed_d: tuple = (0.1, 0.5, 0.9)


@dataclass(frozen=True)
class ScenarioConfig:
    """Full scenario description; section names match the JSON file."""

    system: SystemConfig = field(default_factory=SystemConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    game: GameConfig = field(default_factory=GameConfig)
    pricing: PricingConfig = field(default_factory=PricingConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0

    _SECTIONS = {
        "system": SystemConfig,
        "traffic": TrafficConfig,
        "policy": PolicyConfig,
        "game": GameConfig,
        "pricing": PricingConfig,
        "sim": SimConfig,
        "sweep": SweepConfig,
    }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigurationError(f"invalid scenario at {where}: {exc.message}") from None
        kwargs: dict[str, Any] = {}
        for name, section_cls in cls._SECTIONS.items():
            values = {k: _freeze(v) for k, v in data.get(name, {}).items()}
            kwargs[name] = section_cls(**values)
        if "seed" in data:
            kwargs["seed"] = int(data["seed"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read scenario {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        for name in self._SECTIONS:
            out[name] = _thaw(dataclasses.asdict(getattr(self, name)))
        out["seed"] = self.seed
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def replace(self, **changes) -> "ScenarioConfig":
        """Return a copy with ``section__field=value`` overrides applied.

        >>> ScenarioConfig().replace(system__n_devices=4).system.n_devices
        4
        """
        sections: dict[str, dict] = {}
        top: dict[str, Any] = {}
        for key, value in changes.items():
            if "__" in key:
                sec, fld = key.split("__", 1)
                if sec not in self._SECTIONS:
                    raise ConfigurationError(f"unknown section {sec!r}")
                sections.setdefault(sec, {})[fld] = _freeze(value)
            else:
                top[key] = value
        for sec, vals in sections.items():
            top[sec] = dataclasses.replace(getattr(self, sec), **vals)
        return dataclasses.replace(self, **top)


def _freeze(v):
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    return v


def _thaw(v):
    if isinstance(v, (tuple, list)):
        return [_thaw(x) for x in v]
    if isinstance(v, dict):
        return {k: _thaw(x) for k, x in v.items()}
    return v


def _per_class(value, n: int, k: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full((n, k), float(arr))
    if arr.ndim == 1 and arr.size == k:
        return np.broadcast_to(arr, (n, k)).copy()
    if arr.shape == (n, k):
        return arr.copy()
    raise ConfigurationError(f"{name}: expected scalar, {k} per-class values or an {n}x{k} table")


def _per_device(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape == (n,):
        return arr.copy()
    raise ConfigurationError(f"{name}: expected scalar or {n} per-device values")


def place_devices(n: int, side: float, seed: int) -> np.ndarray:
    """Distances (m) of ``n`` devices dropped uniformly in a square centred on the BS."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CE]))
    xy = rng.uniform(-side / 2.0, side / 2.0, size=(n, 2))
    return np.maximum(np.hypot(xy[:, 0], xy[:, 1]), 1.0)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Derived arrays for one scenario. Build with :meth:`from_config`."""

    config: ScenarioConfig
    channel: phy.ChannelModel
    symbols: int
    theta: np.ndarray
    per: np.ndarray
    mean_bits: np.ndarray
    arrival_prob: np.ndarray
    power: np.ndarray
    snr_mean: np.ndarray
    idle: np.ndarray
    fading_gap: np.ndarray
    delay_bound: np.ndarray
    queue_threshold: np.ndarray

    @classmethod
    def from_config(cls, config: ScenarioConfig | None = None, *, idle=None) -> "Scenario":
        from .qos import fading_gap_matrix, idle_prob_approx

        config = config or ScenarioConfig()
        s, t, pol = config.system, config.traffic, config.policy
        n, k = s.n_devices, s.n_classes
        if s.superframe <= s.data_phase:
            raise ConfigurationError("superframe must be longer than the data phase")
        ratio = s.superframe / s.slot
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigurationError("superframe must be an integer multiple of the slot")
        if not 0.0 < pol.d_min < pol.d_max < 1.0:
            raise ConfigurationError("need 0 < d_min < d_max < 1")

        if s.distances is not None:
            dist = _per_device(s.distances, n, "distances")
            if np.any(dist < 1.0):
                raise ConfigurationError("distances must be >= 1 m")
        else:
            dist = place_devices(n, s.area_side, config.seed)

        if s.symbols is not None:
            S = int(s.symbols)
        else:
            S = phy.symbols_per_frame(
                phy.BlocklengthSpec(s.data_phase, s.symbol_duration, s.bandwidth, s.symbol_bandwidth)
            )
        if not s.bandwidth > 0:
            raise ConfigurationError("bandwidth must be positive")
        noise_power = float(phy.dbm_to_watt(s.noise_density_dbm)) * s.bandwidth
        channel = phy.ChannelModel(dist, noise_power, s.fading)

        theta = _per_class(t.qos_exponent, n, k, "qos_exponent")
        per = _per_class(t.per, n, k, "per")
        bits = _per_class(t.packet_bits, n, k, "packet_bits")
        p = _per_device(t.arrival_prob, n, "arrival_prob")
        power = phy.dbm_to_watt(_per_class(s.tx_power_dbm, n, k, "tx_power_dbm"))
        for name, arr, lo, hi in (("per", per, 0.0, 1.0), ("arrival_prob", p, 0.0, 1.0)):
            if np.any(arr < lo) or np.any(arr > hi):
                raise ConfigurationError(f"{name} out of range")
        if np.any(per <= 0) or np.any(per >= 1):
            raise ConfigurationError("per must lie strictly inside (0, 1)")
        if np.any(theta <= 0) or np.any(theta * bits >= 1.0):
            raise ConfigurationError("need theta > 0 and theta * packet_bits < 1")
        snr = channel.mean_snr(power)

        if t.idle_mode == "fixed" and t.idle is None and idle is None:
            raise ConfigurationError("idle_mode 'fixed' needs an idle table")
        if idle is None and t.idle is not None:
            idle = _per_class(t.idle, n, k, "idle")
        if idle is None:
            idle = idle_prob_approx(theta, bits)
        idle = np.clip(np.asarray(idle, dtype=float), 0.0, 1.0)
        if idle.shape != (n, k):
            raise ConfigurationError(f"idle table must be {n}x{k}")

        gap = fading_gap_matrix(theta, S, per, snr, fading=s.fading)
        return cls(
            config=config,
            channel=channel,
            symbols=S,
            theta=theta,
            per=per,
            mean_bits=bits,
            arrival_prob=p,
            power=power,
            snr_mean=snr,
            idle=idle,
            fading_gap=gap,
            delay_bound=_per_class(t.delay_bound, n, k, "delay_bound"),
            queue_threshold=_per_class(t.queue_threshold, n, k, "queue_threshold"),
        )

    def with_idle(self, idle) -> "Scenario":
        """Same scenario with an externally estimated idle-probability table."""
        return Scenario.from_config(self.config, idle=idle)

    @property
    def n_devices(self) -> int:
        return self.config.system.n_devices

    @property
    def n_classes(self) -> int:
        return self.config.system.n_classes

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_devices, self.n_classes)

    @property
    def n_preambles(self) -> int:
        return self.config.system.n_preambles

    @property
    def slot(self) -> float:
        return self.config.system.slot

    @property
    def superframe(self) -> float:
        return self.config.system.superframe

    @property
    def slots_per_superframe(self) -> int:
        return int(round(self.superframe / self.slot))

    @property
    def access_phase(self) -> float:
        s = self.config.system
        return s.access_phase if s.access_phase is not None else s.superframe - s.data_phase

    @property
    def time_constant(self) -> float:
        """Normalising time of the effective capacity (T_u unless overridden)."""
        tc = self.config.system.time_constant
        if tc == "superframe":
            return self.superframe
        if tc == "access_phase":
            return self.access_phase
        return float(tc)

    @property
    def x_min(self) -> float:
        return -math.log1p(-self.config.policy.d_min)

    @property
    def x_max(self) -> float:
        return -math.log1p(-self.config.policy.d_max)

    @property
    def attempt_base(self) -> np.ndarray:
        """``prod_{j<k} P_idle[n, j] * (1 - P_idle[n, k])``: attempt probability per unit d."""
        higher = np.cumprod(np.hstack([np.ones((self.n_devices, 1)), self.idle[:, :-1]]), axis=1)
        return higher * (1.0 - self.idle)

    def profile(self, n: int, k: int) -> QueueProfile:
        return QueueProfile(
            arrival_prob=float(self.arrival_prob[n]),
            mean_bits=float(self.mean_bits[n, k]),
            qos_exponent=float(self.theta[n, k]),
            per=float(self.per[n, k]),
            delay_bound=float(self.delay_bound[n, k]),
            queue_threshold=float(self.queue_threshold[n, k]),
            tx_power=float(self.power[n, k]),
        )

    def fixed_policy(self) -> np.ndarray:
        """Barring probabilities ``d`` from the ``policy.fixed`` entry."""
        fixed = self.config.policy.fixed
        if fixed == "game":
            raise ConfigurationError("policy.fixed is 'game'; no fixed policy configured")
        return _per_class(fixed, self.n_devices, self.n_classes, "policy.fixed")


def load_scenario(source) -> Scenario:
    """Accept a :class:`Scenario`, :class:`ScenarioConfig`, dict or JSON path."""
    if isinstance(source, Scenario):
        return source
    if isinstance(source, ScenarioConfig):
        return Scenario.from_config(source)
    if isinstance(source, dict):
        return Scenario.from_config(ScenarioConfig.from_dict(source))
    if isinstance(source, (str, Path)):
        return Scenario.from_config(ScenarioConfig.from_json(source))
    raise ConfigurationError(f"cannot build a scenario from {type(source).__name__}")
