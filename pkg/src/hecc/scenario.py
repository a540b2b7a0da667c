"""Network topology, channel, task and request generation.

All randomness is derived from ``ScenarioConfig.rng_seed`` through named
substreams keyed by (stream, frame, slot), so that two runs of different
schemes on the same seed see exactly the same channels, tasks and requests,
no matter how many slots each scheme actually executes.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
import yaml

from .units import BITS_PER_BYTE, db_to_linear, dbm_to_watt

STREAMS = {"positions": 0, "channels": 1, "tasks": 2, "requests": 3, "schemes": 4, "solver": 5}

CONFIG_ENV_VAR = "HECC_CONFIG"


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for one named stream and index tuple."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name], *map(int, index)))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class ScenarioConfig:
    """Full simulation parameterization in SI units.

    Defaults follow the simulation table of the reference setting
    (M=8 UEs, K=2 ESs, S=8 services, 10 MHz, -174 dBm/Hz, 23 dBm, ...).
    Latency/cost weights are not given there; see README for the chosen split.
    """

    num_ues: int = 8
    num_ess: int = 2
    num_services: int = 8
    antennas: int = 8
    area_side: float = 200.0
    es_positions: tuple | None = None
    ue_positions: tuple | None = None
    cloud_distance: float = 10e3
    bandwidth: float = 10e6
    noise_density: float = float(dbm_to_watt(-174.0))
    tx_power: float = float(dbm_to_watt(23.0))
    ue_rate: float = 1e9
    es_rate: float = 2e9
    cloud_rate: float = 4e9
    es_capacity: float = 20e9
    cloud_capacity: float = 30e9
    fronthaul_rate: float = 5e9
    backhaul_rate: float = 1e9
    propagation_speed: float = 2e8
    max_services_per_es: int = 6
    price_install: float = 0.1
    price_uninstall: float = 0.05
    price_operate: float = 0.1
    price_request: float = 0.01
    cost_cap: float = 20.0
    energy_cap: float = 1.0
    latency_cap: float = 2e-3
    rate_floor: float = 1e6
    weight_latency: float = 0.99
    weight_cost: float = 0.01
    eff_capacitance: float = 1e-27
    task_bytes: float = 1354.0
    complexity_band: tuple = (200.0, 500.0)
    request_period: int = 5
    frames: int = 50
    slots_per_frame: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("es_positions", "ue_positions"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(tuple(float(c) for c in p) for p in value))
        object.__setattr__(self, "complexity_band", tuple(float(c) for c in self.complexity_band))
        self.validate()

    def validate(self) -> None:
        if self.num_ues < 1 or self.num_ess < 1 or self.num_services < 1:
            raise ValueError("num_ues, num_ess and num_services must be >= 1")
        if self.max_services_per_es < 1:
            raise ValueError("max_services_per_es must be >= 1")
        if abs(self.weight_latency + self.weight_cost - 1.0) > 1e-9:
            raise ValueError("weight_latency + weight_cost must equal 1")
        if self.weight_latency < 0 or self.weight_cost < 0:
            raise ValueError("weights must be non-negative")
        positive = (
            "area_side", "cloud_distance", "bandwidth", "noise_density", "tx_power", "ue_rate",
            "es_rate", "cloud_rate", "es_capacity", "cloud_capacity", "fronthaul_rate",
            "backhaul_rate", "propagation_speed", "price_install", "price_uninstall",
            "price_operate", "price_request", "cost_cap", "energy_cap", "latency_cap",
            "rate_floor", "eff_capacitance", "task_bytes",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.price_uninstall > self.price_install:
            raise ValueError("uninstall price must not exceed install price")
        lo, hi = self.complexity_band
        if not 0 < lo <= hi:
            raise ValueError("complexity_band must satisfy 0 < lo <= hi")
        if self.antennas < 1 or self.request_period < 1 or self.slots_per_frame < 1:
            raise ValueError("antennas, request_period and slots_per_frame must be >= 1")
        for name, count in (("es_positions", self.num_ess), ("ue_positions", self.num_ues)):
            pos = getattr(self, name)
            if pos is None:
                continue
            arr = np.asarray(pos, dtype=float)
            if arr.shape != (count, 2):
                raise ValueError(f"{name} must have shape ({count}, 2)")
            if np.any(arr < 0) or np.any(arr > self.area_side):
                raise ValueError(f"{name} must lie inside the {self.area_side} m square")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    @property
    def task_bits(self) -> float:
        return self.task_bytes * BITS_PER_BYTE


# keys accepted in config files that need a unit conversion on load
_CONVERTED_KEYS = {
    "noise_density_dbm": ("noise_density", lambda v: float(dbm_to_watt(v))),
    "tx_power_dbm": ("tx_power", lambda v: float(dbm_to_watt(v))),
}


def _flatten(mapping: Mapping[str, Any], out: dict) -> dict:
    names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    for key, value in mapping.items():
        if isinstance(value, Mapping) and key not in names:
            _flatten(value, out)
        elif key in out:
            raise ValueError(f"duplicate config key {key!r}")
        else:
            out[key] = value
    return out


def config_from_mapping(mapping: Mapping[str, Any]) -> ScenarioConfig:
    """Build a config from a (possibly sectioned) mapping of field names.

    Section names are free-form; leaves must be ``ScenarioConfig`` field names
    or one of the ``*_dbm`` aliases. Missing fields keep their defaults.
    """
    flat = _flatten(mapping or {}, {})
    names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    kwargs = {}
    for key, value in flat.items():
        if key in _CONVERTED_KEYS:
            target, conv = _CONVERTED_KEYS[key]
            kwargs[target] = conv(value)
        elif key in names:
            kwargs[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    return ScenarioConfig(**kwargs)


def load_config(path: str | os.PathLike | None = None) -> ScenarioConfig:
    """Load a YAML config; falls back to ``$HECC_CONFIG`` then to defaults."""
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return ScenarioConfig()
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, Mapping):
        raise ValueError("config file must contain a mapping at top level")
    return config_from_mapping(data)


def generate_topology(config: ScenarioConfig) -> ScenarioConfig:
    """Fill in ES and UE positions.

    ESs sit on the horizontal midline at x = side*k/(K+1); for K=2 and K=4 this
    reproduces the reference layouts. UEs are uniform over the square.
    """
    side = config.area_side
    changes = {}
    if config.es_positions is None:
        K = config.num_ess
        if K == 2:
            xs = [66.0, 133.0]
        else:
            xs = [side * k / (K + 1) for k in range(1, K + 1)]
        changes["es_positions"] = tuple((x, side / 2) for x in xs)
    if config.ue_positions is None:
        rng = substream(config.rng_seed, "positions")
        pts = rng.uniform(0.0, side, size=(config.num_ues, 2))
        changes["ue_positions"] = tuple(map(tuple, pts))
    return config.replace(**changes) if changes else config


def path_loss_db(distance):
    """Large-scale loss -35.3 - 37.6 log10(d) in dB, d in meters."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("path loss is singular at zero distance")
    out = -35.3 - 37.6 * np.log10(d)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ChannelState:
    path_loss: np.ndarray  # linear power gain, (M, K)
    small_scale: np.ndarray  # complex, (M, K, L)
    gain: np.ndarray  # PL * ||h||^2, (M, K)


def draw_channel(rng: np.random.Generator, antennas: int, path_loss) -> ChannelState:
    """Rayleigh small-scale fading on top of a fixed linear path loss.

    ``path_loss`` may be a scalar or an array; the antenna axis is appended.
    """
    if antennas < 1:
        raise ValueError("antennas must be >= 1")
    pl = np.asarray(path_loss, dtype=float)
    shape = pl.shape + (antennas,)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    norm2 = np.sum(np.abs(h) ** 2, axis=-1)
    return ChannelState(path_loss=pl, small_scale=h, gain=pl * norm2)


@dataclass(frozen=True)
class TaskSpec:
    deadline: float
    size: np.ndarray  # bits, (M,)
    cycles: np.ndarray  # CPU cycles, (M,)
    service_id: np.ndarray  # (M,), 0-based


@dataclass(frozen=True)
class RequestState:
    services: np.ndarray  # (M,), 0-based service index
    regenerations: int = 0


def advance_requests(
    state: RequestState | None,
    frame_index: int,
    rng: np.random.Generator,
    *,
    num_ues: int | None = None,
    num_services: int | None = None,
    period: int = 5,
) -> RequestState:
    """Redraw every UE's requested service once per ``period`` frames."""
    if frame_index < 0:
        raise ValueError("frame_index must be >= 0")
    if state is not None and frame_index % period != 0:
        return state
    if state is None:
        if num_ues is None or num_services is None:
            raise ValueError("num_ues and num_services are needed to initialise requests")
        count = 0
    else:
        num_ues = len(state.services) if num_ues is None else num_ues
        count = state.regenerations
        if num_services is None:
            raise ValueError("num_services is needed to redraw requests")
    services = rng.integers(0, num_services, size=num_ues)
    return RequestState(services=services, regenerations=count + 1)


@dataclass(frozen=True)
class Instance:
    """Everything the evaluators need for one short-term slot."""

    config: ScenarioConfig
    gains: np.ndarray  # (M, K)
    bits: np.ndarray  # (M,)
    cycles: np.ndarray  # (M,)
    services: np.ndarray  # (M,)
    es_distance: np.ndarray  # (K, K)
    cloud_distance: np.ndarray  # (K,)
    frame: int = 0
    slot: int = 0

    @property
    def M(self) -> int:
        return self.gains.shape[0]

    @property
    def K(self) -> int:
        return self.gains.shape[1]

    @property
    def S(self) -> int:
        return self.config.num_services

    def replace(self, **changes) -> "Instance":
        return dataclasses.replace(self, **changes)


class Scenario:
    """Seeded generator for one network realization."""

    def __init__(self, config: ScenarioConfig | None = None):
        self.config = generate_topology(config or ScenarioConfig())
        cfg = self.config
        self.es_pos = np.asarray(cfg.es_positions, dtype=float)
        self.ue_pos = np.asarray(cfg.ue_positions, dtype=float)
        diff = self.ue_pos[:, None, :] - self.es_pos[None, :, :]
        # UEs exactly on an AP would make the path-loss law singular
        self.distance = np.maximum(np.linalg.norm(diff, axis=-1), 1.0)
        self.path_loss = db_to_linear(path_loss_db(self.distance))
        self.es_distance = np.linalg.norm(self.es_pos[:, None, :] - self.es_pos[None, :, :], axis=-1)
        self.cloud_distance = np.full(cfg.num_ess, float(cfg.cloud_distance))
        self._requests: dict[int, RequestState] = {}

    def channel(self, frame: int, slot: int) -> ChannelState:
        rng = substream(self.config.rng_seed, "channels", frame, slot)
        return draw_channel(rng, self.config.antennas, self.path_loss)

    def requests(self, frame: int) -> RequestState:
        if frame in self._requests:
            return self._requests[frame]
        cfg = self.config
        start = max((f for f in self._requests if f < frame), default=None)
        state = self._requests[start] if start is not None else None
        for f in range(0 if start is None else start + 1, frame + 1):
            state = advance_requests(
                state, f, substream(cfg.rng_seed, "requests", f),
                num_ues=cfg.num_ues, num_services=cfg.num_services, period=cfg.request_period,
            )
            self._requests[f] = state
        return state

    def tasks(self, frame: int, slot: int) -> TaskSpec:
        cfg = self.config
        rng = substream(cfg.rng_seed, "tasks", frame, slot)
        lo, hi = cfg.complexity_band
        size = np.full(cfg.num_ues, cfg.task_bits)
        cycles = cfg.task_bytes * rng.uniform(lo, hi, size=cfg.num_ues)
        return TaskSpec(cfg.latency_cap, size, cycles, self.requests(frame).services.copy())

    def instance(self, frame: int, slot: int) -> Instance:
        ch = self.channel(frame, slot)
        task = self.tasks(frame, slot)
        return Instance(
            config=self.config, gains=ch.gain, bits=task.size, cycles=task.cycles,
            services=task.service_id, es_distance=self.es_distance,
            cloud_distance=self.cloud_distance, frame=frame, slot=slot,
        )
