"""Run configuration: scenario shape, physics overrides and RL hyperparameters.

Configs are plain JSON with an explicit ``schema_version``; unknown keys are
rejected so that typos never silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .model import (AtgChannelParams, Mode, PropulsionParams, SystemParams,
                    dbm_to_watt, kb_to_bits)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RatHyperParams:
    gamma: float = 0.999
    batch: int = 64
    buffer: int = 5000
    tau: float = 0.01
    beta: float = 0.6
    mu: float = 0.4
    eps: float = 0.001
    noise_rho: float = 2.0
    noise_decay: float = 0.9995
    epochs: int = 300
    hidden: tuple[int, ...] = (256, 128, 64)
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    reward_scale: float | None = None
    prioritized: bool = True
    updates_per_step: int = 1
    time_feature: bool = False
    wrap_heading: bool = False
    reward_norm: str = "fixed"
    noise_space: str = "action"
    action_space: str = "polar"

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ConfigError("gamma must lie in [0, 1]")
        if not (0 <= self.beta <= 1 and 0 <= self.mu <= 1):
            raise ConfigError("beta and mu must lie in [0, 1]")
        if self.batch < 1 or self.buffer < 1:
            raise ConfigError("batch and buffer must be positive")
        if self.batch > self.buffer:
            raise ConfigError(f"batch {self.batch} exceeds buffer {self.buffer}")
        if not 0 <= self.tau <= 1:
            raise ConfigError("tau must lie in [0, 1]")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.reward_scale is not None and self.reward_scale <= 0:
            raise ConfigError("reward_scale must be positive")
        if self.reward_norm not in ("fixed", "slot"):
            raise ConfigError(f"reward_norm must be 'fixed' or 'slot', got {self.reward_norm!r}")
        if self.noise_space not in ("action", "physical"):
            raise ConfigError(
                f"noise_space must be 'action' or 'physical', got {self.noise_space!r}")
        if self.action_space not in ("polar", "cartesian"):
            raise ConfigError(
                f"action_space must be 'polar' or 'cartesian', got {self.action_space!r}")
        if self.action_space == "cartesian" and (self.wrap_heading or self.noise_space != "action"):
            raise ConfigError("wrap_heading and physical noise only apply to polar actions")
        if self.updates_per_step < 1:
            raise ConfigError("updates_per_step must be at least 1")


@dataclass(frozen=True)
class ScenarioConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    n_ues: int = 20
    n_uavs: int = 2
    n_slots: int = 20
    mode: str = "2d"
    d_lo_kb: float = 10.0
    d_hi_kb: float = 50.0
    f_lo: float = 2e9
    f_hi: float = 2e10
    tx_power: float = 0.1
    kappa: float = 1e-28
    nu: float = 3.0
    sigma2_dbm: float = -90.0
    takeoff_pool: int = 20
    heldout_pool: int = 20
    cm_clusters: int | None = None
    strict_z: bool = False
    system: dict[str, Any] = field(default_factory=dict)
    atg: dict[str, Any] = field(default_factory=dict)
    propulsion: dict[str, Any] = field(default_factory=dict)
    rat: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version {self.schema_version} not supported (expected {SCHEMA_VERSION})")
        for name in ("n_ues", "n_uavs", "n_slots"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        try:
            Mode(self.mode)
        except ValueError:
            raise ConfigError(f"mode must be '2d' or '3d', got {self.mode!r}") from None
        if not 0 <= self.d_lo_kb <= self.d_hi_kb:
            raise ConfigError(f"need 0 <= d_lo_kb <= d_hi_kb, got [{self.d_lo_kb}, {self.d_hi_kb}]")
        if not 0 <= self.f_lo <= self.f_hi:
            raise ConfigError(f"need 0 <= f_lo <= f_hi, got [{self.f_lo}, {self.f_hi}]")
        if self.takeoff_pool < 1 or self.heldout_pool < 1:
            raise ConfigError("taking-off point pools must be non-empty")
        if self.cm_clusters is not None and self.cm_clusters < 1:
            raise ConfigError("cm_clusters must be >= 1")
        if "sigma2" in self.system:
            raise ConfigError("set the noise power via sigma2_dbm, not system.sigma2")
        # build once so override errors surface at load time
        self.system_params()
        self.atg_params()
        self.propulsion_params()
        self.rat_params()

    # ---- derived parameter objects
    def system_params(self) -> SystemParams:
        base = {"sigma2": dbm_to_watt(self.sigma2_dbm)}
        if self.mode == Mode.THREE_D.value:
            base["z_init"] = 50.0
        return _build(SystemParams, {**base, **self.system}, "system")

    def atg_params(self) -> AtgChannelParams:
        return _build(AtgChannelParams, self.atg, "atg")

    def propulsion_params(self) -> PropulsionParams:
        return _build(PropulsionParams, self.propulsion, "propulsion")

    def rat_params(self) -> RatHyperParams:
        kw = dict(self.rat)
        if "hidden" in kw:
            kw["hidden"] = tuple(int(h) for h in kw["hidden"])
        return _build(RatHyperParams, kw, "rat")

    @property
    def mode_enum(self) -> Mode:
        return Mode(self.mode)

    @property
    def d_range_bits(self) -> tuple[float, float]:
        return kb_to_bits(self.d_lo_kb), kb_to_bits(self.d_hi_kb)

    @property
    def n_clusters(self) -> int:
        if self.cm_clusters is not None:
            return self.cm_clusters
        # the reference setup uses 10 clusters over 60 slots
        return max(1, round(self.n_slots / 6))

    # ---- (de)serialisation
    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if "schema_version" not in data:
            raise ConfigError("config is missing schema_version")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def with_(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


def _build(cls, overrides: dict[str, Any], section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(unknown)}")
    try:
        return cls(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


# learner settings that make a 300-epoch desk run learn within one core's budget
DESK_RAT = {"buffer": 2000, "updates_per_step": 4, "time_feature": True,
            "reward_norm": "slot", "action_space": "cartesian"}


def _with_mode_defaults(mode: str, kw: dict) -> dict:
    if mode == "3d":
        kw.setdefault("d_lo_kb", 5.0)
        kw.setdefault("d_hi_kb", 10.0)
        kw.setdefault("f_lo", 7.5e8)
        kw.setdefault("f_hi", 2e9)
        kw.setdefault("system", {"bandwidth": 20e6})
    return kw


def desk_profile(mode: str = "2d", seed: int = 0, **kw) -> ScenarioConfig:
    """Reduced-scale profile sized for a single CPU core."""
    kw["rat"] = {**DESK_RAT, **kw.get("rat", {})}
    return ScenarioConfig(seed=seed, mode=mode, **_with_mode_defaults(mode, kw))


def paper_profile(mode: str = "2d", seed: int = 0, **kw) -> ScenarioConfig:
    """Full-scale reference setup (100 UEs, 3000 epochs)."""
    rat = {"gamma": 0.999, "tau": 0.001, "batch": 512 if mode == "3d" else 128,
           "buffer": 100000 if mode == "3d" else 30000, "epochs": 3000,
           "hidden": [1024, 800, 600]}
    base = dict(n_ues=100, n_uavs=2, n_slots=50 if mode == "3d" else 60, rat=rat,
                cm_clusters=10)
    base.update(kw)
    return ScenarioConfig(seed=seed, mode=mode, **_with_mode_defaults(mode, base))
