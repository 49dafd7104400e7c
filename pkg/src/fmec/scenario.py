"""Scenario generation and the scenario JSON file format."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig
from .model import Mode, UserEquipment

SCENARIO_VERSION = 1

# independent sub-streams of the scenario seed
STREAM_UE, STREAM_TASKS, STREAM_TAKEOFF, STREAM_HELDOUT, STREAM_TRAIN, STREAM_EVAL = range(6)


def substream(seed: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed).spawn(STREAM_EVAL + 1)[stream]
    return np.random.default_rng(ss)


@dataclass
class Scenario:
    config: ScenarioConfig
    ue_xy: np.ndarray        # (N, 2)
    data_bits: np.ndarray    # (T, N)
    cpu_cycles: np.ndarray   # (T, N)
    takeoff: np.ndarray      # (P, M, 3) training taking-off points
    heldout: np.ndarray      # (P', M, 3) evaluation taking-off points

    @property
    def n_ues(self) -> int:
        return self.ue_xy.shape[0]

    @property
    def n_uavs(self) -> int:
        return self.takeoff.shape[1]

    @property
    def n_slots(self) -> int:
        return self.data_bits.shape[0]

    @property
    def mode(self) -> Mode:
        return self.config.mode_enum

    @cached_property
    def sys(self):
        return self.config.system_params()

    @cached_property
    def atg(self):
        return self.config.atg_params()

    @cached_property
    def prop(self):
        return self.config.propulsion_params()

    @cached_property
    def rat(self):
        return self.config.rat_params()

    def ue(self, i: int) -> UserEquipment:
        c = self.config
        return UserEquipment(tuple(self.ue_xy[i]), c.tx_power, c.kappa, c.nu)

    def local_energy_matrix(self) -> np.ndarray:
        """(T, N) energy of executing every task locally."""
        c = self.config
        return c.kappa * self.cpu_cycles ** c.nu / self.sys.t_max ** (c.nu - 1.0)

    def with_tasks(self, data_bits: np.ndarray, cpu_cycles: np.ndarray) -> "Scenario":
        return Scenario(self.config, self.ue_xy, np.asarray(data_bits, float),
                        np.asarray(cpu_cycles, float), self.takeoff, self.heldout)

    # ---- file format
    def to_dict(self) -> dict:
        return {
            "scenario_version": SCENARIO_VERSION,
            "config": self.config.to_dict(),
            "ue_xy": self.ue_xy.tolist(),
            "data_bits": self.data_bits.tolist(),
            "cpu_cycles": self.cpu_cycles.tolist(),
            "takeoff": self.takeoff.tolist(),
            "heldout": self.heldout.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        version = data.get("scenario_version")
        if version != SCENARIO_VERSION:
            raise ConfigError(
                f"scenario_version {version!r} not supported (expected {SCENARIO_VERSION})")
        cfg = ScenarioConfig.from_dict(data["config"])
        sc = cls(cfg, np.array(data["ue_xy"], float).reshape(-1, 2),
                 np.array(data["data_bits"], float), np.array(data["cpu_cycles"], float),
                 np.array(data["takeoff"], float), np.array(data["heldout"], float))
        _check_shapes(sc)
        return sc

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"scenario file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if "scenario_version" not in data and "schema_version" in data:
            # a bare config: generate from it
            return generate_scenario(ScenarioConfig.from_dict(data))
        return cls.from_dict(data)


def _check_shapes(sc: Scenario) -> None:
    c = sc.config
    n, m, t = c.n_ues, c.n_uavs, c.n_slots
    expect = {"ue_xy": (n, 2), "data_bits": (t, n), "cpu_cycles": (t, n),
              "takeoff": (c.takeoff_pool, m, 3), "heldout": (c.heldout_pool, m, 3)}
    for name, shape in expect.items():
        got = getattr(sc, name).shape
        if got != shape:
            raise ConfigError(f"scenario field {name} has shape {got}, expected {shape}")


def _takeoff_points(rng: np.random.Generator, pool: int, m: int, sys) -> np.ndarray:
    pts = np.empty((pool, m, 3))
    pts[..., 0] = rng.uniform(0.0, sys.x_max, size=(pool, m))
    pts[..., 1] = rng.uniform(0.0, sys.y_max, size=(pool, m))
    pts[..., 2] = sys.z_init
    return pts


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Draw UE positions, per-slot tasks and taking-off points from ``cfg.seed``."""
    if not isinstance(cfg, ScenarioConfig):
        raise ConfigError("generate_scenario expects a ScenarioConfig")
    sys = cfg.system_params()
    if not sys.z_min <= sys.z_init <= sys.z_max and cfg.mode_enum is Mode.THREE_D:
        raise ConfigError("z_init must lie inside [z_min, z_max] in 3d mode")
    n, m, t = cfg.n_ues, cfg.n_uavs, cfg.n_slots

    rng = substream(cfg.seed, STREAM_UE)
    ue_xy = np.column_stack([rng.uniform(0.0, sys.x_max, n), rng.uniform(0.0, sys.y_max, n)])

    rng = substream(cfg.seed, STREAM_TASKS)
    d_lo, d_hi = cfg.d_range_bits
    data_bits = rng.uniform(d_lo, d_hi, size=(t, n))
    cpu_cycles = rng.uniform(cfg.f_lo, cfg.f_hi, size=(t, n))

    takeoff = _takeoff_points(substream(cfg.seed, STREAM_TAKEOFF), cfg.takeoff_pool, m, sys)
    heldout = _takeoff_points(substream(cfg.seed, STREAM_HELDOUT), cfg.heldout_pool, m, sys)
    return Scenario(cfg, ue_xy, data_bits, cpu_cycles, takeoff, heldout)
