"""Slot-by-slot simulation shared by the learned policy and the baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .matching import Association, match_slot, slot_energy
from .model import (Mode, UavAction, UavState, apply_action, battery_step,
                    power_draw)
from .scenario import Scenario


def reward_value(energy: float, n_violations: int, uav_power_sum: float,
                 sys, mode: Mode | str) -> float:
    """Negative slot cost: UE energy, per-UAV boundary penalty, weighted UAV energy in 3-D."""
    z = -energy - sys.penalty * n_violations
    if Mode(mode) is Mode.THREE_D:
        z -= sys.k_z * uav_power_sum * sys.t_max
    return z


@dataclass
class StepResult:
    uav_xyz: np.ndarray
    battery: np.ndarray
    violated: np.ndarray
    power: np.ndarray
    assoc: Association
    ue_energy: np.ndarray
    energy: float
    reward: float


@dataclass
class EpisodeLog:
    positions: list = field(default_factory=list)   # T+1 entries of (M, 3)
    battery: list = field(default_factory=list)     # T+1 entries of (M,)
    actions: list = field(default_factory=list)     # T entries of (M, 3): theta_h, theta_v, dist
    violated: list = field(default_factory=list)
    power: list = field(default_factory=list)
    assign: list = field(default_factory=list)
    ue_energy: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    reward: list = field(default_factory=list)

    def record(self, actions: np.ndarray, res: StepResult) -> None:
        self.actions.append(np.asarray(actions, float))
        self.positions.append(res.uav_xyz.copy())
        self.battery.append(res.battery.copy())
        self.violated.append(res.violated.copy())
        self.power.append(res.power.copy())
        self.assign.append(res.assoc.assign.copy())
        self.ue_energy.append(res.ue_energy)
        self.energy.append(res.energy)
        self.reward.append(res.reward)

    @property
    def total_energy(self) -> float:
        return float(np.sum(self.energy))

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.reward))

    @property
    def uav_energy(self) -> float:
        return float(np.sum(self.power))


class FlightEnv:
    """UAV fleet over one scenario; each :meth:`step` is one time slot."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.sys = scenario.sys
        self.mode = scenario.mode
        self.t = 0
        self.uav_xyz = None
        self.battery = None

    def reset(self, takeoff) -> EpisodeLog:
        self.t = 0
        self.uav_xyz = np.array(takeoff, float).reshape(self.sc.n_uavs, 3)
        self.battery = np.full(self.sc.n_uavs, self.sys.e_max)
        log = EpisodeLog()
        log.positions.append(self.uav_xyz.copy())
        log.battery.append(self.battery.copy())
        return log

    @property
    def done(self) -> bool:
        return self.t >= self.sc.n_slots

    def step(self, actions) -> StepResult:
        """Advance one slot. ``actions`` is (M, 3) of (theta_h, theta_v, dist)."""
        if self.done:
            raise RuntimeError("episode already finished")
        actions = np.asarray(actions, float).reshape(self.sc.n_uavs, 3)
        m = self.sc.n_uavs
        new_xyz = np.empty_like(self.uav_xyz)
        violated = np.zeros(m, dtype=bool)
        power = np.zeros(m)
        battery = self.battery.copy()
        for j in range(m):
            th, tv, d = actions[j]
            if self.mode is Mode.TWO_D:
                tv = math.pi / 2
            act = UavAction(theta_h=th, dist=d, theta_v=tv)
            st, violated[j] = apply_action(UavState(tuple(self.uav_xyz[j])), act, self.sys,
                                           self.mode, self.sc.config.strict_z)
            new_xyz[j] = st.position
            if self.mode is Mode.THREE_D:
                power[j] = power_draw(d / self.sys.t_max, tv, self.sc.prop)
                battery[j], _ = battery_step(battery[j], power[j], self.sys.t_max)

        assoc, costs = match_slot(self.sc, new_xyz, self.t)
        ue_e = costs.e_local.copy()
        served = np.flatnonzero(assoc.assign > 0)
        ue_e[served] = costs.e_tr[assoc.assign[served] - 1, served]
        energy = slot_energy(assoc, costs)
        reward = reward_value(energy, int(violated.sum()), float(power.sum()), self.sys,
                              self.mode)
        self.uav_xyz, self.battery = new_xyz, battery
        self.t += 1
        return StepResult(new_xyz, battery, violated, power, assoc, ue_e, energy, reward)


def rollout(scenario: Scenario, takeoff, policy) -> EpisodeLog:
    """Run a full episode; ``policy(t, uav_xyz, battery)`` returns (M, 3) actions."""
    env = FlightEnv(scenario)
    log = env.reset(takeoff)
    while not env.done:
        acts = policy(env.t, env.uav_xyz, env.battery)
        log.record(acts, env.step(acts))
    return log


def clip_actions(actions, sys) -> np.ndarray:
    a = np.array(actions, float)
    a[:, 0] = np.mod(a[:, 0], 2 * math.pi)
    a[:, 1] = np.clip(a[:, 1], 0.0, math.pi)
    a[:, 2] = np.clip(a[:, 2], 0.0, sys.d_max)
    return a


def heading_to(src_xyz, dst_xyz, max_step: float, mode: Mode | str) -> np.ndarray:
    """Action (theta_h, theta_v, dist) flying from ``src`` toward ``dst``."""
    delta = np.asarray(dst_xyz, float) - np.asarray(src_xyz, float)
    if Mode(mode) is Mode.TWO_D:
        delta[2] = 0.0
    dist = float(np.linalg.norm(delta))
    if dist == 0.0:
        return np.array([0.0, math.pi / 2, 0.0])
    th = math.atan2(delta[1], delta[0]) % (2 * math.pi)
    tv = math.acos(max(-1.0, min(1.0, delta[2] / dist)))
    return np.array([th, tv, min(dist, max_step)])
