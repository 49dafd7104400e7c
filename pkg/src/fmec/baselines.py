"""Comparison policies: local execution, random moving, cluster moving, uniform-replay DDPG."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from sklearn.cluster import KMeans

from .agent import RatAgent, train
from .env import EpisodeLog, heading_to, rollout
from .model import Mode
from .scenario import Scenario


def run_le(scenario: Scenario) -> float:
    """Total energy when every task runs on its own UE."""
    # per-slot sums first, matching how episode logs accumulate
    return float(np.sum([row.sum() for row in scenario.local_energy_matrix()]))


def random_policy(scenario: Scenario, rng: np.random.Generator):
    sys = scenario.sys
    three_d = scenario.mode is Mode.THREE_D

    def _pi(t, uav_xyz, battery):
        m = len(uav_xyz)
        th = rng.uniform(0.0, 2 * math.pi, m)
        tv = rng.uniform(0.0, math.pi, m) if three_d else np.full(m, math.pi / 2)
        d = rng.uniform(0.0, sys.d_max, m)
        return np.column_stack([th, tv, d])

    return _pi


def run_rm(scenario: Scenario, takeoff, seed: int) -> tuple[EpisodeLog, float]:
    log = rollout(scenario, takeoff, random_policy(scenario, np.random.default_rng(seed)))
    return log, log.total_energy


def cluster_centers(ue_xy, n_clusters: int, seed: int = 0) -> np.ndarray:
    """k-means centres (5 restarts, 20 iterations each), ordered as a nearest-neighbour tour."""
    pts = np.asarray(ue_xy, float)
    k = min(n_clusters, len(np.unique(pts, axis=0)))
    if k == 1:
        centers = pts.mean(axis=0, keepdims=True)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            km = KMeans(n_clusters=k, n_init=5, max_iter=20, random_state=seed).fit(pts)
        centers = km.cluster_centers_
    # canonical tour: start at the lexicographically smallest centre
    centers = centers[np.lexsort((centers[:, 1], centers[:, 0]))]
    tour = [0]
    left = list(range(1, len(centers)))
    while left:
        last = centers[tour[-1]]
        nxt = min(left, key=lambda c: (np.sum((centers[c] - last) ** 2), c))
        tour.append(nxt)
        left.remove(nxt)
    return centers[tour]


def route_starts(takeoff_xy, centers) -> list[int]:
    """Start each UAV at its nearest centre, spreading UAVs over distinct centres when possible."""
    taken: set[int] = set()
    starts = []
    for p in np.asarray(takeoff_xy, float):
        d2 = np.sum((centers - p[:2]) ** 2, axis=1)
        order = sorted(range(len(centers)), key=lambda c: (d2[c], c))
        free = [c for c in order if c not in taken]
        c = free[0] if free else order[0]
        taken.add(c)
        starts.append(c)
    return starts


def leg_bounds(n_slots: int, n_legs: int) -> list[tuple[int, int]]:
    """Slot ranges per leg; the last leg absorbs the remainder."""
    n_legs = max(1, min(n_legs, n_slots))
    per = n_slots // n_legs
    bounds = [(k * per, (k + 1) * per) for k in range(n_legs)]
    bounds[-1] = (bounds[-1][0], n_slots)
    return bounds


@dataclass
class ClusterPath:
    centers: np.ndarray       # (K, 2) in tour order
    starts: list[int]         # per-UAV index of the first centre
    legs: list[tuple[int, int]]


def cluster_path(scenario: Scenario, takeoff, n_clusters: int | None = None,
                 seed: int | None = None) -> ClusterPath:
    k = scenario.config.n_clusters if n_clusters is None else n_clusters
    seed = scenario.config.seed if seed is None else seed
    centers = cluster_centers(scenario.ue_xy, k, seed)
    takeoff = np.asarray(takeoff, float)
    return ClusterPath(centers, route_starts(takeoff[:, :2], centers),
                       leg_bounds(scenario.n_slots, len(centers)))


def cm_policy(scenario: Scenario, path: ClusterPath, z0: float):
    sys = scenario.sys
    three_d = scenario.mode is Mode.THREE_D
    n_c = len(path.centers)
    climb = max(1, round(scenario.n_slots / 5)) if three_d else 0

    def _pi(t, uav_xyz, battery):
        acts = []
        for j, pos in enumerate(uav_xyz):
            if t < climb:
                # vertical ascent to the ceiling at a constant rate
                dz = min(sys.d_max, max(0.0, (sys.z_max - pos[2])) / (climb - t))
                acts.append([0.0, 0.0, dz])
                continue
            leg = next(k for k, (a, b) in enumerate(path.legs) if a <= t < b)
            end = path.legs[leg][1]
            target = path.centers[(path.starts[j] + leg) % n_c]
            dst = np.array([target[0], target[1], pos[2]])
            remaining = float(np.linalg.norm(dst[:2] - pos[:2]))
            step = min(sys.d_max, remaining / max(1, end - t))
            acts.append(heading_to(pos, dst, step, scenario.mode))
        return np.array(acts)

    return _pi


def run_cm(scenario: Scenario, takeoff, n_clusters: int | None = None,
           seed: int | None = None) -> tuple[EpisodeLog, float]:
    path = cluster_path(scenario, takeoff, n_clusters, seed)
    log = rollout(scenario, takeoff, cm_policy(scenario, path, scenario.sys.z_init))
    return log, log.total_energy


def run_ddpg_uniform(scenario: Scenario, hp=None, epochs: int | None = None, rng=None,
                     on_epoch=None):
    """Same learner as RAT, sampling the replay buffer uniformly (all weights 1)."""
    hp = replace(hp or scenario.rat, prioritized=False)
    agent = RatAgent(scenario, hp, rng)
    trace = train(agent, scenario, epochs, on_epoch)
    return agent, trace
