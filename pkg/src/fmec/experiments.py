"""Experiment orchestration: training runs, comparisons, evaluation and per-slot exports.

Independent runs fan out over a thread pool capped by ``FMEC_THREADS``; results
are always merged in a fixed (algorithm, seed) order so outputs do not depend
on scheduling.
"""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .agent import TRACE_COLUMNS, RatAgent, train
from .baselines import run_cm, run_le, run_rm
from .cat import initial_trajectory, run_cat
from .env import EpisodeLog
from .model import Mode
from .scenario import STREAM_TRAIN, Scenario, substream

log = logging.getLogger(__name__)

ALGORITHMS = ("LE", "RM", "CM", "CAT", "RAT", "DDPG")
DEFAULT_COMPARE = ("LE", "RM", "CM", "CAT", "RAT")


def max_workers(n_jobs: int) -> int:
    raw = os.environ.get("FMEC_THREADS")
    if raw is None:
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError:
            raise ValueError(f"FMEC_THREADS must be an integer, got {raw!r}") from None
        if cap < 1:
            raise ValueError("FMEC_THREADS must be at least 1")
    return max(1, min(cap, n_jobs))


def fan_out(jobs: dict, fn: Callable) -> dict:
    """Apply ``fn`` to every job value; the result dict follows the sorted job keys."""
    keys = sorted(jobs)
    workers = max_workers(len(keys))
    if workers == 1:
        return {k: fn(jobs[k]) for k in keys}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {k: pool.submit(fn, jobs[k]) for k in keys}
        return {k: futures[k].result() for k in keys}


# ---------------------------------------------------------------- CSV helpers

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def write_csv(path: str | Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- training

def train_run(scenario: Scenario, out_dir: str | Path, *, algorithm: str = "RAT",
              epochs: int | None = None, seed: int | None = None) -> RatAgent:
    """Train RAT (or uniform-replay DDPG) and write checkpoint, epoch and slot traces.

    Files: ``checkpoint.json``, ``trace.csv`` (one row per epoch),
    ``slots.csv`` (one row per epoch and slot; its energies sum to the epoch
    totals) and, in 3-D, ``battery.csv`` with every UAV's battery after each slot.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hp = scenario.rat
    if algorithm.upper() == "DDPG":
        hp = replace(hp, prioritized=False)
    elif algorithm.upper() != "RAT":
        raise ValueError(f"unknown learner {algorithm!r} (use rat or ddpg)")
    seed = scenario.config.seed if seed is None else seed
    agent = RatAgent(scenario, hp, substream(seed, STREAM_TRAIN))
    slot_rows, battery_rows = [], []
    three_d = scenario.mode is Mode.THREE_D

    def on_epoch(rec, ep_log: EpisodeLog):
        for t, (e, z) in enumerate(zip(ep_log.energy, ep_log.reward)):
            slot_rows.append((rec.epoch, t, e, z))
        if three_d:
            for t, b in enumerate(ep_log.battery):
                for j, bj in enumerate(b):
                    battery_rows.append((rec.epoch, t, j, bj))

    trace = train(agent, scenario, epochs, on_epoch)
    agent.save(out / "checkpoint.json")
    write_csv(out / "trace.csv", TRACE_COLUMNS,
              [(r.epoch, r.sum_energy_J, r.sum_reward, r.noise_rho, r.critic_loss)
               for r in trace])
    write_csv(out / "slots.csv", ("epoch", "slot", "energy_J", "reward"), slot_rows)
    if three_d:
        write_csv(out / "battery.csv", ("epoch", "slot", "uav", "battery_J"), battery_rows)
    return agent


# ---------------------------------------------------------------- comparison

@dataclass(frozen=True)
class RunResult:
    algorithm: str
    seed: int
    energy_J: float


def _heldout_mean(scenario: Scenario, fn) -> float:
    return float(np.mean([fn(k, p) for k, p in enumerate(scenario.heldout)]))


def run_algorithm(scenario: Scenario, algorithm: str, seed: int, *, epochs: int | None = None,
                  cat_init: str = "circle-100") -> float:
    """Energy of one run: the mean over held-out taking-off points (CAT: its final objective)."""
    if algorithm == "LE":
        return run_le(scenario)
    if algorithm == "RM":
        n = len(scenario.heldout)
        return _heldout_mean(scenario, lambda k, p: run_rm(scenario, p, seed * n + k)[1])
    if algorithm == "CM":
        return _heldout_mean(scenario, lambda k, p: run_cm(scenario, p, seed=seed)[1])
    if algorithm == "CAT":
        return run_cat(initial_trajectory(scenario, cat_init), scenario).final
    if algorithm in ("RAT", "DDPG"):
        hp = scenario.rat if algorithm == "RAT" else replace(scenario.rat, prioritized=False)
        agent = RatAgent(scenario, hp, substream(seed, STREAM_TRAIN))
        train(agent, scenario, epochs)
        return _heldout_mean(scenario, lambda k, p: agent.evaluate(scenario, p).total_energy)
    raise ValueError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")


def compare(scenario: Scenario, seeds, algorithms=DEFAULT_COMPARE, *,
            epochs: int | None = None, cat_init: str = "circle-100") -> list[RunResult]:
    """Run every algorithm for every seed; deterministic algorithms run once."""
    algorithms = [a.upper() for a in algorithms]
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {a!r}; choose from {', '.join(ALGORITHMS)}")
    if "CAT" in algorithms and scenario.mode is not Mode.TWO_D:
        log.warning("CAT covers the 2-D model only; skipping it for a 3-D scenario")
        algorithms.remove("CAT")
    jobs = {}
    for a in algorithms:
        run_seeds = [seeds[0]] if a in ("LE", "CAT") else list(seeds)
        for s in run_seeds:
            jobs[(ALGORITHMS.index(a), s)] = (a, s)
    done = fan_out(jobs, lambda job: run_algorithm(scenario, job[0], job[1], epochs=epochs,
                                                   cat_init=cat_init))
    return [RunResult(jobs[k][0], jobs[k][1], e) for k, e in done.items()]


SUMMARY_COLUMNS = ("algorithm", "runs", "mean_energy_J", "std_energy_J")


def summarize(results: list[RunResult]) -> list[tuple]:
    rows = []
    order = sorted({r.algorithm for r in results}, key=ALGORITHMS.index)
    for a in order:
        e = np.array([r.energy_J for r in results if r.algorithm == a])
        rows.append((a, len(e), float(e.mean()), float(e.std())))
    return rows


def write_compare(results: list[RunResult], out: str | Path) -> Path:
    """Summary CSV at ``out`` plus the per-run detail next to it (``<stem>_runs.csv``)."""
    out = Path(out)
    detail = out.with_name(out.stem + "_runs.csv")
    write_csv(out, SUMMARY_COLUMNS, summarize(results))
    write_csv(detail, ("algorithm", "seed", "energy_J"),
              [(r.algorithm, r.seed, r.energy_J) for r in results])
    return detail


# ---------------------------------------------------------------- evaluation

EVAL_COLUMNS = ("index", "RAT", "RM", "CM", "LE")


def evaluate_points(agent: RatAgent, scenario: Scenario, n_points: int | None = None):
    """Per held-out taking-off point energies of the agent and the baselines."""
    n = len(scenario.heldout) if n_points is None else n_points
    if not 1 <= n <= len(scenario.heldout):
        raise ValueError(f"points must lie in [1, {len(scenario.heldout)}], got {n}")
    le = run_le(scenario)

    def one(k):
        p = scenario.heldout[k]
        return (k, agent.evaluate(scenario, p).total_energy, run_rm(scenario, p, k)[1],
                run_cm(scenario, p)[1], le)

    return list(fan_out({k: k for k in range(n)}, one).values())


# ---------------------------------------------------------------- per-slot logs

UAV_COLUMNS = ("slot", "uav", "x", "y", "z", "theta_h", "theta_v", "dist", "power_W",
               "battery_J", "violated", "n_served")
UE_COLUMNS = ("slot", "ue", "assigned_uav", "energy_J")
SLOT_COLUMNS = ("slot", "energy_J", "reward")


def write_slot_logs(ep: EpisodeLog, out_dir: str | Path) -> None:
    """Per-slot UAV, UE and slot-total files; slot energies sum the UE rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    uav_rows, ue_rows, slot_rows = [], [], []
    for t in range(len(ep.energy)):
        pos, act = ep.positions[t + 1], ep.actions[t]
        assign = ep.assign[t]
        for j in range(len(pos)):
            uav_rows.append((t, j, *pos[j], *act[j], ep.power[t][j], ep.battery[t + 1][j],
                             bool(ep.violated[t][j]), int(np.sum(assign == j + 1))))
        for i, (a, e) in enumerate(zip(assign, ep.ue_energy[t])):
            ue_rows.append((t, i, int(a), e))
        slot_rows.append((t, ep.energy[t], ep.reward[t]))
    write_csv(out / "uav_slots.csv", UAV_COLUMNS, uav_rows)
    write_csv(out / "ue_slots.csv", UE_COLUMNS, ue_rows)
    write_csv(out / "slots.csv", SLOT_COLUMNS, slot_rows)
