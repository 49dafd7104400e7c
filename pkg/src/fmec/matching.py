"""Greedy preference-list matching of UEs to UAVs for a single time slot."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import AtgChannelParams, Mode, SystemParams, atg_rate_h, free_space_rate_sq

log = logging.getLogger(__name__)

PreferenceList = list[tuple[int, float]]


@dataclass
class SlotCosts:
    """Per-slot energies, CPU requirements and eligibility for every UE/UAV pair.

    Arrays indexed ``[j, i]`` refer to UAV ``j`` (0-based) and UE ``i``.
    """

    e_local: np.ndarray   # (N,)
    e_tr: np.ndarray      # (M, N)
    f_req: np.ndarray     # (M, N) minimal CPU share meeting the deadline
    rate: np.ndarray      # (M, N)
    covered: np.ndarray   # (M, N) bool, horizontal distance <= coverage radius
    feasible: np.ndarray  # (M, N) bool, transmission finishes before the deadline

    @property
    def n_uavs(self) -> int:
        return self.e_tr.shape[0]

    @property
    def n_ues(self) -> int:
        return self.e_tr.shape[1]

    @property
    def saving(self) -> np.ndarray:
        return self.e_local[None, :] - self.e_tr

    @property
    def eligible(self) -> np.ndarray:
        """Pairs worth offloading: covered, deadline-feasible, strictly saving energy."""
        return self.covered & self.feasible & (self.saving > 0)


@dataclass
class Association:
    assign: np.ndarray  # (N,) int, 0 = local, j = UAV j (1-based)
    f_c: np.ndarray     # (N,) Hz allocated by the serving UAV, 0 when local

    @classmethod
    def all_local(cls, n: int) -> "Association":
        return cls(np.zeros(n, dtype=int), np.zeros(n))

    def served_by(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assign == j)


def slot_costs(uav_xyz, ue_xy, data_bits, cpu_cycles, sys: SystemParams, *,
               tx_power=0.1, kappa=1e-28, nu=3.0, mode: Mode | str = Mode.TWO_D,
               atg: AtgChannelParams | None = None) -> SlotCosts:
    uav_xyz = np.atleast_2d(np.asarray(uav_xyz, float))
    ue_xy = np.atleast_2d(np.asarray(ue_xy, float))
    data_bits = np.asarray(data_bits, float)
    cpu_cycles = np.asarray(cpu_cycles, float)

    diff = uav_xyz[:, None, :2] - ue_xy[None, :, :]
    r2 = np.einsum("mnk,mnk->mn", diff, diff)
    z = uav_xyz[:, 2:3]
    if Mode(mode) is Mode.THREE_D:
        rate = atg_rate_h(np.sqrt(r2), z, tx_power, sys, atg or AtgChannelParams())
    else:
        rate = free_space_rate_sq(r2, z, tx_power, sys)
    r_max = z * np.tan(sys.theta_max)
    # relative slack so a UE exactly on the rim survives tan() rounding
    covered = r2 <= np.square(r_max) * (1 + 1e-12)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_tr = np.where(data_bits[None, :] > 0, data_bits[None, :] / rate, 0.0)
        slack = sys.t_max - t_tr
        feasible = slack > 0
        f_req = np.where(feasible, cpu_cycles[None, :] / np.where(feasible, slack, 1.0), np.inf)
    e_tr = tx_power * t_tr
    e_local = kappa * cpu_cycles ** nu / sys.t_max ** (nu - 1.0)
    return SlotCosts(e_local, e_tr, f_req, rate, covered, feasible)


def scenario_slot_costs(scenario, uav_xyz, t: int) -> SlotCosts:
    c = scenario.config
    return slot_costs(uav_xyz, scenario.ue_xy, scenario.data_bits[t], scenario.cpu_cycles[t],
                      scenario.sys, tx_power=c.tx_power, kappa=c.kappa, nu=c.nu,
                      mode=scenario.mode, atg=scenario.atg)


def build_preferences(costs: SlotCosts) -> list[PreferenceList]:
    """Per-UAV lists of (ue, saving), best saving first, ties to the lower UE id."""
    prefs = []
    saving = costs.saving
    elig = costs.eligible
    for j in range(costs.n_uavs):
        ues = np.flatnonzero(elig[j])
        # stable sort on -saving keeps ascending ue id among ties
        order = ues[np.argsort(-saving[j, ues], kind="stable")]
        prefs.append([(int(i), float(saving[j, i])) for i in order])
    return prefs


def match(prefs: list[PreferenceList], costs: SlotCosts, sys: SystemParams) -> Association:
    """Round-robin greedy matching.

    Each UAV in turn inspects the head of its list. If it still has a free
    sub-carrier and enough CPU for the UE's minimal share, the UE switches to
    it when unmatched or when this UAV costs strictly less transmission energy.
    Heads failing the capacity check are skipped as well, otherwise a full UAV
    would stall the loop forever.
    """
    n = costs.n_ues
    assign = np.zeros(n, dtype=int)
    count = [0] * costs.n_uavs
    load = [0.0] * costs.n_uavs
    queues = [deque(p) for p in prefs]

    while any(queues):
        for j, q in enumerate(queues):
            if not q:
                continue
            i, _ = q.popleft()
            need = costs.f_req[j, i]
            if count[j] + 1 > sys.v_max or load[j] + need > sys.f_max:
                log.debug("uav %d skips ue %d: capacity", j + 1, i)
                continue
            cur = assign[i]
            if cur == 0:
                take = True
            else:
                e_new, e_cur = costs.e_tr[j, i], costs.e_tr[cur - 1, i]
                take = e_new < e_cur or (e_new == e_cur and j + 1 < cur)
            if take:
                if cur:
                    count[cur - 1] -= 1
                    load[cur - 1] -= costs.f_req[cur - 1, i]
                assign[i] = j + 1
                count[j] += 1
                load[j] += need

    f_c = np.zeros(n)
    served = assign > 0
    f_c[served] = costs.f_req[assign[served] - 1, np.flatnonzero(served)]
    return Association(assign, f_c)


def slot_energy(assoc: Association, costs: SlotCosts) -> float:
    """Total UE energy of the slot under ``assoc``."""
    e = costs.e_local.copy()
    served = np.flatnonzero(assoc.assign > 0)
    e[served] = costs.e_tr[assoc.assign[served] - 1, served]
    return float(e.sum())


def check_association(assoc: Association, costs: SlotCosts, sys: SystemParams,
                      rtol: float = 1e-9) -> list[str]:
    """Return a list of violated feasibility conditions (empty when feasible)."""
    problems = []
    a = assoc.assign
    if a.shape != (costs.n_ues,) or a.min(initial=0) < 0 or a.max(initial=0) > costs.n_uavs:
        problems.append("assignment out of range")
        return problems
    for j in range(1, costs.n_uavs + 1):
        ues = np.flatnonzero(a == j)
        if len(ues) > sys.v_max:
            problems.append(f"uav {j}: {len(ues)} tasks > V_max={sys.v_max}")
        if assoc.f_c[ues].sum() > sys.f_max * (1 + rtol):
            problems.append(f"uav {j}: CPU {assoc.f_c[ues].sum():.6g} > f_max")
        if not costs.covered[j - 1, ues].all():
            problems.append(f"uav {j}: serves a UE outside coverage")
        if not costs.feasible[j - 1, ues].all():
            problems.append(f"uav {j}: serves a UE that misses the deadline")
        short = assoc.f_c[ues] < costs.f_req[j - 1, ues] * (1 - rtol)
        if short.any():
            problems.append(f"uav {j}: CPU share below requirement")
    if np.any(assoc.f_c[a == 0] != 0):
        problems.append("local UE holds UAV CPU")
    return problems


def match_slot(scenario, uav_xyz, t: int) -> tuple[Association, SlotCosts]:
    costs = scenario_slot_costs(scenario, uav_xyz, t)
    return match(build_preferences(costs), costs, scenario.sys), costs
