"""Alternating optimisation of association and trajectories (2-D free-space model).

Each outer iteration solves the per-slot assignment exactly by depth-first
branch and bound with the trajectory held fixed, then improves the trajectory
with the association held fixed. The trajectory step replaces every rate by
its concave lower bound around the current iterate and solves the resulting
convex problem with an exterior penalty method. A candidate is only accepted
when the true objective does not get worse, which keeps the outer loop
monotone even though the inner solver is approximate.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .matching import Association, SlotCosts, build_preferences, match, slot_costs
from .model import Mode, SystemParams
from .scenario import Scenario

log = logging.getLogger(__name__)

LOG2E = 1.0 / math.log(2.0)
TRACE_COLUMNS = ("iter", "objective_J", "wall_ms")


# ---------------------------------------------------------------- assignment

@dataclass
class SlotProblem:
    """Knapsack view of one slot: per-UE options with energy, CPU and savings."""

    e_local: np.ndarray
    e_tr: np.ndarray
    f_req: np.ndarray
    options: list[list[int]]  # per UE, eligible UAV indices (0-based), best saving first


def slot_problem(costs: SlotCosts, sys: SystemParams) -> SlotProblem:
    elig = costs.eligible & (costs.f_req <= sys.f_max)
    if sys.v_max < 1:
        elig = np.zeros_like(elig)
    saving = costs.saving
    options = []
    for i in range(costs.n_ues):
        js = np.flatnonzero(elig[:, i])
        options.append([int(j) for j in js[np.argsort(-saving[js, i], kind="stable")]])
    return SlotProblem(costs.e_local, costs.e_tr, costs.f_req, options)


def assignment_energy(assign, prob: SlotProblem) -> float:
    """Slot energy of an assignment, summed in UE order."""
    total = 0.0
    for i, a in enumerate(assign):
        total += prob.e_local[i] if a == 0 else prob.e_tr[a - 1, i]
    return total


def branch_and_bound(prob: SlotProblem, sys: SystemParams,
                     incumbent=None, max_nodes: int = 2_000_000) -> tuple[np.ndarray, int]:
    """Maximise total saving subject to per-UAV task-count and CPU budgets.

    The bound on a partial assignment is the saving collected so far plus
    every undecided UE's best single-UAV saving, ignoring capacity.
    Returns the best assignment (0 = local, j = UAV j) and the node count.
    """
    n = len(prob.options)
    m = prob.e_tr.shape[0]
    saving = prob.e_local[None, :] - prob.e_tr
    best_gain = np.array([saving[o[0], i] if o else 0.0 for i, o in enumerate(prob.options)])
    order = [i for i in np.argsort(-best_gain, kind="stable") if prob.options[i]]
    # suffix sums of optimistic gains along the branching order
    rest = np.zeros(len(order) + 1)
    for k in range(len(order) - 1, -1, -1):
        rest[k] = rest[k + 1] + best_gain[order[k]]

    cur = np.zeros(n, dtype=int)
    count = np.zeros(m, dtype=int)
    load = np.zeros(m)
    if incumbent is not None:
        best = np.array(incumbent, dtype=int)
        best_val = float(sum(saving[a - 1, i] for i, a in enumerate(best) if a))
    else:
        best, best_val = cur.copy(), 0.0
    nodes = 0

    def dfs(k: int, val: float):
        nonlocal best, best_val, nodes
        nodes += 1
        if nodes > max_nodes:
            return
        if val + rest[k] <= best_val:
            return
        if k == len(order):
            best, best_val = cur.copy(), val
            return
        i = order[k]
        for j in prob.options[i]:
            need = prob.f_req[j, i]
            if count[j] + 1 > sys.v_max or load[j] + need > sys.f_max:
                continue
            cur[i] = j + 1
            count[j] += 1
            load[j] += need
            dfs(k + 1, val + saving[j, i])
            count[j] -= 1
            load[j] -= need
            cur[i] = 0
        dfs(k + 1, val)

    dfs(0, 0.0)
    if nodes > max_nodes:
        log.warning("branch and bound hit the node limit (%d); result may be suboptimal",
                    max_nodes)
    return best, nodes


def allocate_cpu(assign, f_req, f_max: float) -> np.ndarray:
    """Minimal CPU share per served UE plus an equal split of each UAV's spare capacity.

    Energy does not depend on the share, so any split that covers the minimum
    is optimal for the assignment; handing out the spare capacity gives the
    trajectory step room to move without breaking deadlines.
    """
    assign = np.asarray(assign, int)
    f_c = np.zeros(len(assign))
    for j in range(1, f_req.shape[0] + 1):
        ues = np.flatnonzero(assign == j)
        if len(ues) == 0:
            continue
        need = f_req[j - 1, ues]
        spare = max(0.0, f_max - float(need.sum()))
        f_c[ues] = need + spare / len(ues)
    return f_c


def cat_slot_costs(scenario: Scenario, xy, t: int) -> SlotCosts:
    c = scenario.config
    z = scenario.sys.z_init
    xyz = np.column_stack([np.asarray(xy, float), np.full(len(xy), z)])
    return slot_costs(xyz, scenario.ue_xy, scenario.data_bits[t], scenario.cpu_cycles[t],
                      scenario.sys, tx_power=c.tx_power, kappa=c.kappa, nu=c.nu,
                      mode=Mode.TWO_D)


def solve_assignment(G, scenario: Scenario) -> tuple[list[Association], float]:
    """Exact per-slot assignment for trajectory ``G`` of shape (M, T+1, 2).

    Slot ``t`` is served from waypoint ``G[:, t + 1]``; ``G[:, 0]`` is the start.
    """
    G = np.asarray(G, float)
    sys = scenario.sys
    assocs, total = [], 0.0
    for t in range(scenario.n_slots):
        costs = cat_slot_costs(scenario, G[:, t + 1], t)
        prob = slot_problem(costs, sys)
        greedy = match(build_preferences(costs), costs, sys).assign
        assign, _ = branch_and_bound(prob, sys, incumbent=greedy)
        # keep the greedy answer whenever the search found nothing strictly better
        assocs.append(Association(assign, allocate_cpu(assign, costs.f_req, sys.f_max)))
        total += assignment_energy(assign, prob)
    return assocs, total


# ---------------------------------------------------------------- linearisation

@dataclass
class ScaLinearization:
    """Concave lower bound ``w_lb = K * (|G - q|^2 - |G_r - q|^2) + B`` per pair."""

    K: np.ndarray    # rate per m^2, always negative
    B: np.ndarray    # true rate at the expansion point
    d2_r: np.ndarray  # squared horizontal distance at the expansion point

    def lower_bound(self, d2):
        return self.K * (np.asarray(d2, float) - self.d2_r) + self.B


def linearize(d2_r, z, tx_power, sys: SystemParams) -> ScaLinearization:
    """First-order expansion of the rate in the squared distance around ``d2_r``.

    The rate is convex in the squared distance, so the tangent is a global
    lower bound and touches the true rate at the expansion point.
    """
    d2_r = np.asarray(d2_r, float)
    s = z * z + d2_r
    ap = sys.alpha * tx_power
    K = -sys.bandwidth * ap * LOG2E / (s * (s + ap))
    B = sys.bandwidth * np.log2(1.0 + ap / s)
    return ScaLinearization(K, B, d2_r)


def rate_sq(d2, z, tx_power, sys: SystemParams):
    return sys.bandwidth * np.log2(1.0 + sys.alpha * tx_power / (z * z + d2))


# ---------------------------------------------------------------- trajectory step

@dataclass
class TrajectoryStep:
    G: np.ndarray
    improved: bool
    status: str
    objective: float
    rounds: int = 0


def assignment_objective(G, scenario: Scenario, assocs: list[Association]) -> float:
    """True energy of fixed associations along ``G`` (inf if any becomes infeasible)."""
    total = 0.0
    for t, a in enumerate(assocs):
        costs = cat_slot_costs(scenario, G[:, t + 1], t)
        served = np.flatnonzero(a.assign > 0)
        js = a.assign[served] - 1
        if not (costs.covered[js, served].all() and costs.feasible[js, served].all()):
            return math.inf
        if np.any(costs.f_req[js, served] > a.f_c[served] * (1 + 1e-12)):
            return math.inf
        for i in range(len(a.assign)):
            j = a.assign[i]
            total += costs.e_local[i] if j == 0 else costs.e_tr[j - 1, i]
    return total


@dataclass
class _UavTerms:
    """Served pairs of one UAV over the horizon, flattened."""

    slot: np.ndarray   # waypoint index (1..T) per pair
    q: np.ndarray      # (P, 2) UE positions
    coef: np.ndarray   # P_tr * D, objective numerator
    lin: ScaLinearization
    cap: np.ndarray    # linearised deadline: |G - q|^2 <= cap
    cov2: float


def _uav_terms(j: int, G_r, scenario: Scenario, assocs) -> _UavTerms:
    sys = scenario.sys
    c = scenario.config
    z = sys.z_init
    slots, qs, coefs, rmin = [], [], [], []
    for t, a in enumerate(assocs):
        for i in np.flatnonzero(a.assign == j + 1):
            d = scenario.data_bits[t, i]
            f = scenario.cpu_cycles[t, i]
            slots.append(t + 1)
            qs.append(scenario.ue_xy[i])
            coefs.append(c.tx_power * d)
            # rate needed so that transmission plus remote compute fit the slot
            rmin.append(d / (sys.t_max - f / a.f_c[i]) if d > 0 else 0.0)
    slot = np.array(slots, dtype=int)
    q = np.array(qs, float).reshape(-1, 2)
    d2_r = np.sum((G_r[j, slot] - q) ** 2, axis=1)
    lin = linearize(d2_r, z, c.tx_power, sys)
    cap = d2_r + (lin.B - np.array(rmin)) / (-lin.K)
    cov2 = (z * math.tan(sys.theta_max)) ** 2
    return _UavTerms(slot, q, np.array(coefs), lin, cap, cov2)


def _feasible(Gj, g0, terms: _UavTerms, sys: SystemParams, tol: float = 1e-9) -> bool:
    if np.any(Gj[:, 0] < 0) or np.any(Gj[:, 0] > sys.x_max):
        return False
    if np.any(Gj[:, 1] < 0) or np.any(Gj[:, 1] > sys.y_max):
        return False
    path = np.vstack([g0, Gj])
    steps = np.linalg.norm(np.diff(path, axis=0), axis=1)
    if np.any(steps > sys.d_max + tol):
        return False
    if len(terms.slot):
        d2 = np.sum((path[terms.slot] - terms.q) ** 2, axis=1)
        if np.any(d2 > terms.cap) or np.any(d2 > terms.cov2):
            return False
    return True


def _penalised(Gj, g0, terms: _UavTerms, sys: SystemParams, scale: float, rho: float):
    """Surrogate energy (normalised) plus squared-hinge penalties, and its gradient.

    Violations are measured in units of ``d_max^2`` so one penalty weight fits
    every constraint.
    """
    unit = sys.d_max ** 2
    path = np.vstack([g0, Gj])
    grad = np.zeros_like(path)
    val = 0.0
    if len(terms.slot):
        diff = path[terms.slot] - terms.q
        d2 = np.sum(diff * diff, axis=1)
        w = terms.lin.lower_bound(d2)
        if np.any(w <= 0):
            return math.inf, None
        val += float(np.sum(terms.coef / w)) / scale
        # d/dG of coef / w = -coef / w^2 * K * 2 (G - q)
        gpair = (-terms.coef / w ** 2 * terms.lin.K * 2.0 / scale)[:, None] * diff
        for cap in (terms.cap, terms.cov2):
            v = np.maximum(d2 - cap, 0.0) / unit
            val += rho * float(np.sum(v * v))
            gpair += (rho * 4.0 * v / unit)[:, None] * diff
        np.add.at(grad, terms.slot, gpair)
    step = np.diff(path, axis=0)
    v = np.maximum(np.sum(step * step, axis=1) - unit, 0.0) / unit
    val += rho * float(np.sum(v * v))
    gs = (rho * 4.0 * v / unit)[:, None] * step
    grad[1:] += gs
    grad[:-1] -= gs
    return val, grad[1:]


def _project_box(Gj, sys: SystemParams):
    out = Gj.copy()
    np.clip(out[:, 0], 0.0, sys.x_max, out=out[:, 0])
    np.clip(out[:, 1], 0.0, sys.y_max, out=out[:, 1])
    return out


def _minimise(Gj, g0, terms, sys, scale, rho, eps1, max_iter=150):
    """Projected gradient with Armijo backtracking on the penalised surrogate."""
    f, g = _penalised(Gj, g0, terms, sys, scale, rho)
    step = None
    for _ in range(max_iter):
        gnorm = float(np.max(np.abs(g)))
        if gnorm == 0.0:
            break
        # first trial moves the largest coordinate by a few metres, later ones grow
        step = 5.0 / gnorm if step is None else 2.0 * step
        while True:
            cand = _project_box(Gj - step * g, sys)
            fc, gc = _penalised(cand, g0, terms, sys, scale, rho)
            if fc <= f - 1e-4 * float(np.sum((Gj - cand) ** 2)) / step:
                break
            step *= 0.5
            if step * gnorm < 1e-9:
                return Gj, f
        rel = (f - fc) / max(abs(f), 1e-300)
        Gj, f, g = cand, fc, gc
        if rel < eps1:
            break
    return Gj, f


def _max_violation(Gj, g0, terms, sys) -> float:
    path = np.vstack([g0, Gj])
    s = np.linalg.norm(np.diff(path, axis=0), axis=1) - sys.d_max
    worst = float(s.max(initial=0.0))
    if len(terms.slot):
        d2 = np.sum((path[terms.slot] - terms.q) ** 2, axis=1)
        worst = max(worst, float(np.max(d2 - terms.cap, initial=0.0)),
                    float(np.max(d2 - terms.cov2, initial=0.0)))
    return max(worst, 0.0)


def _repair(Gj, Gr_j, g0, terms, sys, iters: int = 50):
    """Largest step along the segment G_r -> G that is feasible (convex set)."""
    if _feasible(Gj, g0, terms, sys):
        return Gj
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _feasible(Gr_j + mid * (Gj - Gr_j), g0, terms, sys):
            lo = mid
        else:
            hi = mid
    return Gr_j if lo == 0.0 else Gr_j + lo * (Gj - Gr_j)


def solve_trajectory(assocs: list[Association], G_r, scenario: Scenario, eps1: float = 1e-4,
                     rounds: int = 8, growth: float = 10.0) -> TrajectoryStep:
    """Improve ``G_r`` for fixed associations; never returns a worse trajectory."""
    G_r = np.asarray(G_r, float)
    sys = scenario.sys
    base = assignment_objective(G_r, scenario, assocs)
    if sys.d_max == 0 or scenario.n_slots == 0:
        return TrajectoryStep(G_r.copy(), False, "no-improvement", base)
    G = G_r.copy()
    used = 0
    for j in range(G_r.shape[0]):
        terms = _uav_terms(j, G_r, scenario, assocs)
        if not len(terms.slot):
            continue  # an idle UAV has nothing to gain from moving
        g0 = G_r[j, 0]
        scale = float(np.sum(terms.coef / terms.lin.B)) or 1.0
        Gj = G_r[j, 1:].copy()
        rho = 1.0
        for r in range(rounds):
            Gj, _ = _minimise(Gj, g0, terms, sys, scale, rho, eps1)
            used = max(used, r + 1)
            if _max_violation(Gj, g0, terms, sys) <= 1e-6:
                break
            rho *= growth
        G[j, 1:] = _repair(Gj, G_r[j, 1:], g0, terms, sys)
    new = assignment_objective(G, scenario, assocs)
    if new <= base:
        return TrajectoryStep(G, new < base, "ok" if new < base else "no-improvement", new, used)
    log.debug("trajectory step rejected: %.9g > %.9g", new, base)
    return TrajectoryStep(G_r.copy(), False, "no-improvement", base, used)


# ---------------------------------------------------------------- outer loop

@dataclass
class CatTrace:
    objectives: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    trajectories: list[np.ndarray] = field(default_factory=list)
    associations: list[list[Association]] = field(default_factory=list)

    @property
    def final(self) -> float:
        return self.objectives[-1]

    @property
    def iterations(self) -> int:
        return len(self.objectives)

    def rows(self):
        return [(k + 1, j, w) for k, (j, w) in enumerate(zip(self.objectives, self.wall_ms))]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for it, j, ms in self.rows():
                w.writerow([it, f"{j:.9g}", f"{ms:.9g}"])


def run_cat(G0, scenario: Scenario, max_iter: int = 10, tol: float = 1e-3,
            eps1: float = 1e-4, clock=time.perf_counter) -> CatTrace:
    """Alternate exact assignment and trajectory improvement until the objective settles."""
    if scenario.mode is not Mode.TWO_D:
        raise ValueError("the alternating optimiser covers the 2-D free-space model only")
    G = np.asarray(G0, float)
    check_trajectory(G, scenario.sys)
    if G.shape[:2] != (scenario.n_uavs, scenario.n_slots + 1):
        raise ValueError(f"trajectory shape {G.shape} does not fit {scenario.n_uavs} UAVs "
                         f"over {scenario.n_slots} slots")
    trace = CatTrace()
    t0 = clock()
    assocs, J = solve_assignment(G, scenario)
    for it in range(max_iter):
        trace.objectives.append(J)
        trace.wall_ms.append((clock() - t0) * 1e3)
        trace.trajectories.append(G.copy())
        trace.associations.append(assocs)
        if J == 0.0 or it == max_iter - 1:
            break
        step = solve_trajectory(assocs, G, scenario, eps1)
        if not step.improved:
            break
        G = step.G
        assocs, J_new = solve_assignment(G, scenario)
        if abs(J - J_new) <= tol * abs(J):
            trace.objectives.append(J_new)
            trace.wall_ms.append((clock() - t0) * 1e3)
            trace.trajectories.append(G.copy())
            trace.associations.append(assocs)
            break
        J = J_new
    return trace


def check_trajectory(G, sys: SystemParams, tol: float = 1e-9) -> None:
    G = np.asarray(G, float)
    if G.ndim != 3 or G.shape[2] != 2:
        raise ValueError(f"trajectory must have shape (M, T+1, 2), got {G.shape}")
    if np.any(G < -tol) or np.any(G[..., 0] > sys.x_max + tol) or \
            np.any(G[..., 1] > sys.y_max + tol):
        raise ValueError("trajectory leaves the service area")
    steps = np.linalg.norm(np.diff(G, axis=1), axis=2)
    if np.any(steps > sys.d_max + tol):
        raise ValueError("trajectory step exceeds d_max")


# ---------------------------------------------------------------- initial trajectories

def circle_trajectory(scenario: Scenario, radius: float) -> np.ndarray:
    """UAVs evenly phased on a circle around the UE centroid, one lap per horizon at most."""
    sys = scenario.sys
    m, T = scenario.n_uavs, scenario.n_slots
    center = scenario.ue_xy.mean(axis=0)
    if radius <= 0:
        return np.broadcast_to(center, (m, T + 1, 2)).copy()
    # angular step whose chord respects d_max
    dphi = 2 * math.pi / max(T, 1)
    chord = 2 * radius * math.sin(dphi / 2)
    if chord > sys.d_max:
        dphi = 2 * math.asin(min(1.0, sys.d_max / (2 * radius)))
    G = np.empty((m, T + 1, 2))
    for j in range(m):
        phi = 2 * math.pi * j / m + dphi * np.arange(T + 1)
        G[j, :, 0] = center[0] + radius * np.cos(phi)
        G[j, :, 1] = center[1] + radius * np.sin(phi)
    # clipping to the box is non-expansive, so step lengths stay within d_max
    np.clip(G[..., 0], 0.0, sys.x_max, out=G[..., 0])
    np.clip(G[..., 1], 0.0, sys.y_max, out=G[..., 1])
    return G


def cluster_trajectory(scenario: Scenario, n_clusters: int | None = None) -> np.ndarray:
    """The cluster-moving route, started from its first centre."""
    from .baselines import cluster_path, cm_policy
    from .env import rollout

    z = scenario.sys.z_init
    probe = cluster_path(scenario, np.zeros((scenario.n_uavs, 3)), n_clusters)
    starts = np.array([np.r_[probe.centers[(j * len(probe.centers)) // scenario.n_uavs], z]
                       for j in range(scenario.n_uavs)])
    path = cluster_path(scenario, starts, n_clusters)
    log_ = rollout(scenario, starts, cm_policy(scenario, path, z))
    return np.stack([p[:, :2] for p in log_.positions], axis=1)


def initial_trajectory(scenario: Scenario, scheme: str) -> np.ndarray:
    """``circle-<radius>`` or ``cluster``."""
    if scheme == "cluster":
        return cluster_trajectory(scenario)
    if scheme.startswith("circle-"):
        try:
            radius = float(scheme.split("-", 1)[1])
        except ValueError:
            raise ValueError(f"bad circle radius in {scheme!r}") from None
        return circle_trajectory(scenario, radius)
    raise ValueError(f"unknown initial trajectory {scheme!r} (use circle-<r> or cluster)")
