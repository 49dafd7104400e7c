import numpy as np
import pytest

from fmec.cat import (assignment_energy, assignment_objective, branch_and_bound,
                      check_trajectory, circle_trajectory, initial_trajectory, linearize,
                      rate_sq, run_cat, slot_problem, solve_assignment, solve_trajectory)
from fmec.config import desk_profile
from fmec.matching import build_preferences, match, slot_costs, slot_energy
from fmec.model import SystemParams
from fmec.scenario import Scenario, generate_scenario

import oracles

SYS = SystemParams()


def tiny_scenario(ue_xy, data_bits, cpu_cycles, start, **system):
    """Hand-placed instance with one UAV per row of ``start``."""
    ue_xy = np.asarray(ue_xy, float)
    D = np.atleast_2d(np.asarray(data_bits, float))
    F = np.atleast_2d(np.asarray(cpu_cycles, float))
    start = np.atleast_2d(np.asarray(start, float))
    cfg = desk_profile(n_ues=len(ue_xy), n_uavs=len(start), n_slots=D.shape[0],
                       takeoff_pool=1, heldout_pool=1, system=system)
    z = cfg.system_params().z_init
    pts = np.column_stack([start, np.full(len(start), z)])[None]
    return Scenario(cfg, ue_xy, D, F, pts, pts)


# ---------------------------------------------------------------- assignment

def random_slot(rng):
    m = int(rng.integers(1, 3))
    n = int(rng.integers(1, 7))
    while (m + 1) ** n > 2000:
        n -= 1
    sys = SYS.with_(v_max=int(rng.integers(1, 4)), f_max=float(rng.uniform(5e9, 4e10)))
    ue = rng.uniform(0, 150, (n, 2))
    uav = np.column_stack([rng.uniform(0, 150, (m, 2)), np.full(m, 75.0)])
    D = rng.uniform(8e4, 4e5, n)
    F = rng.uniform(2e9, 2e10, n)
    return sys, ue, uav, D, F


def test_branch_and_bound_matches_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        sys, ue, uav, D, F = random_slot(rng)
        costs = slot_costs(uav, ue, D, F, sys)
        prob = slot_problem(costs, sys)
        assign, _ = branch_and_bound(prob, sys)
        best, _ = oracles.brute_force_slot(ue, uav, D, F, v_max=sys.v_max, f_max=sys.f_max,
                                           theta_max=sys.theta_max)
        assert assignment_energy(assign, prob) == pytest.approx(best, rel=1e-9)
        # never worse than the greedy matching
        greedy = match(build_preferences(costs), costs, sys)
        assert assignment_energy(assign, prob) <= slot_energy(greedy, costs) * (1 + 1e-12)


def test_assignment_all_outside_coverage():
    sc = tiny_scenario([[10.0, 10.0], [20.0, 10.0]], [[1e5, 2e5]], [[5e9, 8e9]],
                       [[390.0, 390.0]], d_max=0.0)
    G = np.full((1, 2, 2), 390.0)
    assocs, J = solve_assignment(G, sc)
    assert np.all(assocs[0].assign == 0)
    assert J == pytest.approx(oracles.local_energy(5e9) + oracles.local_energy(8e9), rel=1e-12)


def test_assignment_without_slots_is_all_local():
    sc = tiny_scenario([[100.0, 100.0]], [[1e5]], [[1e10]], [[100.0, 100.0]], v_max=0)
    assocs, J = solve_assignment(np.full((1, 2, 2), 100.0), sc)
    assert assocs[0].assign[0] == 0 and J == pytest.approx(oracles.local_energy(1e10))


def test_assignment_cpu_within_capacity():
    sc = generate_scenario(desk_profile(seed=3))
    G = circle_trajectory(sc, 100.0)
    assocs, _ = solve_assignment(G, sc)
    for t, a in enumerate(assocs):
        for j in range(sc.n_uavs):
            served = a.served_by(j + 1)
            assert len(served) <= sc.sys.v_max
            assert a.f_c[served].sum() <= sc.sys.f_max * (1 + 1e-12)


# ---------------------------------------------------------------- linearisation

def test_linearization_sound_and_tight():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        g, gr, q = rng.uniform(0, 400, (3, 2))
        z = float(rng.uniform(20, 150))
        d2, d2r = float(np.sum((g - q) ** 2)), float(np.sum((gr - q) ** 2))
        lin = linearize(d2r, z, oracles.P_TX, SYS)
        true = oracles.rate(*(g - q), z)
        assert float(lin.lower_bound(d2)) <= true * (1 + 1e-9)
        assert float(lin.lower_bound(d2r)) == pytest.approx(oracles.rate(*(gr - q), z),
                                                            rel=1e-9)
        assert lin.K < 0


def test_rate_sq_matches_oracle():
    assert rate_sq(0.0, 75.0, 0.1, SYS) == pytest.approx(oracles.rate(0, 0, 75), rel=1e-12)
    assert rate_sq(1e4, 75.0, 0.1, SYS) == pytest.approx(oracles.rate(100, 0, 75), rel=1e-12)


# ---------------------------------------------------------------- trajectory step

def test_overhead_uav_stays_put():
    sc = tiny_scenario([[200.0, 200.0]], [[2e5]], [[1e10]], [[200.0, 200.0]])
    G = np.full((1, 2, 2), 200.0)
    assocs, J = solve_assignment(G, sc)
    assert assocs[0].assign[0] == 1
    step = solve_trajectory(assocs, G, sc)
    np.testing.assert_allclose(step.G, G, atol=1e-6)
    assert step.objective == pytest.approx(J, rel=1e-12)


def test_offset_uav_moves_to_grid_optimum():
    # wide beam so the UE 100 m away is covered from the start
    sc = tiny_scenario([[200.0, 200.0]], [[2e5]], [[1e10]], [[300.0, 200.0]],
                       theta_max=1.2, d_max=200.0)
    G = np.array([[[300.0, 200.0], [300.0, 200.0]]])
    assocs, J0 = solve_assignment(G, sc)
    assert assocs[0].assign[0] == 1
    step = solve_trajectory(assocs, G, sc)
    assert step.improved and step.objective < J0
    coef = oracles.P_TX * 2e5
    best, at = oracles.grid_best_hover((200.0, 200.0), (300.0, 200.0), 75.0, 200.0, coef)
    # tolerance: the energy of a waypoint one grid cell away from the oracle's choice
    assert best <= step.objective <= coef / oracles.rate(1.0, 0.0, 75.0)
    assert at == (200.0, 200.0)
    assert np.hypot(*(step.G[0, 1] - np.array(at))) <= 1.0
    np.testing.assert_array_equal(step.G[0, 0], G[0, 0])


def test_offset_short_reach_hits_boundary():
    sc = tiny_scenario([[200.0, 200.0]], [[2e5]], [[1e10]], [[300.0, 200.0]],
                       theta_max=1.2, d_max=30.0)
    G = np.array([[[300.0, 200.0], [300.0, 200.0]]])
    assocs, _ = solve_assignment(G, sc)
    step = solve_trajectory(assocs, G, sc)
    coef = oracles.P_TX * 2e5
    best, at = oracles.grid_best_hover((200.0, 200.0), (300.0, 200.0), 75.0, 30.0, coef,
                                       half=110)
    assert at == (270.0, 200.0)
    assert step.objective <= coef / oracles.rate(71.0, 0.0, 75.0)
    assert np.hypot(*(step.G[0, 1] - G[0, 0])) <= 30.0 + 1e-9


def test_frozen_when_dmax_zero():
    sc = tiny_scenario([[200.0, 200.0]], [[2e5]], [[1e10]], [[230.0, 200.0]], d_max=0.0)
    G = np.array([[[230.0, 200.0], [230.0, 200.0]]])
    assocs, _ = solve_assignment(G, sc)
    step = solve_trajectory(assocs, G, sc)
    assert np.array_equal(step.G, G) and not step.improved


def test_trajectory_step_never_worse():
    for seed in range(3):
        sc = generate_scenario(desk_profile(seed=seed))
        G = circle_trajectory(sc, 80.0)
        assocs, J = solve_assignment(G, sc)
        step = solve_trajectory(assocs, G, sc)
        assert step.objective <= J
        assert assignment_objective(step.G, sc, assocs) == step.objective
        check_trajectory(step.G, sc.sys)


# ---------------------------------------------------------------- outer loop

def test_zero_tasks_stop_immediately():
    sc = generate_scenario(desk_profile(seed=0))
    sc = sc.with_tasks(np.zeros_like(sc.data_bits), np.zeros_like(sc.cpu_cycles))
    tr = run_cat(circle_trajectory(sc, 100.0), sc)
    assert tr.objectives == [0.0]


def test_small_instance_monotone():
    sc = generate_scenario(desk_profile(seed=5, n_ues=10, n_uavs=1))
    tr = run_cat(circle_trajectory(sc, 100.0), sc)
    J = tr.objectives
    assert all(b <= a + 1e-6 * abs(a) for a, b in zip(J, J[1:]))
    assert J[-1] <= J[0] and tr.iterations <= 10


@pytest.mark.parametrize("radius", [80.0, 100.0, 120.0])
def test_circle_starts_monotone_and_feasible(radius):
    sc = generate_scenario(desk_profile(seed=1))
    tr = run_cat(initial_trajectory(sc, f"circle-{radius:g}"), sc)
    J = tr.objectives
    assert all(b <= a + 1e-6 * abs(a) for a, b in zip(J, J[1:]))
    for G in tr.trajectories:
        check_trajectory(G, sc.sys)


def test_cluster_start():
    sc = generate_scenario(desk_profile(seed=2))
    G0 = initial_trajectory(sc, "cluster")
    check_trajectory(G0, sc.sys)
    tr = run_cat(G0, sc)
    assert tr.final <= tr.objectives[0]


def test_trace_csv(tmp_path):
    sc = generate_scenario(desk_profile(seed=4))
    ticks = iter(np.arange(0.0, 100.0, 0.5))
    tr = run_cat(circle_trajectory(sc, 100.0), sc, clock=lambda: next(ticks))
    path = tmp_path / "cat.csv"
    tr.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,objective_J,wall_ms"
    assert len(lines) == tr.iterations + 1
    assert float(lines[1].split(",")[1]) == pytest.approx(tr.objectives[0], rel=1e-8)


def test_rejects_bad_inputs():
    sc = generate_scenario(desk_profile(seed=0))
    with pytest.raises(ValueError):
        run_cat(np.zeros((2, 3, 2)), sc)  # wrong horizon
    G = circle_trajectory(sc, 100.0)
    G[0, 5] += 500.0
    with pytest.raises(ValueError):
        run_cat(G, sc)
    with pytest.raises(ValueError):
        initial_trajectory(sc, "spiral")
    with pytest.raises(ValueError):
        initial_trajectory(sc, "circle-abc")
    sc3 = generate_scenario(desk_profile("3d", seed=0))
    with pytest.raises(ValueError):
        run_cat(circle_trajectory(sc3, 100.0), sc3)


def test_circle_trajectory_constraints():
    sc = generate_scenario(desk_profile(seed=0, n_uavs=3))
    for r in (0.0, 50.0, 120.0, 500.0):
        G = circle_trajectory(sc, r)
        assert G.shape == (3, sc.n_slots + 1, 2)
        check_trajectory(G, sc.sys)
    G = circle_trajectory(sc, 100.0)
    c = sc.ue_xy.mean(axis=0)
    np.testing.assert_allclose(np.hypot(*(G - c).reshape(-1, 2).T), 100.0, rtol=1e-12)
