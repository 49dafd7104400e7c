import numpy as np
import pytest

from fmec.agent import TRACE_COLUMNS, EpochRecord
from fmec.baselines import (cluster_centers, cluster_path, leg_bounds, route_starts, run_cm,
                            run_ddpg_uniform, run_le, run_rm)
from fmec.config import desk_profile
from fmec.matching import slot_costs
from fmec.scenario import generate_scenario

import oracles


def desk(seed=0, **kw):
    return generate_scenario(desk_profile(seed=seed, **kw))


def test_le_zero_tasks():
    sc = desk()
    sc = sc.with_tasks(np.zeros_like(sc.data_bits), np.zeros_like(sc.cpu_cycles))
    assert run_le(sc) == 0.0


def test_le_one_ue_ten_slots():
    sc = desk(n_ues=1, n_slots=10)
    sc = sc.with_tasks(np.full((10, 1), 1e5), np.full((10, 1), 2e9))
    assert run_le(sc) == pytest.approx(8.0, rel=1e-12)
    assert run_le(sc) == pytest.approx(10 * oracles.local_energy(2e9), rel=1e-12)


def test_le_upper_bounds_matched_policies():
    sc = desk(seed=3)
    le = run_le(sc)
    assert run_rm(sc, sc.heldout[0], 0)[1] <= le
    assert run_cm(sc, sc.heldout[0])[1] <= le


def test_rm_reproducible():
    sc = desk(seed=1)
    a, ea = run_rm(sc, sc.heldout[2], 11)
    b, eb = run_rm(sc, sc.heldout[2], 11)
    assert ea == eb and np.array_equal(np.array(a.positions), np.array(b.positions))


def test_rm_mean_below_le():
    sc = desk(seed=2)
    rm = np.mean([run_rm(sc, sc.heldout[s % 20], s)[1] for s in range(50)])
    assert rm <= run_le(sc)


def test_rm_equals_le_without_coverage():
    sc = desk(seed=4, system={"theta_max": 0.0})
    for s in range(3):
        assert run_rm(sc, sc.heldout[s], s)[1] == run_le(sc)


def test_cm_single_cluster_converges():
    sc = desk(seed=5, n_ues=6, cm_clusters=1)
    pt = np.array([[250.0, 150.0]] * 6)
    sc = type(sc)(sc.config, pt, sc.data_bits, sc.cpu_cycles, sc.takeoff, sc.heldout)
    log, _ = run_cm(sc, sc.heldout[0])
    final = np.array(log.positions[-1])
    np.testing.assert_allclose(final[:, :2], pt[:2], atol=1e-6)
    # once arrived the UAVs hover
    arrived = [k for k, p in enumerate(log.positions) if np.allclose(np.array(p)[:, :2], pt[:2])]
    assert arrived and all(np.allclose(np.array(log.positions[k])[:, :2], pt[:2])
                           for k in range(arrived[0], len(log.positions)))


def test_leg_bounds():
    assert leg_bounds(20, 2) == [(0, 10), (10, 20)]
    assert leg_bounds(60, 10)[0] == (0, 6)
    assert leg_bounds(23, 4) == [(0, 5), (5, 10), (10, 15), (15, 23)]
    assert leg_bounds(3, 10) == [(0, 1), (1, 2), (2, 3)]


def test_cluster_centers_inside_area_and_seeded():
    sc = desk(seed=6)
    c1 = cluster_centers(sc.ue_xy, 3, seed=1)
    c2 = cluster_centers(sc.ue_xy, 3, seed=1)
    assert np.array_equal(c1, c2)
    assert np.all(c1 >= 0) and np.all(c1[:, 0] <= sc.sys.x_max) and np.all(c1[:, 1] <= sc.sys.y_max)


def test_route_starts_nearest_and_distinct():
    centers = np.array([[0.0, 0.0], [100.0, 0.0], [200.0, 0.0]])
    assert route_starts([[10.0, 0.0, 75.0], [20.0, 0.0, 75.0]], centers) == [0, 1]
    assert route_starts([[190.0, 0.0, 75.0]], centers) == [2]
    # ties go to the lower centre id
    assert route_starts([[50.0, 0.0, 75.0]], centers) == [0]


def test_cm_steps_respect_dmax():
    sc = desk(seed=7)
    log, _ = run_cm(sc, sc.heldout[0])
    pos = np.array(log.positions)
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=2)
    assert np.all(steps <= sc.sys.d_max + 1e-9)


def test_cm_path_follows_clusters():
    sc = desk(seed=8)
    path = cluster_path(sc, sc.heldout[0])
    assert len(path.centers) == sc.config.n_clusters
    assert path.legs[-1][1] == sc.n_slots


def test_cm_beats_rm_on_desk():
    cm, rm = [], []
    for seed in range(20):
        sc = desk(seed=seed)
        cm.append(run_cm(sc, sc.heldout[0])[1])
        rm.append(run_rm(sc, sc.heldout[0], seed)[1])
    assert np.mean(cm) <= np.mean(rm)


def test_baseline_slots_feasible():
    from fmec.matching import check_association, match_slot
    sc = desk(seed=9)
    log, _ = run_cm(sc, sc.heldout[1])
    for t in range(sc.n_slots):
        assoc, costs = match_slot(sc, np.array(log.positions[t + 1]), t)
        assert np.array_equal(assoc.assign, log.assign[t])
        assert check_association(assoc, costs, sc.sys) == []


def test_ddpg_uniform_trace_schema():
    sc = desk(n_ues=5, n_slots=4, takeoff_pool=2, heldout_pool=2,
              rat={"hidden": [8], "buffer": 8, "batch": 4})
    agent, trace = run_ddpg_uniform(sc, epochs=3)
    assert not agent.hp.prioritized
    assert len(trace) == 3 and all(isinstance(r, EpochRecord) for r in trace)
    assert tuple(vars(trace[0])) == TRACE_COLUMNS
    assert agent.updates > 0
