import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmec.model import (AtgChannelParams, InfeasibleOffload, Mode, PropulsionParams,
                        SystemParams, Task, UavAction, UavState, UserEquipment, apply_action,
                        atg_path_loss, atg_rate, battery_step, coverage_radius, dbm_to_watt,
                        free_space_rate, kb_to_bits, local_energy, offload_cost,
                        power_draw, propulsion_power, required_cpu)

import oracles

SYS = SystemParams()
PP = PropulsionParams()
UE0 = UserEquipment((0.0, 0.0))


def test_units():
    assert dbm_to_watt(-90) == pytest.approx(1e-12, rel=1e-12)
    assert kb_to_bits(50) == 4e5


@pytest.mark.parametrize("z,theta,expected", [
    (75, math.pi / 4, 75.0),
    (50, math.pi / 4, 50.0),
    (100, math.pi / 6, 57.73502691896258),
])
def test_coverage_radius(z, theta, expected):
    assert coverage_radius(z, theta) == pytest.approx(expected, rel=1e-12)


def test_coverage_radius_domain():
    with pytest.raises(ValueError):
        coverage_radius(75, math.pi / 2)


def test_free_space_rate_overhead():
    r = free_space_rate(UE0, UavState((0, 0, 75)), SYS)
    assert r == pytest.approx(oracles.rate(0, 0, 75), rel=1e-12)
    assert r == pytest.approx(1.2494e8, rel=1e-4)


def test_free_space_rate_limits():
    near = free_space_rate(UE0, UavState((0, 0, 75)), SYS)
    far = free_space_rate(UE0, UavState((1e9, 0, 75)), SYS)
    assert far < 1e-3 * near
    double = free_space_rate(UE0, UavState((10, 0, 75)), SYS.with_(bandwidth=20e6))
    assert double == pytest.approx(2 * free_space_rate(UE0, UavState((10, 0, 75)), SYS))


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 500), st.floats(0.01, 200), st.floats(50, 120))
def test_free_space_rate_strictly_decreasing(r, dr, z):
    a = free_space_rate(UE0, UavState((r, 0, z)), SYS)
    b = free_space_rate(UE0, UavState((r + dr, 0, z)), SYS)
    assert b < a


def test_atg_rate_golden():
    sys = SYS.with_(bandwidth=20e6)
    r = atg_rate(UE0, UavState((0, 0, 50)), sys, AtgChannelParams())
    assert r == pytest.approx(oracles.atg_rate(0.0, 50.0), rel=1e-12)
    # frozen from the oracle: path loss about 76.03 dB overhead at 50 m
    assert r == pytest.approx(2.25711e8, rel=1e-5)


def test_atg_loss_falls_with_elevation():
    atg = AtgChannelParams()
    # same 3-D distance 100 m, rising elevation angle
    angles = np.radians([10, 30, 60, 89])
    losses = [float(atg_path_loss(100 * math.cos(a), 100 * math.sin(a), atg)) for a in angles]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_atg_rate_monotone_in_distance_fixed_angle():
    sys = SYS.with_(bandwidth=20e6)
    prev = math.inf
    for d in (60, 100, 200, 400):
        z, h = d * math.sin(0.7), d * math.cos(0.7)
        r = atg_rate(UE0, UavState((h, 0, z)), sys, AtgChannelParams())
        assert r <= prev
        prev = r


@pytest.mark.parametrize("F,energy", [(2e9, 0.8), (2e10, 800.0), (0.0, 0.0)])
def test_local_energy(F, energy):
    e, f = local_energy(Task(1e5, F), UE0, 1.0)
    assert e == pytest.approx(energy, rel=1e-12)
    assert e == pytest.approx(oracles.local_energy(F), rel=1e-12)
    assert f == F


def test_offload_cost_example():
    t_tr, t_tot, e = offload_cost(Task(4e5, 2e9), 1.2494e8, 4e9, 0.1)
    assert t_tr == pytest.approx(4e5 / 1.2494e8, rel=1e-12)
    assert t_tr == pytest.approx(3.2015e-3, rel=1e-4)
    assert t_tot == pytest.approx(0.5032, rel=1e-4)
    assert e == pytest.approx(3.2015e-4, rel=1e-4)


def test_offload_cost_edges():
    assert offload_cost(Task(0, 2e9), 1e8, 4e9, 0.1)[0::2] == (0.0, 0.0)
    e1 = offload_cost(Task(4e5, 2e9), 1e8, 4e9, 0.1)[2]
    e2 = offload_cost(Task(4e5, 2e9), 5e7, 4e9, 0.1)[2]
    assert e2 == 2 * e1
    with pytest.raises(InfeasibleOffload):
        offload_cost(Task(4e5, 2e9), 4e5, 4e9, 0.1, t_max=1.0)


def test_required_cpu():
    f = required_cpu(Task(4e5, 2e9), 1.2494e8, 1.0)
    assert f == pytest.approx(2e9 / (1 - 4e5 / 1.2494e8), rel=1e-12)
    assert f == pytest.approx(2.0064e9, rel=1e-4)
    assert required_cpu(Task(0, 2e9), 1e8, 1.0) == 2e9
    with pytest.raises(InfeasibleOffload):
        required_cpu(Task(4e5, 2e9), 4e5, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e3, 4e5), st.floats(1e6, 2e10), st.floats(1e6, 2e8))
def test_required_cpu_binds_deadline(d, F, rate):
    if d / rate >= 0.99:
        return
    task = Task(d, F)
    f = required_cpu(task, rate, 1.0)
    _, t_total, _ = offload_cost(task, rate, f, 0.1)
    assert t_total == pytest.approx(1.0, rel=1e-9)


def test_apply_action_examples():
    st_, v = apply_action(UavState((0, 0, 75)), UavAction(0.0, 30.0), SYS)
    assert st_.position == (30.0, 0.0, 75) and not v
    st_, v = apply_action(UavState((395, 200, 75)), UavAction(0.0, 30.0), SYS)
    assert st_.position == (400.0, 200.0, 75) and v
    st_, v = apply_action(UavState((0, 0, 50)), UavAction(0.0, 10.0, theta_v=0.0), SYS,
                          Mode.THREE_D)
    assert st_.position == pytest.approx((0, 0, 60)) and not v


def test_apply_action_strict_z():
    st_, _ = apply_action(UavState((0, 0, 50)), UavAction(0.0, 10.0, theta_v=0.0), SYS,
                          Mode.THREE_D, strict_z=True)
    assert st_.position[2] == pytest.approx(51.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 400), st.floats(0, 400), st.floats(50, 120),
       st.floats(0, 2 * math.pi), st.floats(0, math.pi), st.floats(0, 30),
       st.sampled_from(["2d", "3d"]))
def test_apply_action_stays_in_box(x, y, z, th, tv, d, mode):
    st_, _ = apply_action(UavState((x, y, z)), UavAction(th, d, tv), SYS, mode)
    X, Y, Z = st_.position
    assert 0 <= X <= SYS.x_max and 0 <= Y <= SYS.y_max
    assert SYS.z_min <= Z <= SYS.z_max


def test_hover_power():
    assert propulsion_power(0.0, math.pi / 2, PP) == pytest.approx(168.49, rel=1e-12)
    assert propulsion_power(0.0, 0.3, PP) == pytest.approx(oracles.hover_power(), rel=1e-12)


def test_cruise_power_golden():
    p = propulsion_power(30.0, math.pi / 2, PP)
    assert p == pytest.approx(oracles.propulsion(30.0, math.pi / 2), rel=1e-12)
    # frozen from the oracle
    assert p == pytest.approx(361.2068, abs=1e-3)


def test_descent_credit():
    level = propulsion_power(10.0, math.pi / 2, PP)
    down = propulsion_power(10.0, math.pi, PP)
    assert down == pytest.approx(level - 2 * 10 * 10)
    assert power_draw(30.0, math.pi, PP) >= PP.p_o


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 30), st.floats(0, math.pi / 2))
def test_power_non_negative_when_not_descending(v, tv):
    assert propulsion_power(v, tv, PP) >= 0


def test_battery_step():
    assert battery_step(1e6, 168.49, 1.0) == (pytest.approx(999831.51), False)
    assert battery_step(0.0, 5.0, 1.0) == (0.0, True)
    assert battery_step(10.0, 0.0, 1.0) == (10.0, False)


def test_validation():
    with pytest.raises(ValueError):
        Task(-1, 0)
    with pytest.raises(ValueError):
        UavAction(7.0, 1.0)
    with pytest.raises(ValueError):
        SystemParams(theta_max=math.pi / 2)
