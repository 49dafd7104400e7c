"""Domain physics for multi-UAV edge computing.

Geometry, kinematics, the free-space and air-to-ground channels, offloading
timing/energy and the rotary-wing propulsion model. Everything here is a pure
function of its inputs; units are SI throughout (bits, cycles, Hz, W, J, m, s).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

LOG2_E = math.log2(math.e)


class Mode(str, Enum):
    TWO_D = "2d"
    THREE_D = "3d"


class InfeasibleOffload(ValueError):
    """Transmission alone already exhausts the slot deadline."""


@dataclass(frozen=True)
class Task:
    data_bits: float
    cpu_cycles: float

    def __post_init__(self):
        if not (math.isfinite(self.data_bits) and math.isfinite(self.cpu_cycles)):
            raise ValueError("task fields must be finite")
        if self.data_bits < 0 or self.cpu_cycles < 0:
            raise ValueError("task fields must be non-negative")

    @property
    def is_empty(self) -> bool:
        return self.data_bits == 0 and self.cpu_cycles == 0


@dataclass(frozen=True)
class UserEquipment:
    position: tuple[float, float]
    tx_power: float = 0.1
    kappa: float = 1e-28
    nu: float = 3.0

    def __post_init__(self):
        if self.tx_power <= 0:
            raise ValueError("tx_power must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")


@dataclass(frozen=True)
class UavState:
    position: tuple[float, float, float]
    battery_j: float = 0.0


@dataclass(frozen=True)
class UavAction:
    theta_h: float
    dist: float
    theta_v: float = math.pi / 2

    def __post_init__(self):
        if not 0.0 <= self.theta_h <= 2 * math.pi:
            raise ValueError(f"theta_h={self.theta_h} outside [0, 2pi]")
        if not 0.0 <= self.theta_v <= math.pi:
            raise ValueError(f"theta_v={self.theta_v} outside [0, pi]")
        if self.dist < 0:
            raise ValueError("dist must be non-negative")


@dataclass(frozen=True)
class SystemParams:
    """Scenario-wide constants. Defaults follow the reference simulation table."""

    x_max: float = 400.0
    y_max: float = 400.0
    z_min: float = 50.0
    z_max: float = 120.0
    z_init: float = 75.0
    d_max: float = 30.0
    t_max: float = 1.0
    v_max: int = 30
    f_max: float = 100e9
    theta_max: float = math.pi / 4
    bandwidth: float = 10e6
    g0: float = 1.42e-4
    big_g0: float = 2.2846
    sigma2: float = 1e-12
    e_max: float = 1e6
    k_z: float = 0.0025
    penalty: float = 100.0

    def __post_init__(self):
        positive = ("x_max", "y_max", "z_min", "z_max", "t_max", "f_max",
                    "bandwidth", "g0", "big_g0", "sigma2", "e_max")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.z_min > self.z_max:
            raise ValueError("z_min must not exceed z_max")
        if self.d_max < 0 or self.k_z < 0 or self.penalty < 0:
            raise ValueError("d_max, k_z and penalty must be non-negative")
        if self.v_max < 0:
            raise ValueError("v_max must be non-negative")
        if not 0 <= self.theta_max < math.pi / 2:
            raise ValueError("theta_max must lie in [0, pi/2)")

    @property
    def alpha(self) -> float:
        """Reference SNR gain g0*G0/sigma^2 of the free-space model."""
        return self.g0 * self.big_g0 / self.sigma2

    def with_(self, **kw) -> "SystemParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class AtgChannelParams:
    eta_los: float = 1.6
    eta_nlos: float = 23.0
    a_env: float = 12.08
    b_env: float = 0.11
    f_c: float = 2.5e9
    c_light: float = 3e8

    def __post_init__(self):
        if not self.eta_nlos >= self.eta_los >= 0:
            raise ValueError("need eta_nlos >= eta_los >= 0")
        if self.a_env <= 0 or self.b_env <= 0:
            raise ValueError("a_env and b_env must be positive")


@dataclass(frozen=True)
class PropulsionParams:
    p_o: float = 79.86
    p_s: float = 88.63
    u_b: float = 120.0
    v_h: float = 4.03
    d_0: float = 0.6
    rho_a: float = 1.25
    r_s: float = 0.05
    r_r: float = 0.4
    mass: float = 2.0
    g: float = 10.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"{k} must be positive")


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def kb_to_bits(kb: float) -> float:
    # decimal kilobytes
    return kb * 8e3


# --------------------------------------------------------------------------
# geometry and channels


def coverage_radius(z: float, theta_max: float) -> float:
    if not 0 <= theta_max < math.pi / 2:
        raise ValueError(f"theta_max={theta_max} must lie in [0, pi/2)")
    return z * math.tan(theta_max)


def free_space_rate_sq(dist_sq_h, z, tx_power, params: SystemParams):
    """Free-space uplink rate given the squared horizontal distance.

    Broadcasts over numpy arrays.
    """
    snr = params.alpha * tx_power / (np.square(z) + dist_sq_h)
    return params.bandwidth * np.log2(1.0 + snr)


def free_space_rate(ue: UserEquipment, uav: UavState, params: SystemParams) -> float:
    x, y, z = uav.position
    if z <= 0:
        raise ValueError("UAV altitude must be positive")
    r2 = (x - ue.position[0]) ** 2 + (y - ue.position[1]) ** 2
    return float(free_space_rate_sq(r2, z, ue.tx_power, params))


def atg_path_loss(dist_h, z, atg: AtgChannelParams):
    """Mean air-to-ground path loss in dB (LoS-probability weighted).

    The elevation angle enters the sigmoid in degrees, which is the unit the
    environment constants a, b are fitted for.
    """
    dist_h = np.asarray(dist_h, dtype=float)
    elev_deg = np.degrees(np.arctan2(z, dist_h))
    d3 = np.sqrt(np.square(dist_h) + np.square(z))
    sig = (atg.eta_los - atg.eta_nlos) / (
        1.0 + atg.a_env * np.exp(-atg.b_env * (elev_deg - atg.a_env)))
    fspl = 20.0 * np.log10(d3) + 20.0 * math.log10(4 * math.pi * atg.f_c / atg.c_light)
    return sig + fspl + atg.eta_nlos


def atg_rate_h(dist_h, z, tx_power, params: SystemParams, atg: AtgChannelParams):
    loss = atg_path_loss(dist_h, z, atg)
    snr = tx_power / params.sigma2 * np.power(10.0, -loss / 10.0)
    return params.bandwidth * np.log2(1.0 + snr)


def atg_rate(ue: UserEquipment, uav: UavState, params: SystemParams,
             atg: AtgChannelParams) -> float:
    x, y, z = uav.position
    if z <= 0:
        raise ValueError("UAV altitude must be positive")
    r = math.hypot(x - ue.position[0], y - ue.position[1])
    return float(atg_rate_h(r, z, ue.tx_power, params, atg))


# --------------------------------------------------------------------------
# computation and offloading


def local_energy(task: Task, ue: UserEquipment, t_max: float) -> tuple[float, float]:
    """Energy and CPU speed for running ``task`` on the UE within ``t_max``."""
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if task.cpu_cycles == 0:
        return 0.0, 0.0
    f_local = task.cpu_cycles / t_max
    energy = ue.kappa * f_local ** ue.nu * (task.cpu_cycles / f_local)
    return energy, f_local


def local_energy_array(cpu_cycles, kappa, nu, t_max: float):
    cpu_cycles = np.asarray(cpu_cycles, dtype=float)
    return kappa * cpu_cycles ** nu / t_max ** (nu - 1.0)


def offload_cost(task: Task, rate: float, f_c: float, tx_power: float,
                 t_max: float | None = None) -> tuple[float, float, float]:
    """Return (transmission time, completion time, transmission energy).

    If ``t_max`` is given, raises :class:`InfeasibleOffload` when transmission
    alone reaches the deadline.
    """
    if task.data_bits == 0:
        t_tr = 0.0
    else:
        if rate <= 0:
            raise InfeasibleOffload("zero uplink rate")
        t_tr = task.data_bits / rate
    if t_max is not None and t_tr >= t_max:
        raise InfeasibleOffload(f"transmission time {t_tr:.6g}s >= deadline {t_max:.6g}s")
    if task.cpu_cycles == 0:
        t_c = 0.0
    else:
        if f_c <= 0:
            raise InfeasibleOffload("no CPU allocated")
        t_c = task.cpu_cycles / f_c
    return t_tr, t_tr + t_c, tx_power * t_tr


def required_cpu(task: Task, rate: float, t_max: float) -> float:
    """Smallest UAV CPU share that still meets the deadline."""
    t_tr = 0.0 if task.data_bits == 0 else (
        math.inf if rate <= 0 else task.data_bits / rate)
    slack = t_max - t_tr
    if slack <= 0:
        raise InfeasibleOffload(f"transmission time {t_tr:.6g}s >= deadline {t_max:.6g}s")
    return task.cpu_cycles / slack


# --------------------------------------------------------------------------
# kinematics and propulsion


def displacement(action: UavAction, mode: Mode | str, strict_z: bool = False):
    mode = Mode(mode)
    if mode is Mode.TWO_D:
        return (action.dist * math.cos(action.theta_h),
                action.dist * math.sin(action.theta_h), 0.0)
    horiz = action.dist * math.sin(action.theta_v)
    dz = math.cos(action.theta_v) if strict_z else action.dist * math.cos(action.theta_v)
    return horiz * math.cos(action.theta_h), horiz * math.sin(action.theta_h), dz


def apply_action(state: UavState, action: UavAction, params: SystemParams,
                 mode: Mode | str = Mode.TWO_D, strict_z: bool = False
                 ) -> tuple[UavState, bool]:
    """Move one UAV; out-of-bounds coordinates are clamped and flagged."""
    mode = Mode(mode)
    dx, dy, dz = displacement(action, mode, strict_z)
    x, y, z = state.position
    nx, ny, nz = x + dx, y + dy, z + dz
    cx = min(max(nx, 0.0), params.x_max)
    cy = min(max(ny, 0.0), params.y_max)
    if mode is Mode.THREE_D:
        cz = min(max(nz, params.z_min), params.z_max)
    else:
        cz, nz = z, z
    violated = (cx != nx) or (cy != ny) or (cz != nz)
    return UavState((cx, cy, cz), state.battery_j), violated


def propulsion_power(v: float, theta_v: float, pp: PropulsionParams) -> float:
    """Rotary-wing propulsion power at speed ``v`` with climb angle ``theta_v``.

    Descent (theta_v > pi/2) yields a negative potential-energy term.
    """
    if v < 0:
        raise ValueError("speed must be non-negative")
    ratio2 = (v / pp.v_h) ** 2
    inner = math.sqrt(1.0 + ratio2 * ratio2 / 4.0) - ratio2 / 2.0
    assert inner >= 0.0
    blade = pp.p_o * (1.0 + 3.0 * (v / pp.u_b) ** 2)
    induced = pp.p_s * math.sqrt(inner)
    parasite = 0.5 * math.pi * pp.d_0 * pp.rho_a * pp.r_s * pp.r_r ** 2 * v ** 3
    climb = pp.mass * pp.g * v * math.cos(theta_v)
    return blade + induced + parasite + climb


def power_draw(v: float, theta_v: float, pp: PropulsionParams) -> float:
    """Battery draw: propulsion power floored at the blade-profile power.

    Descent can offset the induced and parasite terms but not the power
    needed to keep the rotors spinning.
    """
    return max(propulsion_power(v, theta_v, pp), pp.p_o)


def battery_step(battery: float, power: float, t_max: float) -> tuple[float, bool]:
    """Drain the battery for one slot; returns (remaining, depleted)."""
    if battery < 0:
        raise ValueError("battery must be non-negative")
    left = battery - power * t_max
    if left <= 0:
        return 0.0, True
    return left, False
