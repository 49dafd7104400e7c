"""Actor-critic trajectory control with prioritised replay.

The actor maps normalised UAV states to per-UAV actions in ``[0, 1]``; these
are mapped affinely onto heading, climb angle (3-D) and flying distance, or
read as a displacement vector when the Cartesian action space is chosen. User
association each slot comes from the greedy matching, and the reward is the
negative UE energy (plus weighted UAV energy in 3-D) minus boundary penalties.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import RatHyperParams
from .env import EpisodeLog, FlightEnv, reward_value
from .model import Mode
from .nn import Adam, DenseNet, RMSProp, optimizer_from_dict, soft_update
from .replay import Batch, ReplayBuffer
from .scenario import STREAM_TRAIN, Scenario, substream

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# slot reward in raw joules; the networks see it divided by the slot scale
reward = reward_value


def state_dim(m: int, mode: Mode | str) -> int:
    return m * (4 if Mode(mode) is Mode.THREE_D else 3)


def action_dim(m: int, mode: Mode | str) -> int:
    return m * (3 if Mode(mode) is Mode.THREE_D else 2)


def encode_state(uav_xyz, battery, sys, mode: Mode | str) -> np.ndarray:
    """Normalise UAV coordinates (and batteries in 3-D) to ``[0, 1]``."""
    xyz = np.asarray(uav_xyz, float).reshape(-1, 3)
    zspan = sys.z_max - sys.z_min
    cols = [xyz[:, 0] / sys.x_max, xyz[:, 1] / sys.y_max,
            (xyz[:, 2] - sys.z_min) / zspan if zspan > 0 else np.zeros(len(xyz))]
    if Mode(mode) is Mode.THREE_D:
        cols.append(np.asarray(battery, float) / sys.e_max)
    return np.column_stack(cols).ravel()


def decode_action(u, sys, mode: Mode | str, space: str = "polar") -> np.ndarray:
    """Map normalised actions to (M, 3) rows of (theta_h, theta_v, dist).

    ``polar`` maps each entry affinely onto its angle or distance range.
    ``cartesian`` reads ``2u - 1`` as a displacement direction whose length
    (capped at 1) scales ``d_max``; the angles follow from the vector.
    """
    if space == "cartesian":
        return _decode_cartesian(u, sys, mode)
    if Mode(mode) is Mode.THREE_D:
        u = np.asarray(u, float).reshape(-1, 3)
        return np.column_stack([2 * math.pi * u[:, 0], math.pi * u[:, 1], sys.d_max * u[:, 2]])
    u = np.asarray(u, float).reshape(-1, 2)
    return np.column_stack([2 * math.pi * u[:, 0], np.full(len(u), math.pi / 2),
                            sys.d_max * u[:, 1]])


def _decode_cartesian(u, sys, mode: Mode | str) -> np.ndarray:
    three_d = Mode(mode) is Mode.THREE_D
    v = 2 * np.asarray(u, float).reshape(-1, 3 if three_d else 2) - 1
    r = np.linalg.norm(v, axis=1)
    theta_h = np.mod(np.arctan2(v[:, 1], v[:, 0]), 2 * math.pi)
    if three_d:
        # a zero vector means hovering; any climb angle will do
        theta_v = np.arccos(np.divide(v[:, 2], r, out=np.zeros_like(r), where=r > 0))
    else:
        theta_v = np.full(len(v), math.pi / 2)
    return np.column_stack([theta_h, theta_v, sys.d_max * np.minimum(r, 1.0)])


def act(actor: DenseNet, state, noise_scale: float, rng: np.random.Generator | None = None,
        periodic=None):
    """Actor output plus scaled unit Gaussian noise, clamped to ``[0, 1]``.

    Entries flagged in ``periodic`` (headings) wrap around instead of clamping,
    so heavy noise spreads over all directions rather than piling up at 0.
    """
    u = actor(state)
    noisy = np.any(np.asarray(noise_scale) > 0)
    if noisy:
        u = u + noise_scale * rng.standard_normal(u.shape)
    out = np.clip(u, 0.0, 1.0)
    if periodic is not None and noisy:
        out = np.where(periodic, np.mod(u, 1.0), out)
    return out


def noise_units(m: int, sys, mode: Mode | str, space: str = "action") -> np.ndarray:
    """Per-entry multiplier turning the noise scale into normalised-action units.

    ``action`` adds the noise directly to the squashed outputs; ``physical``
    adds it in radians and metres, so one unit of noise means one radian of
    heading but only one metre of flying distance.
    """
    width = 3 if Mode(mode) is Mode.THREE_D else 2
    if space == "action":
        return np.ones(m * width)
    per = [1 / (2 * math.pi), 1 / math.pi, 1 / sys.d_max if sys.d_max > 0 else 0.0]
    if width == 2:
        per = [per[0], per[2]]
    return np.tile(per, m)


def heading_mask(m: int, mode: Mode | str) -> np.ndarray:
    """True at the heading entry of every UAV's action block."""
    width = 3 if Mode(mode) is Mode.THREE_D else 2
    mask = np.zeros(m * width, dtype=bool)
    mask[::width] = True
    return mask


def td_error(batch: Batch, actor_t: DenseNet, critic_t: DenseNet, critic: DenseNet,
             gamma: float) -> np.ndarray:
    """Bootstrapped TD error for the stored actions; no bootstrap past terminal slots."""
    a_next = actor_t(batch.s_next)
    q_next = critic_t(np.hstack([batch.s_next, a_next]))[:, 0]
    q = critic(np.hstack([batch.s, batch.c]))[:, 0]
    target = batch.z + gamma * np.where(batch.terminal, 0.0, q_next)
    return target - q


def default_reward_scale(scenario: Scenario) -> float:
    """N times the mean local-execution energy of one task."""
    e = scenario.local_energy_matrix()
    scale = scenario.n_ues * float(e.mean())
    return scale if scale > 0 else 1.0


def slot_reward_scales(scenario: Scenario, fixed: float, norm: str = "fixed") -> np.ndarray:
    """Per-slot divisor applied to rewards before they reach the networks.

    ``fixed`` uses one constant for every slot. ``slot`` divides each slot by
    its own all-local energy, so the learner sees the fraction of energy spent
    rather than magnitudes dominated by whichever slot drew the heaviest tasks.
    """
    if norm == "fixed":
        return np.full(scenario.n_slots, fixed)
    le = scenario.local_energy_matrix().sum(axis=1)
    return np.where(le > 0, le, fixed)


@dataclass
class EpochRecord:
    epoch: int
    sum_energy_J: float
    sum_reward: float
    noise_rho: float
    critic_loss: float


TRACE_COLUMNS = ("epoch", "sum_energy_J", "sum_reward", "noise_rho", "critic_loss")


class RatAgent:
    def __init__(self, scenario: Scenario, hp: RatHyperParams | None = None,
                 rng: np.random.Generator | None = None):
        self.hp = hp or scenario.rat
        self.mode = scenario.mode
        self.m = scenario.n_uavs
        self.rng = rng if rng is not None else substream(scenario.config.seed, STREAM_TRAIN)
        self.n_slots = scenario.n_slots
        sd = state_dim(self.m, self.mode) + (1 if self.hp.time_feature else 0)
        ad = action_dim(self.m, self.mode)
        hidden = list(self.hp.hidden)
        self.actor = DenseNet.init([sd] + hidden + [ad], self.rng, output="sigmoid")
        self.critic = DenseNet.init([sd + ad] + hidden + [1], self.rng, output="linear")
        self.actor_t = self.actor.copy()
        self.critic_t = self.critic.copy()
        self.actor_opt = RMSProp(lr=self.hp.actor_lr)
        self.critic_opt = Adam(lr=self.hp.critic_lr)
        self.buffer = ReplayBuffer(self.hp.buffer, sd, ad, prioritized=self.hp.prioritized,
                                   beta=self.hp.beta, mu=self.hp.mu, eps=self.hp.eps)
        self.reward_scale = self.hp.reward_scale or default_reward_scale(scenario)
        self.slot_scale = slot_reward_scales(scenario, self.reward_scale, self.hp.reward_norm)
        self.noise = self.hp.noise_rho
        self.periodic = heading_mask(self.m, self.mode) if self.hp.wrap_heading else None
        self.noise_unit = noise_units(self.m, scenario.sys, self.mode, self.hp.noise_space)
        self.steps = 0
        self.updates = 0

    def observe(self, uav_xyz, battery, t: int, sys) -> np.ndarray:
        """Network input: the encoded state, plus the elapsed fraction of the episode."""
        s = encode_state(uav_xyz, battery, sys, self.mode)
        if self.hp.time_feature:
            s = np.append(s, t / self.n_slots)
        return s

    # ---- learning
    def critic_loss_grad(self, batch: Batch):
        """Weighted squared TD loss, its parameter gradients and the TD errors."""
        delta = td_error(batch, self.actor_t, self.critic_t, self.critic, self.hp.gamma)
        k = len(delta)
        loss = float(np.mean(batch.weights * delta ** 2))
        _, cache = self.critic.forward_cache(np.hstack([batch.s, batch.c]))
        # delta = target - Q, target held fixed
        g_q = (-2.0 / k) * batch.weights * delta
        grads, _ = self.critic.backward(cache, g_q[:, None])
        return loss, grads, delta

    def actor_grad(self, s):
        """Gradient of -mean Q(s, pi(s)) w.r.t. actor parameters."""
        a, a_cache = self.actor.forward_cache(s)
        _, c_cache = self.critic.forward_cache(np.hstack([s, a]))
        k = s.shape[0]
        _, g_in = self.critic.backward(c_cache, np.full((k, 1), -1.0 / k))
        g_a = g_in[:, s.shape[1]:]
        grads, _ = self.actor.backward(a_cache, g_a)
        return grads

    def train_step(self, batch: Batch) -> float:
        loss, c_grads, delta = self.critic_loss_grad(batch)
        self.critic_opt.step(self.critic.params(), c_grads)
        a_grads = self.actor_grad(batch.s)
        self.actor_opt.step(self.actor.params(), a_grads)
        self.buffer.update_priorities(batch.idx, delta)
        soft_update(self.critic_t, self.critic, self.hp.tau)
        soft_update(self.actor_t, self.actor, self.hp.tau)
        self.updates += 1
        return loss

    # ---- acting
    def policy(self, scenario: Scenario):
        """Greedy (noise-free) policy usable with :func:`fmec.env.rollout`."""
        sys = scenario.sys

        def _pi(t, uav_xyz, battery):
            s = self.observe(uav_xyz, battery, t, sys)
            return decode_action(act(self.actor, s, 0.0), sys, self.mode, self.hp.action_space)

        return _pi

    def run_episode(self, scenario: Scenario, takeoff, *, explore: bool = True,
                    learn: bool = True) -> tuple[EpisodeLog, list[float]]:
        """One episode of act -> fly -> match -> reward -> store (-> learn)."""
        env = FlightEnv(scenario)
        log_ = env.reset(takeoff)
        sys = scenario.sys
        losses = []
        s = self.observe(env.uav_xyz, env.battery, env.t, sys)
        while not env.done:
            scale = self.noise * self.noise_unit if explore else 0.0
            u = act(self.actor, s, scale, self.rng, self.periodic)
            acts = decode_action(u, sys, self.mode, self.hp.action_space)
            res = env.step(acts)
            log_.record(acts, res)
            s_next = self.observe(res.uav_xyz, res.battery, env.t, sys)
            if learn:
                z = res.reward / self.slot_scale[env.t - 1]
                self.buffer.add(s, u, z, s_next, env.done)
                self.steps += 1
                if self.buffer.full:
                    for _ in range(self.hp.updates_per_step):
                        batch = self.buffer.sample(self.hp.batch, self.rng)
                        losses.append(self.train_step(batch))
                if explore:
                    self.noise *= self.hp.noise_decay
            s = s_next
        return log_, losses

    def evaluate(self, scenario: Scenario, takeoff) -> EpisodeLog:
        return self.run_episode(scenario, takeoff, explore=False, learn=False)[0]

    # ---- persistence
    def to_dict(self) -> dict:
        return {
            "checkpoint_version": CHECKPOINT_VERSION,
            "mode": self.mode.value,
            "n_uavs": self.m,
            "hp": {**asdict(self.hp), "hidden": list(self.hp.hidden)},
            "reward_scale": self.reward_scale,
            "noise": self.noise,
            "steps": self.steps,
            "updates": self.updates,
            "actor": self.actor.to_dict(),
            "critic": self.critic.to_dict(),
            "actor_target": self.actor_t.to_dict(),
            "critic_target": self.critic_t.to_dict(),
            "actor_opt": self.actor_opt.to_dict(),
            "critic_opt": self.critic_opt.to_dict(),
            "rng": self.rng.bit_generator.state,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path, scenario: Scenario) -> "RatAgent":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        data = json.loads(path.read_text())
        if data.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {data.get('checkpoint_version')!r} "
                             f"not supported (expected {CHECKPOINT_VERSION})")
        if data["mode"] != scenario.mode.value or data["n_uavs"] != scenario.n_uavs:
            raise ValueError("checkpoint does not match the scenario's mode / UAV count")
        hp = dict(data["hp"])
        hp["hidden"] = tuple(hp["hidden"])
        agent = cls(scenario, RatHyperParams(**hp), np.random.default_rng(0))
        agent.rng.bit_generator.state = data["rng"]
        agent.reward_scale = data["reward_scale"]
        agent.noise, agent.steps, agent.updates = data["noise"], data["steps"], data["updates"]
        agent.actor = DenseNet.from_dict(data["actor"])
        agent.critic = DenseNet.from_dict(data["critic"])
        agent.actor_t = DenseNet.from_dict(data["actor_target"])
        agent.critic_t = DenseNet.from_dict(data["critic_target"])
        agent.actor_opt = optimizer_from_dict(data["actor_opt"])
        agent.critic_opt = optimizer_from_dict(data["critic_opt"])
        return agent


def train(agent: RatAgent, scenario: Scenario, epochs: int | None = None,
          on_epoch=None) -> list[EpochRecord]:
    """Train for ``epochs`` episodes, cycling through the taking-off pool."""
    epochs = agent.hp.epochs if epochs is None else epochs
    trace = []
    pool = scenario.takeoff
    for ep in range(epochs):
        ep_log, losses = agent.run_episode(scenario, pool[ep % len(pool)])
        rec = EpochRecord(ep, ep_log.total_energy, ep_log.total_reward, agent.noise,
                          float(np.mean(losses)) if losses else float("nan"))
        trace.append(rec)
        if on_epoch is not None:
            on_epoch(rec, ep_log)
        if ep % 50 == 0:
            log.info("epoch %d energy %.1f J noise %.3f", ep, rec.sum_energy_J, agent.noise)
    return trace
