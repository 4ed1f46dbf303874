"""Deterministic actor-critic target controller and its replay buffers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .envs import EnvSpec, Transition
from .numerics import AdamState, Mlp, RngStream, adam_step


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored as flat arrays."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.cursor
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.dones[i] = float(t.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def extend(self, transitions) -> None:
        for t in transitions:
            self.add(t)

    def _order(self) -> np.ndarray:
        # oldest first
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.size) + self.cursor) % self.capacity

    def contents(self) -> tuple[np.ndarray, ...]:
        """``(states, actions, rewards, next_states, dones)`` oldest first."""
        idx = self._order()
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx]

    def transition(self, k: int) -> Transition:
        """The ``k``-th oldest stored transition."""
        i = self._order()[k]
        return Transition(self.states[i].copy(), self.actions[i].copy(), float(self.rewards[i]),
                          self.next_states[i].copy(), bool(self.dones[i]))

    def sample(self, batch_size: int, rng: RngStream) -> tuple[np.ndarray, ...]:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(self.size, size=batch_size)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx]

    def random_state(self, rng: RngStream) -> np.ndarray:
        return self.states[int(rng.integers(self.size))].copy()


@dataclass
class DdpgParams:
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    batch_size: int = 64
    # exploration std as a fraction of the action range
    noise_scale: float = 0.1
    warmup_size: int = 64
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if min(self.actor_lr, self.critic_lr) <= 0 or self.noise_scale < 0:
            raise ValueError("learning rates must be positive and noise_scale non-negative")


class DdpgController:
    """Actor-critic with delayed target networks.

    Methods take *internal* task states; ``observe`` maps them to the network
    input features.
    """

    def __init__(self, spec: EnvSpec, observe: Callable[[np.ndarray], np.ndarray], params: DdpgParams, rng: RngStream):
        self.spec = spec
        self.observe = observe
        self.params = params
        self.rng = rng
        p = params
        self.actor = Mlp((spec.obs_dim, *p.hidden, spec.action_dim), rng, p.activation, "tanh")
        self.critic = Mlp((spec.obs_dim + spec.action_dim, *p.hidden, 1), rng, p.activation, "identity")
        self.target_actor = self.actor.clone()
        self.target_critic = self.critic.clone()
        self.actor_opt = AdamState(self.actor.n_params)
        self.critic_opt = AdamState(self.critic.n_params)
        self._low = np.asarray(spec.action_low, dtype=np.float64)
        self._high = np.asarray(spec.action_high, dtype=np.float64)
        self._mid = (self._high + self._low) / 2.0
        self._half = (self._high - self._low) / 2.0
        self.update_count = 0

    def _policy(self, net: Mlp, obs: np.ndarray) -> np.ndarray:
        return self._mid + self._half * net.forward(obs)

    def act(self, state, explore: bool = False, rng: RngStream | None = None) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        if state.shape[-1] != self.spec.state_dim:
            raise ValueError(f"state dimension {state.shape[-1]} != {self.spec.state_dim}")
        a = self._policy(self.actor, self.observe(state))
        if explore:
            rng = rng or self.rng
            sigma = self.params.noise_scale * (self._high - self._low)
            a = a + sigma * rng.normal(a.shape)
        return np.clip(a, self._low, self._high)

    def q_value(self, state, action) -> float | np.ndarray:
        obs = self.observe(np.asarray(state, dtype=np.float64))
        a = np.asarray(action, dtype=np.float64)
        if a.shape[-1] != self.spec.action_dim:
            raise ValueError(f"action dimension {a.shape[-1]} != {self.spec.action_dim}")
        q = self.critic.forward(np.concatenate([obs, a], axis=-1))
        return float(q[0]) if q.ndim == 1 else q[:, 0]

    def bellman_targets(self, rewards, next_states, dones) -> np.ndarray:
        obs2 = self.observe(next_states)
        a2 = self._policy(self.target_actor, obs2)
        q2 = self.target_critic.forward(np.concatenate([obs2, a2], axis=1))[:, 0]
        return rewards + self.params.gamma * (1.0 - dones) * q2

    def update(self, batch) -> float:
        """One critic regression step, one actor ascent step, one soft update."""
        s, a, r, s2, d = batch
        p = self.params
        obs = self.observe(s)
        y = self.bellman_targets(r, s2, d)
        x = np.concatenate([obs, a], axis=1)
        q, cache = self.critic.forward_cached(x)
        err = q[:, 0] - y
        n = len(y)
        g_critic, _ = self.critic.backprop(x, (2.0 / n) * err[:, None], cache)
        adam_step(self.critic.params, g_critic, self.critic_opt, p.critic_lr)

        raw, cache = self.actor.forward_cached(obs)
        pi = self._mid + self._half * raw
        xa = np.concatenate([obs, pi], axis=1)
        _, dx = self.critic.backprop(xa, np.full((n, 1), -1.0 / n))
        d_raw = dx[:, obs.shape[1]:] * self._half
        g_actor, _ = self.actor.backprop(obs, d_raw, cache)
        adam_step(self.actor.params, g_actor, self.actor_opt, p.actor_lr)

        self.soft_update()
        self.update_count += 1
        return float(np.mean(err * err))

    def soft_update(self) -> None:
        tau = self.params.tau
        for target, online in ((self.target_actor, self.actor), (self.target_critic, self.critic)):
            target.params *= 1.0 - tau
            target.params += tau * online.params

    def train_mixed(self, real_buf: ReplayBuffer, cyber_buf: ReplayBuffer, t_real: int, t_cyber: int,
                    rng: RngStream) -> dict:
        """Exactly ``t_real`` real and ``t_cyber`` cyber mini-batch updates in random order.

        A source holding fewer than ``batch_size`` transitions is skipped and the
        skip is reported.
        """
        if t_real < 0 or t_cyber < 0:
            raise ValueError("step counts must be non-negative")
        bs = self.params.batch_size
        do_real = t_real if len(real_buf) >= bs else 0
        do_cyber = t_cyber if len(cyber_buf) >= bs else 0
        schedule = np.array([0] * do_real + [1] * do_cyber)
        if schedule.size:
            schedule = schedule[rng.permutation(schedule.size)]
        losses = []
        for src in schedule:
            buf = real_buf if src == 0 else cyber_buf
            losses.append(self.update(buf.sample(bs, rng)))
        return {
            "real_steps": do_real,
            "cyber_steps": do_cyber,
            "skipped_real": t_real - do_real,
            "skipped_cyber": t_cyber - do_cyber,
            "critic_loss": float(np.mean(losses)) if losses else float("nan"),
        }

    def copy_weights_from(self, src: "DdpgController") -> None:
        pairs = ((self.actor, src.actor), (self.critic, src.critic),
                 (self.target_actor, src.target_actor), (self.target_critic, src.target_critic))
        if not all(d.same_architecture(s) for d, s in pairs):
            raise ValueError("controller architectures differ")
        for d, s in pairs:
            d.params[...] = s.params
        self.actor_opt.reset()
        self.critic_opt.reset()
