"""Outer-layer agents that choose TPE actions.

Every trainer follows the same loop from the harness::

    index, action = trainer.act(obs)
    report = tpe.step(action)
    trainer.observe(obs, index, report.reward, report.observation)
    trainer.tick()

``index`` is the position of ``action`` in the trainer's :class:`ActionTable`,
or ``None`` for trainers with a constant action.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np

from .numerics import AdamState, Mlp, RngStream, adam_step
from .tpe import TpeAction

TWO_VALUES = (0.2, 1.0)
FIVE_VALUES = (0.2, 0.4, 0.6, 0.8, 1.0)
FIXED_ACTION = TpeAction(0.6, 0.6, 0.6)
# uses real data only; a2 = 1 gives K_c = T_c = 0
NOCYBER_ACTION = TpeAction(0.0, 0.0, 1.0)


class ActionTable:
    """Cartesian product of per-dimension value sets, flattened to a list."""

    def __init__(self, values: Sequence[float] | Sequence[Sequence[float]]):
        if values and not isinstance(values[0], (list, tuple)):
            values = [values] * 3
        if len(values) != 3:
            raise ValueError("need value sets for a0, a1 and a2")
        self.values = tuple(tuple(float(v) for v in dim) for dim in values)
        self.actions = [TpeAction(*combo) for combo in itertools.product(*self.values)]

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, i: int) -> TpeAction:
        return self.actions[i]

    def index(self, action: TpeAction) -> int:
        return self.actions.index(action)

    def nearest(self, action: TpeAction) -> int:
        target = np.array(action.as_tuple())
        dists = [float(np.sum((np.array(a.as_tuple()) - target) ** 2)) for a in self.actions]
        return int(np.argmin(dists))

    def __contains__(self, action: TpeAction) -> bool:
        return action in self.actions


class CappedReplay:
    """Trainer memory holding at most ``capacity // n_actions`` samples per action.

    A sample for a full action slot overwrites a random sample of the same
    action. When there are more actions than memory slots the per-action cap
    is 1, and a new sample arriving with the memory full overwrites a random
    sample of any action instead.
    """

    def __init__(self, capacity: int, n_actions: int):
        if capacity < 1 or n_actions < 1:
            raise ValueError("capacity and n_actions must be >= 1")
        self.capacity = capacity
        self.n_actions = n_actions
        self.per_action_cap = max(1, capacity // n_actions)
        self.stores: list[list[tuple]] = [[] for _ in range(n_actions)]

    def __len__(self) -> int:
        return sum(len(s) for s in self.stores)

    def store(self, sample: tuple, rng: RngStream) -> None:
        """``sample`` is ``(obs, action_index, reward, next_obs)``."""
        k = int(sample[1])
        if not 0 <= k < self.n_actions:
            raise ValueError(f"action index {k} out of range")
        bucket = self.stores[k]
        if len(bucket) >= self.per_action_cap:
            bucket[int(rng.integers(len(bucket)))] = sample
        elif len(self) >= self.capacity:
            owners = [j for j, s in enumerate(self.stores) for _ in s]
            victim = owners[int(rng.integers(len(owners)))]
            vb = self.stores[victim]
            vb.pop(int(rng.integers(len(vb))))
            bucket.append(sample)
        else:
            bucket.append(sample)

    def all_samples(self) -> list[tuple]:
        return [s for bucket in self.stores for s in bucket]

    def sample(self, batch_size: int, rng: RngStream) -> list[tuple]:
        pool = self.all_samples()
        if not pool:
            return []
        if len(pool) < batch_size:
            idx = rng.integers(len(pool), size=batch_size)
        else:
            idx = rng.permutation(len(pool))[:batch_size]
        return [pool[int(i)] for i in idx]


class Trainer:
    table: ActionTable | None = None

    def __init__(self):
        self.t = 0

    def act(self, obs: float) -> tuple[int | None, TpeAction]:
        raise NotImplementedError

    def observe(self, obs: float, index: int | None, reward: float, next_obs: float) -> None:
        pass

    def tick(self) -> None:
        self.t += 1


class ConstantTrainer(Trainer):
    def __init__(self, action: TpeAction):
        super().__init__()
        self.action = action

    def act(self, obs):
        return None, self.action


def fixed_trainer(action: TpeAction = FIXED_ACTION) -> ConstantTrainer:
    return ConstantTrainer(action)


def nocyber_trainer() -> ConstantTrainer:
    return ConstantTrainer(NOCYBER_ACTION)


class RandomTrainer(Trainer):
    def __init__(self, table: ActionTable, rng: RngStream):
        super().__init__()
        self.table = table
        self.rng = rng

    def act(self, obs):
        i = int(self.rng.integers(len(self.table)))
        return i, self.table[i]


class DqnTrainer(Trainer):
    """Epsilon-greedy DQN over a discrete action table with capped memory."""

    def __init__(
        self,
        table: ActionTable,
        rng: RngStream,
        t_max: int,
        memory_size: int = 32,
        gamma: float = 0.5,
        lr: float = 1e-2,
        hidden: int = 16,
        n_batches: int = 4,
        batch_size: int = 8,
        eps_start: float = 1.0,
        eps_final: float = 0.1,
        eps_fraction: float = 0.1,
    ):
        super().__init__()
        self.table = table
        self.rng = rng
        self.t_max = max(int(t_max), 1)
        self.memory = CappedReplay(memory_size, len(table))
        self.gamma = gamma
        self.lr = lr
        self.n_batches = n_batches
        self.batch_size = batch_size
        self.eps_start, self.eps_final, self.eps_fraction = eps_start, eps_final, eps_fraction
        self.q_net = Mlp((1, hidden, len(table)), rng, "tanh", "identity")
        self.optimizer = AdamState(self.q_net.n_params)
        self.diagnostics = {"empty_updates": 0}

    def epsilon(self, t: int) -> float:
        horizon = self.eps_fraction * self.t_max
        if horizon <= 0 or t >= horizon:
            return self.eps_final
        return self.eps_start - (self.eps_start - self.eps_final) * (t / horizon)

    def q_values(self, obs: float) -> np.ndarray:
        return self.q_net.forward(np.array([obs], dtype=np.float64))

    def greedy(self, obs: float) -> int:
        return int(np.argmax(self.q_values(obs)))

    def select_action(self, obs: float, t: int, rng: RngStream) -> int:
        if rng.uniform() < self.epsilon(t):
            return int(rng.integers(len(self.table)))
        return self.greedy(obs)

    def act(self, obs):
        i = self.select_action(obs, self.t, self.rng)
        return i, self.table[i]

    def store(self, obs: float, index: int, reward: float, next_obs: float) -> None:
        self.memory.store((float(obs), int(index), float(reward), float(next_obs)), self.rng)

    def observe(self, obs, index, reward, next_obs):
        self.store(obs, index, reward, next_obs)
        self.update()

    def update(self) -> None:
        """Regress Q(obs)[a] toward r + gamma * max Q(next_obs) on a few small batches."""
        if len(self.memory) == 0:
            self.diagnostics["empty_updates"] += 1
            return
        for _ in range(self.n_batches):
            batch = self.memory.sample(self.batch_size, self.rng)
            obs = np.array([[b[0]] for b in batch])
            acts = np.array([b[1] for b in batch])
            rewards = np.array([b[2] for b in batch])
            nxt = np.array([[b[3]] for b in batch])
            target = rewards + self.gamma * self.q_net.forward(nxt).max(axis=1)
            q = self.q_net.forward(obs)
            rows = np.arange(len(batch))
            grad_out = np.zeros_like(q)
            grad_out[rows, acts] = 2.0 * (q[rows, acts] - target) / len(batch)
            grads, _ = self.q_net.backprop(obs, grad_out)
            adam_step(self.q_net.params, grads, self.optimizer, self.lr)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class ReinforceTrainer(Trainer):
    """Softmax policy trained by REINFORCE on episodes of fixed length."""

    def __init__(self, table: ActionTable, rng: RngStream, lr: float = 1e-2, hidden: int = 16,
                 episode_length: int = 5):
        super().__init__()
        self.table = table
        self.rng = rng
        self.lr = lr
        self.episode_length = episode_length
        self.policy_net = Mlp((1, hidden, len(table)), rng, "tanh", "identity")
        self.episode: list[tuple[float, int, float]] = []

    def probabilities(self, obs: float) -> np.ndarray:
        return softmax(self.policy_net.forward(np.array([obs], dtype=np.float64)))

    def act(self, obs):
        p = self.probabilities(obs)
        i = int(np.searchsorted(np.cumsum(p), self.rng.uniform() * p.sum(), side="right"))
        i = min(i, len(p) - 1)
        return i, self.table[i]

    def observe(self, obs, index, reward, next_obs):
        self.episode.append((float(obs), int(index), float(reward)))
        if len(self.episode) == self.episode_length:
            self.reinforce_update(self.episode)
            self.episode = []

    def reinforce_update(self, episode: Sequence[tuple[float, int, float]]) -> None:
        """Gradient ascent on ``G * sum_t log pi(a_t | o_t)`` with ``G`` the episode return."""
        if len(episode) != self.episode_length:
            raise ValueError(f"episode must have {self.episode_length} steps, got {len(episode)}")
        ret = math.fsum(r for _, _, r in episode)
        if ret == 0.0:
            return
        obs = np.array([[o] for o, _, _ in episode])
        acts = np.array([a for _, a, _ in episode])
        p = softmax(self.policy_net.forward(obs))
        grad_logp = -p
        grad_logp[np.arange(len(episode)), acts] += 1.0
        grads, _ = self.policy_net.backprop(obs, grad_logp)
        self.policy_net.params += self.lr * ret * grads
