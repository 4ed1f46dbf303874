"""Learned dynamics model and the cyber environment built on it."""

from __future__ import annotations

import numpy as np

from .envs import Environment, EnvSpec, StepResult
from .numerics import AdamState, Mlp, RngStream, adam_step

VARIANCE_FLOOR = 1e-12


class Normalizer:
    """Streaming per-dimension mean and variance (denominator = count)."""

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.running_mean = np.zeros(dim)
        self.running_sq_diff = np.zeros(dim)

    def update(self, batch) -> "Normalizer":
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        if x.shape[1] != self.dim:
            raise ValueError(f"batch dimension {x.shape[1]} != {self.dim}")
        n = x.shape[0]
        b_mean = x.mean(axis=0)
        b_m2 = ((x - b_mean) ** 2).sum(axis=0)
        total = self.count + n
        delta = b_mean - self.running_mean
        self.running_mean = self.running_mean + delta * (n / total)
        self.running_sq_diff = self.running_sq_diff + b_m2 + delta ** 2 * (self.count * n / total)
        self.count = total
        return self

    @property
    def variance(self) -> np.ndarray:
        if self.count == 0:
            return np.ones(self.dim)
        return self.running_sq_diff / self.count

    @property
    def std(self) -> np.ndarray:
        var = self.variance
        return np.where(var < VARIANCE_FLOOR, 1.0, np.sqrt(np.maximum(var, 0.0)))

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.running_mean) / self.std

    def denormalize(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.running_mean

    def copy(self) -> "Normalizer":
        out = Normalizer(self.dim)
        out.count = self.count
        out.running_mean = self.running_mean.copy()
        out.running_sq_diff = self.running_sq_diff.copy()
        return out


def _wrap(x: np.ndarray, low: np.ndarray, period: np.ndarray) -> np.ndarray:
    return (x - low) % period + low


class DynamicsModel:
    """MLP on normalized (state, action) predicting the normalized state change.

    For periodic (angle) dimensions the change is the wrapped difference and
    predictions are wrapped back into the box; other dimensions are clipped.
    """

    def __init__(self, spec: EnvSpec, rng: RngStream, hidden: tuple[int, ...] = (64,), activation: str = "tanh"):
        self.spec = spec
        self.rng = rng
        self.net = Mlp((spec.state_dim + spec.action_dim, *hidden, spec.state_dim), rng, activation, "identity")
        # start from the no-change model: zero output layer, random hidden layers
        self.net.weights[-1][...] = 0.0
        self.net.biases[-1][...] = 0.0
        self.optimizer = AdamState(self.net.n_params)
        self.input_normalizer = Normalizer(spec.state_dim + spec.action_dim)
        self.delta_normalizer = Normalizer(spec.state_dim)
        self._low = np.asarray(spec.state_low, dtype=np.float64)
        self._high = np.asarray(spec.state_high, dtype=np.float64)
        self._periodic = spec.is_periodic

    @property
    def fitted(self) -> bool:
        return self.input_normalizer.count >= 2

    def state_delta(self, states, next_states) -> np.ndarray:
        d = np.asarray(next_states, dtype=np.float64) - np.asarray(states, dtype=np.float64)
        if self._periodic.any():
            half = (self._high - self._low) / 2.0
            wrapped = _wrap(d, -half, 2.0 * half)
            d = np.where(self._periodic, wrapped, d)
        return d

    def apply_delta(self, states, deltas) -> np.ndarray:
        nxt = np.asarray(states, dtype=np.float64) + deltas
        if self._periodic.any():
            nxt = np.where(self._periodic, _wrap(nxt, self._low, self._high - self._low), nxt)
        return np.clip(nxt, self._low, self._high)

    def update_normalizers(self, states, actions, next_states) -> None:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        self.input_normalizer.update(np.concatenate([states, actions], axis=1))
        self.delta_normalizer.update(self.state_delta(states, np.atleast_2d(next_states)))

    def fit(
        self,
        states,
        actions,
        next_states,
        epochs: int,
        batch_size: int = 64,
        lr: float = 1e-3,
        update_normalizers: bool = True,
        epoch_samples: int | None = None,
    ) -> list[float]:
        """Minimize MSE on normalized deltas. Returns the mean loss of each epoch.

        ``epoch_samples`` bounds how many rows one epoch visits (a random
        subset when the data is larger); ``None`` visits every row.
        """
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        next_states = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
        n = states.shape[0]
        if n == 0:
            raise ValueError("cannot fit a dynamics model on empty data")
        if update_normalizers:
            self.update_normalizers(states, actions, next_states)
        if epochs <= 0:
            return []
        x = self.input_normalizer.normalize(np.concatenate([states, actions], axis=1))
        y = self.delta_normalizer.normalize(self.state_delta(states, next_states))
        per_epoch = n if epoch_samples is None else min(n, epoch_samples)
        trace = []
        for _ in range(epochs):
            order = self.rng.permutation(n)[:per_epoch]
            total, batches = 0.0, 0
            for start in range(0, per_epoch, batch_size):
                idx = order[start:start + batch_size]
                xb = x[idx]
                pred, cache = self.net.forward_cached(xb)
                err = pred - y[idx]
                total += float(np.mean(err * err))
                batches += 1
                grads, _ = self.net.backprop(xb, 2.0 * err / err.size, cache)
                adam_step(self.net.params, grads, self.optimizer, lr)
            trace.append(total / batches)
        return trace

    def predict_next(self, state, action) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError("dynamics model normalizers are not initialized")
        s = np.asarray(state, dtype=np.float64)
        a = np.asarray(action, dtype=np.float64)
        x = self.input_normalizer.normalize(np.concatenate([s, a], axis=-1))
        delta = self.delta_normalizer.denormalize(self.net.forward(x))
        return self.apply_delta(s, delta)


class CyberEnv(Environment):
    """The learned model presented through the ordinary environment interface.

    Rewards come from the real task's closed-form reward; episodes end only on
    the horizon. ``sample_count`` here counts synthetic steps and is unrelated
    to the real environment's counter.
    """

    def __init__(self, real_env: Environment, model: DynamicsModel, rng: RngStream, horizon: int | None = None):
        super().__init__(rng)
        self.real_env = real_env
        self.model = model
        self.spec = real_env.spec
        self.horizon = horizon or real_env.spec.max_episode_steps

    def sample_initial_state(self, rng: RngStream) -> np.ndarray:
        return self.sample_state_uniform(rng)

    def observe(self, state) -> np.ndarray:
        return self.real_env.observe(state)

    def analytic_reward(self, state, action, next_state) -> float:
        return self.real_env.analytic_reward(state, action, next_state)

    def dynamics(self, state, action):
        nxt = self.model.predict_next(state, action)
        return nxt, self.real_env.analytic_reward(state, action, nxt), False

    def step(self, action):
        if self.state is None or self.done:
            raise RuntimeError("step() called on a cyber environment that needs a reset")
        a = self.spec.clip_action(np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim))
        nxt, reward, _ = self.dynamics(self.state, a)
        self.sample_count += 1
        self.episode_steps += 1
        truncated = self.episode_steps >= self.horizon
        self.state = nxt
        self.done = truncated
        return StepResult(nxt.copy(), float(reward), truncated, truncated)
