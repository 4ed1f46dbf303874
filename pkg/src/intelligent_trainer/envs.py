"""Pendulum and continuous Mountain Car, with controllable resets.

States handed around the package are the *internal* task states: ``(theta,
theta_dot)`` for the pendulum and ``(position, velocity)`` for the car.  What a
controller sees is ``env.observe(state)``; for the pendulum that is
``(cos theta, sin theta, theta_dot)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import RngStream

PENDULUM_G = 10.0
PENDULUM_MASS = 1.0
PENDULUM_LENGTH = 1.0
PENDULUM_DT = 0.05
PENDULUM_MAX_TORQUE = 2.0
PENDULUM_MAX_SPEED = 8.0

CAR_POWER = 0.0015
CAR_GRAVITY = 0.0025
CAR_MIN_POS, CAR_MAX_POS = -1.2, 0.6
CAR_MAX_SPEED = 0.07
CAR_GOAL = 0.45


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    obs_dim: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    state_low: tuple[float, ...]
    state_high: tuple[float, ...]
    max_episode_steps: int
    # dimensions that are angles wrapped into [low, high)
    periodic: tuple[bool, ...] = ()

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if any(lo >= hi for lo, hi in zip(self.action_low, self.action_high)):
            raise ValueError("action_low must be < action_high")
        if any(lo >= hi for lo, hi in zip(self.state_low, self.state_high)):
            raise ValueError("state_low must be < state_high")

    @property
    def is_periodic(self) -> np.ndarray:
        if not self.periodic:
            return np.zeros(self.state_dim, dtype=bool)
        return np.asarray(self.periodic, dtype=bool)

    def clip_state(self, s: np.ndarray) -> np.ndarray:
        return np.clip(s, self.state_low, self.state_high)

    def clip_action(self, a: np.ndarray) -> np.ndarray:
        return np.clip(a, self.action_low, self.action_high)


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


class StepResult(NamedTuple):
    next_state: np.ndarray
    reward: float
    done: bool
    # True when the episode ended on the horizon rather than a terminal state
    truncated: bool


def angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


def _check_finite(*xs) -> None:
    for x in xs:
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite input {x!r}")


def pendulum_step(internal, torque: float) -> tuple[np.ndarray, float, bool]:
    """Advance the pendulum one tick. Theta = 0 is upright."""
    th, thdot = float(internal[0]), float(internal[1])
    u = float(np.asarray(torque).reshape(-1)[0])
    _check_finite(th, thdot, u)
    u = min(max(u, -PENDULUM_MAX_TORQUE), PENDULUM_MAX_TORQUE)
    thdot = min(max(thdot, -PENDULUM_MAX_SPEED), PENDULUM_MAX_SPEED)
    reward = -(float(angle_normalize(th)) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2)
    g, m, l, dt = PENDULUM_G, PENDULUM_MASS, PENDULUM_LENGTH, PENDULUM_DT
    new_thdot = thdot + (3.0 * g / (2.0 * l) * math.sin(th) + 3.0 / (m * l * l) * u) * dt
    new_thdot = min(max(new_thdot, -PENDULUM_MAX_SPEED), PENDULUM_MAX_SPEED)
    new_th = float(angle_normalize(th + new_thdot * dt))
    return np.array([new_th, new_thdot]), reward, False


def mountaincar_step(internal, force: float) -> tuple[np.ndarray, float, bool]:
    """Advance the car one tick. A state already at the goal is terminal."""
    pos, vel = float(internal[0]), float(internal[1])
    f = float(np.asarray(force).reshape(-1)[0])
    _check_finite(pos, vel, f)
    f = min(max(f, -1.0), 1.0)
    start_at_goal = pos >= CAR_GOAL
    vel += f * CAR_POWER - math.cos(3.0 * pos) * CAR_GRAVITY
    vel = min(max(vel, -CAR_MAX_SPEED), CAR_MAX_SPEED)
    pos += vel
    pos = min(max(pos, CAR_MIN_POS), CAR_MAX_POS)
    if pos == CAR_MIN_POS and vel < 0:
        vel = 0.0
    done = start_at_goal or pos >= CAR_GOAL
    reward = -0.1 * f * f + (100.0 if done else 0.0)
    return np.array([pos, vel]), reward, done


class Environment:
    """Common interface: controllable resets, stepping, and a real-sample counter.

    ``sample_count`` counts every call to :meth:`step` over the lifetime of the
    instance; the training budget is audited against it.
    """

    spec: EnvSpec

    def __init__(self, rng: RngStream):
        self.rng = rng
        self.state: np.ndarray | None = None
        self.sample_count = 0
        self.episode_steps = 0
        self.done = True

    # task specific
    def sample_initial_state(self, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def dynamics(self, state: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        raise NotImplementedError

    def analytic_reward(self, state, action, next_state) -> float:
        raise NotImplementedError

    def observe(self, state) -> np.ndarray:
        return np.asarray(state, dtype=np.float64)

    # shared
    def sample_state_uniform(self, rng: RngStream) -> np.ndarray:
        return sample_state_uniform(self.spec, rng)

    def reset_random(self) -> np.ndarray:
        return self.reset_to(self.sample_initial_state(self.rng))

    def reset_to(self, state) -> np.ndarray:
        s = np.array(state, dtype=np.float64).reshape(self.spec.state_dim)
        _check_finite(s)
        self.state = s
        self.episode_steps = 0
        self.done = False
        return s.copy()

    def step(self, action) -> StepResult:
        if self.state is None or self.done:
            raise RuntimeError("step() called on an environment that needs a reset")
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        nxt, reward, terminal = self.dynamics(self.state, a)
        self.sample_count += 1
        self.episode_steps += 1
        truncated = not terminal and self.episode_steps >= self.spec.max_episode_steps
        self.state = nxt
        self.done = terminal or truncated
        return StepResult(nxt.copy(), float(reward), self.done, truncated)


def sample_state_uniform(spec: EnvSpec, rng: RngStream) -> np.ndarray:
    """Uniform draw from the bounded state box."""
    low = np.asarray(spec.state_low, dtype=np.float64)
    high = np.asarray(spec.state_high, dtype=np.float64)
    if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
        raise NotImplementedError(f"{spec.name}: state box is unbounded")
    return rng.uniform_array(low, high)


PENDULUM_SPEC = EnvSpec(
    name="pendulum",
    state_dim=2,
    action_dim=1,
    obs_dim=3,
    action_low=(-PENDULUM_MAX_TORQUE,),
    action_high=(PENDULUM_MAX_TORQUE,),
    state_low=(-math.pi, -PENDULUM_MAX_SPEED),
    state_high=(math.pi, PENDULUM_MAX_SPEED),
    max_episode_steps=200,
    periodic=(True, False),
)

MOUNTAINCAR_SPEC = EnvSpec(
    name="mountaincar",
    state_dim=2,
    action_dim=1,
    obs_dim=2,
    action_low=(-1.0,),
    action_high=(1.0,),
    state_low=(CAR_MIN_POS, -CAR_MAX_SPEED),
    state_high=(CAR_MAX_POS, CAR_MAX_SPEED),
    max_episode_steps=999,
)


class Pendulum(Environment):
    spec = PENDULUM_SPEC

    def sample_initial_state(self, rng: RngStream) -> np.ndarray:
        return rng.uniform_array([-math.pi, -1.0], [math.pi, 1.0])

    def dynamics(self, state, action):
        return pendulum_step(state, action[0])

    def analytic_reward(self, state, action, next_state) -> float:
        th, thdot = float(state[0]), float(state[1])
        u = float(np.clip(np.asarray(action).reshape(-1)[0], -PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE))
        thdot = min(max(thdot, -PENDULUM_MAX_SPEED), PENDULUM_MAX_SPEED)
        return -(float(angle_normalize(th)) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2)

    def observe(self, state) -> np.ndarray:
        s = np.asarray(state, dtype=np.float64)
        th, thdot = s[..., 0], s[..., 1]
        return np.stack([np.cos(th), np.sin(th), thdot], axis=-1)


class MountainCar(Environment):
    spec = MOUNTAINCAR_SPEC

    def sample_initial_state(self, rng: RngStream) -> np.ndarray:
        return np.array([-0.6 + 0.2 * rng.uniform(), 0.0])

    def dynamics(self, state, action):
        return mountaincar_step(state, action[0])

    def analytic_reward(self, state, action, next_state) -> float:
        f = float(np.clip(np.asarray(action).reshape(-1)[0], -1.0, 1.0))
        goal = state[0] >= CAR_GOAL or next_state[0] >= CAR_GOAL
        return -0.1 * f * f + (100.0 if goal else 0.0)


TASKS = {"pendulum": Pendulum, "mountaincar": MountainCar}


def make_env(task: str, rng: RngStream) -> Environment:
    try:
        return TASKS[task](rng)
    except KeyError:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(TASKS)}") from None
