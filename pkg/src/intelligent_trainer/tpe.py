"""The training-process environment: one model-based training step per ``step``.

A trainer drives a :class:`Tpe` with :class:`TpeAction` triples:

* ``a0`` biases where real episodes start (critic value vs. pure chance),
* ``a1`` is the probability that a cyber episode starts from a stored real state,
* ``a2`` is the real share of sampled and trained data, fixing the cyber
  sample count ``K_c`` and cyber batch count ``T_c``.

The reward handed back is the sign of the change in mean real sampling reward.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .controller import DdpgController, ReplayBuffer
from .cyber import CyberEnv, DynamicsModel
from .envs import Environment, Transition
from .numerics import RngStream


class ObsMode(str, enum.Enum):
    CONSTANT = "const"
    LAST_REWARD = "v1"
    SAMPLE_RATIO = "v2"


@dataclass(frozen=True)
class TpeAction:
    a0: float
    a1: float
    a2: float

    def __post_init__(self):
        for name in ("a0", "a1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if not 0.0 < self.a2 <= 1.0:
            raise ValueError(f"a2={self.a2} outside (0, 1]")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.a0, self.a1, self.a2)


@dataclass
class TpeConfig:
    k_real: int = 50
    t_real: int = 50
    budget_n: int = 50_200
    init_samples: int = 200
    m1: int = 50
    m2: int = 5
    obs_mode: ObsMode = ObsMode.CONSTANT
    model_epochs: int = 5
    model_batch_size: int = 64
    model_lr: float = 1e-3
    # rows visited per model epoch; None means the whole real buffer
    model_epoch_samples: int | None = 1024
    model_refit_interval: int = 1
    real_buffer_capacity: int = 100_000
    cyber_buffer_capacity: int = 100_000
    cyber_horizon: int | None = None

    def __post_init__(self):
        self.obs_mode = ObsMode(self.obs_mode)
        if not self.m1 > self.m2 > 0:
            raise ValueError("need m1 > m2 > 0")
        if self.k_real < 1 or self.t_real < 0:
            raise ValueError("need k_real >= 1 and t_real >= 0")
        if self.init_samples < 0 or self.budget_n < self.init_samples:
            raise ValueError("need 0 <= init_samples <= budget_n")
        if self.model_refit_interval < 1:
            raise ValueError("model_refit_interval must be >= 1")


@dataclass
class TpeStepReport:
    observation: float
    reward: int
    raw_avg_reward: float
    real_samples_used_total: int
    cyber_samples_this_step: int
    done: bool
    real_samples_this_step: int = 0
    cyber_batches: int = 0
    training: dict = field(default_factory=dict)
    # per real transition: which controller acted (None = this TPE's own)
    sources: list = field(default_factory=list)


class SampleBudget:
    """Counter of real samples drawn against the limit ``N``; may be shared."""

    def __init__(self, limit: int):
        self.limit = int(limit)
        self.used = 0

    @property
    def remaining(self) -> int:
        return max(self.limit - self.used, 0)

    @property
    def exhausted(self) -> bool:
        return self.used >= self.limit


def _exact(x: float) -> Fraction:
    # the shortest decimal spelling, so 0.2 means 1/5 rather than its binary neighbour
    return Fraction(repr(float(x)))


def _scaled_count(base: int, a2: float) -> int:
    if not 0.0 < a2 <= 1.0:
        raise ValueError(f"a2={a2} must lie in (0, 1]")
    r = _exact(a2)
    return round(base * (1 - r) / r)


def compute_kc(k_real: int, a2: float) -> int:
    """Cyber samples per step, ``K_r (1 - a2) / a2`` rounded half to even."""
    return _scaled_count(k_real, a2)


def compute_tc(t_real: int, a2: float) -> int:
    """Cyber training batches per step, ``T_r (1 - a2) / a2`` rounded half to even."""
    return _scaled_count(t_real, a2)


def sign_reward(new_avg: float, old_avg: float) -> int:
    return int(np.sign(new_avg - old_avg))


def quality(state, a0: float, controller: DdpgController, rng: RngStream) -> float:
    """Blend of critic value at the policy action and a fresh uniform draw."""
    u = rng.uniform()
    q = controller.q_value(state, controller.act(state))
    return a0 * q + (1.0 - a0) * u


def sampling_reset_real(env: Environment, a0: float, controller: DdpgController, rng: RngStream,
                        m1: int = 50, m2: int = 5) -> tuple[np.ndarray, int]:
    """Draw start candidates until one beats every quality seen so far.

    At least ``m2 + 1`` and at most ``m1`` candidates are drawn. The last
    candidate becomes the environment's state. Returns ``(state, trials)``.
    """
    best = -np.inf
    for i in range(1, m1 + 1):
        s = env.sample_initial_state(rng)
        phi = quality(s, a0, controller, rng)
        best = max(best, phi)
        if i > m2 and phi >= best:
            break
    env.reset_to(s)
    return s, i


def sampling_reset_cyber(cyber_env: Environment, a1: float, real_buffer: ReplayBuffer,
                         rng: RngStream) -> tuple[np.ndarray, bool]:
    """Start a cyber episode from a stored real state with probability ``a1``.

    Returns ``(state, from_buffer)``; an empty buffer falls back to a uniform
    draw from the state box.
    """
    if rng.uniform() < a1 and len(real_buffer) > 0:
        return cyber_env.reset_to(real_buffer.random_state(rng)), True
    return cyber_env.reset_to(cyber_env.sample_state_uniform(rng)), False


# chooses the acting controller for an episode segment: -> (controller, source tag)
Behaviour = Callable[[], "tuple[DdpgController, object]"]


class Tpe:
    """One model-based training loop exposed through step / observation / reward."""

    def __init__(self, config: TpeConfig, env: Environment, controller: DdpgController,
                 model: DynamicsModel, rng: RngStream, budget: SampleBudget | None = None):
        self.config = config
        self.env = env
        self.controller = controller
        self.model = model
        self.rng = rng
        self.budget = budget or SampleBudget(config.budget_n)
        spec = env.spec
        self.real_buffer = ReplayBuffer(config.real_buffer_capacity, spec.state_dim, spec.action_dim)
        self.cyber_buffer = ReplayBuffer(config.cyber_buffer_capacity, spec.state_dim, spec.action_dim)
        self.cyber_env = CyberEnv(env, model, rng, config.cyber_horizon)
        self.n_own = 0
        self.t = 0
        self.last_avg_reward = 0.0
        self.last_real: list[Transition] = []
        self.init_transitions: list[Transition] = []
        self._norm_seen = 0
        self._added = 0
        self.model_fitted_once = False
        self.diagnostics: dict[str, int] = {"cyber_uniform_fallbacks": 0, "cyber_skipped_unfitted": 0}

    @property
    def n(self) -> int:
        return self.budget.used

    @property
    def done(self) -> bool:
        return self.budget.exhausted

    # initialization -------------------------------------------------------
    def initialize(self, transitions: list[Transition] | None = None) -> "Tpe":
        """Seed the real buffer with uniform-random-action data and fit the model once.

        ``transitions`` supplies data collected elsewhere (already counted
        against the budget) instead of sampling here.
        """
        cfg = self.config
        if transitions is None:
            if cfg.init_samples > self.budget.remaining:
                raise ValueError("init_samples exceeds the sample budget")
            transitions = self._random_rollout(cfg.init_samples)
        self.init_transitions = list(transitions)
        self._store_real(transitions)
        if transitions:
            self.last_avg_reward = float(np.mean([t.reward for t in transitions]))
            self.refit_model()
        return self

    def _random_rollout(self, count: int) -> list[Transition]:
        spec = self.env.spec
        out = []
        for _ in range(count):
            if self.env.done:
                self.env.reset_random()
            s = self.env.state.copy()
            a = self.rng.uniform_array(spec.action_low, spec.action_high)
            res = self.env.step(a)
            out.append(Transition(s, a, res.reward, res.next_state, res.done and not res.truncated))
        self.budget.used += count
        self.n_own += count
        # the next TPE episode starts through the quality-based reset
        self.env.done = True
        return out

    def _store_real(self, transitions) -> None:
        self.real_buffer.extend(transitions)
        self._added += len(transitions)

    def ingest_shared(self, transitions: list[Transition]) -> None:
        """Append real transitions collected by another TPE (no budget charge)."""
        self._store_real(transitions)

    # the step -------------------------------------------------------------
    def step(self, action: TpeAction, real_quota: int | None = None,
             behaviour: Behaviour | None = None) -> TpeStepReport:
        if self.done:
            raise RuntimeError("TPE sample budget is exhausted")
        cfg = self.config
        k_c = compute_kc(cfg.k_real, action.a2)
        t_c = compute_tc(cfg.t_real, action.a2)

        train = {"real_steps": 0, "cyber_steps": 0}
        if len(self.real_buffer) >= max(self.controller.params.batch_size, self.controller.params.warmup_size):
            train = self.controller.train_mixed(self.real_buffer, self.cyber_buffer, cfg.t_real, t_c, self.rng)

        quota = cfg.k_real if real_quota is None else real_quota
        quota = min(quota, self.budget.remaining)
        real, sources = self._collect_real(quota, action.a0, behaviour)
        self.last_real = real
        self._store_real(real)

        cyber_count = self._collect_cyber(k_c, action.a1)

        self.t += 1
        if self.t % cfg.model_refit_interval == 0:
            self.refit_model()

        if real:
            new_avg = float(np.mean([t.reward for t in real]))
        else:
            new_avg = self.last_avg_reward
        reward = sign_reward(new_avg, self.last_avg_reward)
        self.last_avg_reward = new_avg
        return TpeStepReport(
            observation=self.observation(),
            reward=reward,
            raw_avg_reward=new_avg,
            real_samples_used_total=self.n,
            cyber_samples_this_step=cyber_count,
            done=self.done,
            real_samples_this_step=len(real),
            cyber_batches=train.get("cyber_steps", 0),
            training=train,
            sources=sources,
        )

    def _collect_real(self, count: int, a0: float, behaviour: Behaviour | None):
        cfg, env = self.config, self.env
        choose = behaviour or (lambda: (self.controller, None))
        out, sources = [], []
        acting, tag = None, None
        for _ in range(count):
            if env.done or env.state is None:
                acting, tag = choose()
                sampling_reset_real(env, a0, acting, self.rng, cfg.m1, cfg.m2)
            elif acting is None:
                acting, tag = choose()
            s = env.state.copy()
            a = acting.act(s, explore=True, rng=self.rng)
            res = env.step(a)
            out.append(Transition(s, a, res.reward, res.next_state, res.done and not res.truncated))
            sources.append(tag)
        self.budget.used += len(out)
        self.n_own += len(out)
        return out, sources

    def _collect_cyber(self, count: int, a1: float) -> int:
        if count == 0:
            return 0
        if not self.model.fitted:
            self.diagnostics["cyber_skipped_unfitted"] += 1
            return 0
        cenv = self.cyber_env
        for _ in range(count):
            if cenv.done or cenv.state is None:
                _, from_buffer = sampling_reset_cyber(cenv, a1, self.real_buffer, self.rng)
                if a1 > 0 and not from_buffer and len(self.real_buffer) == 0:
                    self.diagnostics["cyber_uniform_fallbacks"] += 1
            s = cenv.state.copy()
            a = self.controller.act(s, explore=True, rng=self.rng)
            res = cenv.step(a)
            self.cyber_buffer.add(Transition(s, a, res.reward, res.next_state, False))
        return count

    def refit_model(self) -> None:
        """Stream unseen real rows into the normalizers, then train on the buffer."""
        cfg = self.config
        new = min(self._added - self._norm_seen, len(self.real_buffer))
        if new <= 0 and not self.model_fitted_once:
            return
        states, actions, _, next_states, _ = self.real_buffer.contents()
        if new > 0:
            self.model.update_normalizers(states[-new:], actions[-new:], next_states[-new:])
            self._norm_seen = self._added
        if not self.model.fitted:
            return
        self.model.fit(states, actions, next_states, cfg.model_epochs, cfg.model_batch_size, cfg.model_lr,
                       update_normalizers=False, epoch_samples=cfg.model_epoch_samples)
        self.model_fitted_once = True

    def observation(self) -> float:
        mode = self.config.obs_mode
        if mode is ObsMode.LAST_REWARD:
            return float(self.last_avg_reward)
        if mode is ObsMode.SAMPLE_RATIO:
            return float(self.n) / float(self.budget.limit)
        return 0.0
