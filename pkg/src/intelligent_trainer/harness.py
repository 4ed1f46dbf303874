"""Experiment configuration, construction from a seed, the outer training loop,
isolated evaluation and CSV/manifest output."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import platform
import time
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .controller import DdpgController, DdpgParams
from .cyber import DynamicsModel
from .ensemble import EnsembleBook, EnsembleTrainer, TrainerSlot
from .envs import Environment, make_env
from .numerics import RngStream
from .tpe import ObsMode, SampleBudget, Tpe, TpeAction, TpeConfig
from .trainers import (
    FIVE_VALUES,
    TWO_VALUES,
    ActionTable,
    DqnTrainer,
    RandomTrainer,
    ReinforceTrainer,
    Trainer,
    fixed_trainer,
    nocyber_trainer,
)

TRAINER_KINDS = ("dqn", "dqn5", "dqn-mem2000", "reinforce", "random", "fixed", "nocyber", "ensemble")

# per-task defaults; the uni-head k_real also sets the budget for the ensemble
TASK_DEFAULTS = {
    "pendulum": dict(k_real=50, ensemble_k_real=51, t_real=50, init_samples=200, tpe_steps=1000,
                     eval_interval=10, model_refit_interval=1, transfer_threshold=3),
    "mountaincar": dict(k_real=1, ensemble_k_real=3, t_real=1, init_samples=200, tpe_steps=30000,
                        eval_interval=300, model_refit_interval=50, transfer_threshold=100),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str = "pendulum"
    trainer: str = "dqn"
    tpe_obs: str | None = None
    seed: int = 0
    output_dir: str = "runs/default"
    # budget and TPE; None means the task default
    budget_n: int | None = None
    tpe_steps: int | None = None
    k_real: int | None = None
    t_real: int | None = None
    init_samples: int | None = None
    m1: int = 50
    m2: int = 5
    # evaluation
    eval_interval: int | None = None
    eval_episodes: int = 5
    target_return: float | None = None
    stop_at_target: bool = False
    # dynamics model
    model_hidden: str = "64"
    model_epochs: int = 5
    model_lr: float = 1e-3
    model_batch_size: int = 64
    model_epoch_samples: int | None = 1024
    model_refit_interval: int | None = None
    # target controller
    controller_hidden: str = "64,64"
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    batch_size: int = 64
    noise_scale: float = 0.1
    warmup_size: int = 64
    buffer_capacity: int = 100_000
    # trainers
    dqn_memory: int | None = None
    dqn_gamma: float = 0.5
    dqn_lr: float = 1e-2
    dqn_hidden: int = 16
    dqn_batches: int = 4
    dqn_batch_size: int = 8
    reinforce_lr: float = 1e-2
    a0: float | None = None
    a1: float | None = None
    a2: float | None = None
    # ensemble
    transfer_threshold: int | None = None
    phi_max: float = 0.7
    phi_min: float = 0.5

    def resolved(self) -> "ExperimentConfig":
        """Copy with task defaults filled in; raises :class:`ConfigError` when invalid."""
        if self.task not in TASK_DEFAULTS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {sorted(TASK_DEFAULTS)}")
        if self.trainer not in TRAINER_KINDS:
            raise ConfigError(f"unknown trainer {self.trainer!r}; expected one of {list(TRAINER_KINDS)}")
        d = TASK_DEFAULTS[self.task]
        c = dataclasses.replace(self)
        ensemble = c.trainer == "ensemble"
        uni_k = c.k_real if c.k_real is not None and not ensemble else d["k_real"]
        if c.k_real is None:
            c.k_real = d["ensemble_k_real"] if ensemble else d["k_real"]
        for key in ("t_real", "init_samples", "tpe_steps", "eval_interval", "model_refit_interval",
                    "transfer_threshold"):
            if getattr(c, key) is None:
                setattr(c, key, d[key])
        if c.budget_n is None:
            c.budget_n = c.init_samples + c.tpe_steps * uni_k
        if c.tpe_obs is None:
            c.tpe_obs = "v2" if ensemble else "const"
        if c.dqn_memory is None:
            c.dqn_memory = 2000 if c.trainer == "dqn-mem2000" else 32
        c.validate()
        return c

    def validate(self) -> None:
        try:
            ObsMode(self.tpe_obs)
        except ValueError:
            raise ConfigError(f"unknown tpe_obs {self.tpe_obs!r}; expected const, v1 or v2") from None
        if self.budget_n <= 0:
            raise ConfigError("budget_n must be positive")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ConfigError("eval_interval and eval_episodes must be >= 1")
        if self.k_real < 1:
            raise ConfigError("k_real must be >= 1")
        if self.trainer == "ensemble" and self.k_real % 3:
            raise ConfigError(f"ensemble needs k_real divisible by 3, got {self.k_real}")
        if self.init_samples > self.budget_n:
            raise ConfigError("init_samples exceeds budget_n")
        if not self.m1 > self.m2 > 0:
            raise ConfigError("need m1 > m2 > 0")
        if self.phi_max <= self.phi_min:
            raise ConfigError("phi_max must exceed phi_min")
        if self.stop_at_target and self.target_return is None:
            raise ConfigError("stop_at_target needs target_return")
        if any(v is not None for v in (self.a0, self.a1, self.a2)):
            try:
                self.fixed_action()
            except ValueError as exc:
                raise ConfigError(f"invalid fixed action: {exc}") from None
        try:
            self.ddpg_params()
            self.tpe_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def fixed_action(self) -> TpeAction:
        base = (0.6, 0.6, 0.6)
        vals = [base[i] if v is None else v for i, v in enumerate((self.a0, self.a1, self.a2))]
        return TpeAction(*vals)

    def ddpg_params(self) -> DdpgParams:
        return DdpgParams(gamma=self.gamma, tau=self.tau, actor_lr=self.actor_lr, critic_lr=self.critic_lr,
                          batch_size=self.batch_size, noise_scale=self.noise_scale, warmup_size=self.warmup_size,
                          hidden=_sizes(self.controller_hidden))

    def tpe_config(self) -> TpeConfig:
        return TpeConfig(k_real=self.k_real, t_real=self.t_real, budget_n=self.budget_n,
                         init_samples=self.init_samples, m1=self.m1, m2=self.m2, obs_mode=ObsMode(self.tpe_obs),
                         model_epochs=self.model_epochs, model_batch_size=self.model_batch_size,
                         model_lr=self.model_lr, model_epoch_samples=self.model_epoch_samples,
                         model_refit_interval=self.model_refit_interval,
                         real_buffer_capacity=self.buffer_capacity, cyber_buffer_capacity=self.buffer_capacity)

    def trainer_steps(self) -> int:
        return max(1, math.ceil((self.budget_n - self.init_samples) / self.k_real))


def _sizes(text) -> tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


_HINTS = typing.get_type_hints(ExperimentConfig)
FIELD_NAMES = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def _convert(key: str, raw: str):
    hint = _HINTS[key]
    args = typing.get_args(hint)
    optional = type(None) in args
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    text = raw.strip()
    if optional and text.lower() in ("none", ""):
        return None
    if base is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if base is int:
        return int(text.replace("_", ""))
    if base is float:
        return float(text)
    return text


def parse_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read ``key = value`` lines (``#`` starts a comment); ``overrides`` win."""
    values: dict = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
            key, raw = (part.strip() for part in body.split("=", 1))
            if key not in FIELD_NAMES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _convert(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in FIELD_NAMES:
            raise ConfigError(f"unknown key {key!r}")
        if isinstance(val, str):
            try:
                val = _convert(key, val)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
        values[key] = val
    return ExperimentConfig(**values).resolved()


def dump_config(config: ExperimentConfig) -> str:
    lines = []
    for key in FIELD_NAMES:
        val = getattr(config, key)
        lines.append(f"{key} = {'none' if val is None else val}")
    return "\n".join(lines) + "\n"


@dataclass
class EvalRecord:
    tpe_step: int
    real_samples_used: int
    mean_return: float
    return_std: float


def evaluate(controller: DdpgController, env: Environment, episodes: int, rng: RngStream,
             reset_state=None) -> tuple[float, float]:
    """Mean and standard deviation of greedy episode returns on ``env``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = []
    for _ in range(episodes):
        s = env.reset_to(reset_state if reset_state is not None else env.sample_initial_state(rng))
        total, done = 0.0, False
        while not done:
            res = env.step(controller.act(s, explore=False))
            total += res.reward
            done = res.done
            s = res.next_state
        returns.append(total)
    return float(np.mean(returns)), float(np.std(returns))


def samples_to_target(records: list[EvalRecord], target: float) -> int | None:
    """Real samples used at the first evaluation whose mean return reaches ``target``."""
    for rec in records:
        if rec.mean_return >= target:
            return rec.real_samples_used
    return None


# construction ---------------------------------------------------------------

def _make_tpe(config: ExperimentConfig, rng: RngStream, budget: SampleBudget) -> Tpe:
    env_rng, ctrl_rng, model_rng, tpe_rng = rng.spawn(4)
    env = make_env(config.task, env_rng)
    controller = DdpgController(env.spec, env.observe, config.ddpg_params(), ctrl_rng)
    model = DynamicsModel(env.spec, model_rng, _sizes(config.model_hidden))
    return Tpe(config.tpe_config(), env, controller, model, tpe_rng, budget)


def make_trainer(config: ExperimentConfig, rng: RngStream) -> Trainer:
    kind = config.trainer
    table = ActionTable(FIVE_VALUES if kind == "dqn5" else TWO_VALUES)
    if kind in ("dqn", "dqn5", "dqn-mem2000", "ensemble"):
        return DqnTrainer(table, rng, config.trainer_steps(), memory_size=config.dqn_memory,
                          gamma=config.dqn_gamma, lr=config.dqn_lr, hidden=config.dqn_hidden,
                          n_batches=config.dqn_batches, batch_size=config.dqn_batch_size)
    if kind == "reinforce":
        return ReinforceTrainer(table, rng, lr=config.reinforce_lr, hidden=config.dqn_hidden)
    if kind == "random":
        return RandomTrainer(table, rng)
    if kind == "fixed":
        return fixed_trainer(config.fixed_action())
    if kind == "nocyber":
        return nocyber_trainer()
    raise ConfigError(f"unknown trainer {kind!r}")


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list[EvalRecord]
    actions: list[tuple]
    real_samples_used: int
    train_env_steps: int
    test_env_steps: int
    tpe_steps: int


class Experiment:
    """All components of one run, built deterministically from ``config.seed``."""

    def __init__(self, config: ExperimentConfig):
        self.config = config = config.resolved()
        root = RngStream(config.seed)
        build_rng, trainer_rng, test_rng, eval_rng, ens_rng = root.spawn(5)
        self.eval_rng = eval_rng
        self.budget = SampleBudget(config.budget_n)
        self.test_env = make_env(config.task, test_rng)
        self.trainer = make_trainer(config, trainer_rng)
        self.ensemble: EnsembleTrainer | None = None
        if config.trainer == "ensemble":
            slot_rngs = build_rng.spawn(3)
            tpes = [_make_tpe(config, r, self.budget) for r in slot_rngs]
            table = self.trainer.table
            trainers = [self.trainer, RandomTrainer(table, trainer_rng.spawn(1)[0]), nocyber_trainer()]
            book = EnsembleBook(C=config.transfer_threshold, phi_min=config.phi_min, phi_max=config.phi_max)
            self.ensemble = EnsembleTrainer([TrainerSlot(tr, tp) for tr, tp in zip(trainers, tpes)],
                                            self.trainer, self.budget, config.k_real, ens_rng, book)
            self.tpe = tpes[0]
        else:
            self.tpe = _make_tpe(config, build_rng, self.budget)

    @property
    def controller(self) -> DdpgController:
        return self.ensemble.best_controller if self.ensemble else self.tpe.controller

    @property
    def train_env_steps(self) -> int:
        if self.ensemble:
            return sum(s.tpe.env.sample_count for s in self.ensemble.slots)
        return self.tpe.env.sample_count

    def _evaluate(self, t: int) -> EvalRecord:
        mean, std = evaluate(self.controller, self.test_env, self.config.eval_episodes, self.eval_rng)
        return EvalRecord(t, self.budget.used, mean, std)

    def run(self) -> RunResult:
        cfg = self.config
        records: list[EvalRecord] = []
        actions: list[tuple] = []
        if self.ensemble:
            self.ensemble.initialize()
        else:
            self.tpe.initialize()
        obs = self.tpe.observation()
        t = 0
        records.append(self._evaluate(t))
        while not self.budget.exhausted:
            if self.ensemble:
                self.ensemble.step()
                slot0 = self.ensemble.slots[0]
                action, trainer_reward = slot0.last_action, slot0.rank_reward
            else:
                index, action = self.trainer.act(obs)
                report = self.tpe.step(action)
                self.trainer.observe(obs, index, report.reward, report.observation)
                self.trainer.tick()
                obs, trainer_reward = report.observation, report.reward
            t += 1
            actions.append((t, action.a0, action.a1, action.a2, trainer_reward))
            if t % cfg.eval_interval == 0 or self.budget.exhausted:
                records.append(self._evaluate(t))
                if cfg.stop_at_target and records[-1].mean_return >= cfg.target_return:
                    break
        return RunResult(cfg, records, actions, self.budget.used, self.train_env_steps,
                         self.test_env.sample_count, t)


def write_outputs(result: RunResult, out_dir: str | Path, started: float, finished: float) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "learning_curve.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["tpe_step", "real_samples", "mean_return", "return_std"])
        for r in result.records:
            w.writerow([r.tpe_step, r.real_samples_used, repr(r.mean_return), repr(r.return_std)])
    with open(out / "actions.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["tpe_step", "a0", "a1", "a2", "trainer_reward"])
        for row in result.actions:
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), row[4]])
    (out / "config.txt").write_text(dump_config(result.config))
    target = result.config.target_return
    manifest = {
        "config": dataclasses.asdict(result.config),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(finished)),
        "final": {
            "tpe_steps": result.tpe_steps,
            "real_samples_used": result.real_samples_used,
            "train_env_steps": result.train_env_steps,
            "test_env_steps": result.test_env_steps,
            "last_mean_return": result.records[-1].mean_return if result.records else None,
            "samples_to_target": samples_to_target(result.records, target) if target is not None else None,
        },
        "versions": {"intelligent_trainer": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> RunResult:
    """Run one experiment and write ``learning_curve.csv``, ``actions.csv`` and ``manifest.json``."""
    config = config.resolved()
    started = time.time()
    result = Experiment(config).run()
    write_outputs(result, out_dir or config.output_dir, started, time.time())
    return result


def run_to_target(config: ExperimentConfig, target: float) -> tuple[int | None, RunResult]:
    """Run until the evaluation mean return reaches ``target`` or the budget runs out.

    Returns the real samples used at the first evaluation at or above
    ``target`` (``None`` if never reached) and the run result.
    """
    config = dataclasses.replace(config, target_return=target, stop_at_target=True)
    result = Experiment(config).run()
    return samples_to_target(result.records, target), result


def samples_to_target_table(seeds, trainers, target: float, budget: int, task: str = "pendulum",
                            log=None) -> dict[str, list[int | None]]:
    """Samples-to-target for each trainer on the same seeds (``None`` = never reached)."""
    table = {}
    for trainer in trainers:
        row = []
        for seed in seeds:
            started = time.time()
            used, _ = run_to_target(ExperimentConfig(task=task, trainer=trainer, seed=seed, budget_n=budget), target)
            if log:
                log(f"{trainer} seed {seed}: {used if used is not None else 'not reached'} "
                    f"({time.time() - started:.0f} s)")
            row.append(used)
        table[trainer] = row
    return table
