"""Three-head ensemble trainer.

Slot 0 is driven by a DQN trainer, slot 1 by the random trainer and slot 2 uses
real data only. Each ensemble step every slot runs one TPE step on a third of
the real-sample quota. Slots share their new real data, and in some steps they
sample with the best slot's controller. Slots are ranked by mean sampling
reward. Every so often the leader's controller weights are copied into slot 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field


from .controller import DdpgController
from .envs import Transition
from .numerics import RngStream
from .tpe import SampleBudget, Tpe, TpeAction, TpeStepReport
from .trainers import DqnTrainer, Trainer

PHI_MAX = 0.7
PHI_MIN = 0.5
DQN_SLOT, RANDOM_SLOT, NOCYBER_SLOT = 0, 1, 2


def reference_probability(t: int, phi: float, phi_min: float = PHI_MIN, phi_max: float = PHI_MAX) -> float:
    """Chance of sampling with the best controller at trainer step ``t``.

    Every third step (``t % 3 == 0``) is an evaluation step and returns 0.
    """
    if t % 3 == 0:
        return 0.0
    return float(min(max((phi - phi_min) / (phi_max - phi_min), 0.0), 1.0))


def order_rewards(raw) -> tuple[int, ...]:
    """Ascending-sort position of each raw reward; tied values share the lowest position."""
    raw = [float(r) for r in raw]
    return tuple(sum(1 for other in raw if other < r) for r in raw)


def skewness(R, phi_min: float = PHI_MIN) -> float:
    """How far the best accumulated reward leads: (best - median) / (best - worst)."""
    best, median, worst = sorted((float(r) for r in R), reverse=True)
    if best == worst:
        return phi_min
    return (best - median) / (best - worst)


@dataclass
class Analysis:
    t: int
    accumulated: tuple[float, ...]
    best_index: int
    phi: float
    transfer: bool


@dataclass
class EnsembleBook:
    """Rank history, accumulated rewards, skewness and the reference probability.

    ``t`` counts trainer steps and ``n_c`` steps since the last analysis. On
    steps sampled with a non-zero reference probability the ranks are taken
    from the most recent evaluation step's raw rewards, so reference-sampled
    data never decides an ordering.
    """

    C: int = 3
    phi_min: float = PHI_MIN
    phi_max: float = PHI_MAX
    best_index: int = NOCYBER_SLOT
    t: int = 0
    n_c: int = 0
    phi: float = PHI_MIN
    history: list = field(default_factory=list)
    last_eval_raw: tuple | None = None
    events: list = field(default_factory=list)

    @property
    def p_ref(self) -> float:
        return reference_probability(self.t, self.phi, self.phi_min, self.phi_max)

    def record(self, raw, evaluation: bool) -> tuple[int, ...]:
        raw = tuple(float(r) for r in raw)
        if evaluation or self.last_eval_raw is None:
            self.last_eval_raw = raw
        ranks = order_rewards(self.last_eval_raw)
        self.history.append(ranks)
        self.t += 1
        self.n_c += 1
        return ranks

    def accumulate(self) -> tuple[float, ...]:
        """Sum of each slot's ranks over the last ``n_c`` steps."""
        if self.n_c < 1:
            raise ValueError("no steps since the last analysis")
        window = self.history[-self.n_c:]
        return tuple(float(sum(r[i] for r in window)) for i in range(len(window[0])))

    def analyse(self) -> Analysis | None:
        """Skewness analysis; returns ``None`` while ``n_c <= C``."""
        if self.n_c <= self.C:
            return None
        R = self.accumulate()
        top = max(R)
        if R[self.best_index] != top:
            self.best_index = R.index(top)
        self.phi = skewness(R, self.phi_min)
        out = Analysis(self.t, R, self.best_index, self.phi, self.best_index != DQN_SLOT)
        self.events.append(out)
        self.n_c = 0
        return out


@dataclass
class TrainerSlot:
    trainer: Trainer
    tpe: Tpe
    obs: float = 0.0
    shared_mark: int = 0
    last_index: int | None = None
    last_action: TpeAction | None = None
    raw_reward: float = 0.0
    rank_reward: int = 0

    @property
    def controller(self) -> DdpgController:
        return self.tpe.controller


class EnsembleTrainer:
    """Runs three slots in lockstep over a shared real-sample budget."""

    def __init__(self, slots: list[TrainerSlot], dqn: DqnTrainer, budget: SampleBudget, k_real: int,
                 rng: RngStream, book: EnsembleBook | None = None):
        if len(slots) != 3:
            raise ValueError("the ensemble has exactly three slots")
        if k_real % 3:
            raise ValueError(f"k_real={k_real} must be divisible by 3")
        self.slots = slots
        self.dqn = dqn
        self.budget = budget
        self.quota = k_real // 3
        self.rng = rng
        self.book = book or EnsembleBook()
        self.shared_log: list[tuple[int, Transition]] = []
        self.transfers: list[int] = []
        self.last_reports: list[TpeStepReport | None] = []

    @property
    def done(self) -> bool:
        return self.budget.exhausted

    @property
    def best_controller(self) -> DdpgController:
        return self.slots[self.book.best_index].controller

    def initialize(self) -> None:
        """Slot 0 draws the initial random-action data once; every slot starts from it."""
        first = self.slots[0].tpe.initialize()
        for slot in self.slots[1:]:
            slot.tpe.initialize(list(first.init_transitions))
        for slot in self.slots:
            slot.obs = slot.tpe.observation()

    def _behaviour(self, i: int, p_ref: float, best: int):
        slot, ref = self.slots[i], self.slots[best]

        def choose():
            if best != i and p_ref > 0.0 and self.rng.uniform() < p_ref:
                return ref.controller, best
            return slot.controller, i

        return choose

    def step(self) -> list[TpeStepReport | None]:
        if self.done:
            raise RuntimeError("ensemble sample budget is exhausted")
        p_ref = self.book.p_ref
        evaluation = p_ref == 0.0
        best = self.book.best_index
        reports: list[TpeStepReport | None] = []
        obs_before = [s.obs for s in self.slots]
        for i, slot in enumerate(self.slots):
            if self.budget.exhausted:
                reports.append(None)
                continue
            index, action = slot.trainer.act(slot.obs)
            slot.last_index, slot.last_action = index, action
            fresh = [t for owner, t in self.shared_log[slot.shared_mark:] if owner != i]
            slot.tpe.ingest_shared(fresh)
            report = slot.tpe.step(action, real_quota=self.quota, behaviour=self._behaviour(i, p_ref, best))
            self.shared_log.extend((i, t) for t in slot.tpe.last_real)
            slot.shared_mark = len(self.shared_log)
            slot.obs = report.observation
            slot.raw_reward = report.raw_avg_reward
            reports.append(report)
        self.last_reports = reports

        if all(r is not None for r in reports):
            ranks = self.book.record([s.raw_reward for s in self.slots], evaluation)
            for slot, rank in zip(self.slots, ranks):
                slot.rank_reward = rank
            if evaluation:
                table = self.dqn.table
                for j, slot in enumerate(self.slots):
                    idx = slot.last_index if slot.trainer is self.dqn or slot.trainer.table is table else None
                    if idx is None:
                        idx = table.nearest(slot.last_action)
                    self.dqn.store(obs_before[j], idx, ranks[j], slot.obs)
                self.dqn.update()
            analysis = self.book.analyse()
            if analysis is not None and analysis.transfer:
                self.slots[DQN_SLOT].controller.copy_weights_from(self.slots[analysis.best_index].controller)
                self.transfers.append(analysis.t)
        for slot in self.slots:
            slot.trainer.tick()
        return reports
