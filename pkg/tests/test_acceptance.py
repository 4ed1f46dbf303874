"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``. Criterion 8 runs full Pendulum
experiments and takes several minutes on one core.
"""

import sys
import time
from fractions import Fraction

import numpy as np
import pytest

import ensemble_trace as et
from conftest import ScriptedRng
from intelligent_trainer.cyber import DynamicsModel
from intelligent_trainer.ensemble import EnsembleBook, order_rewards, reference_probability, skewness
from intelligent_trainer.envs import EnvSpec
from intelligent_trainer.harness import Experiment, ExperimentConfig, run_experiment, samples_to_target_table
from intelligent_trainer.numerics import Mlp, RngStream
from intelligent_trainer.tpe import TpeAction, compute_kc, compute_tc, quality, sign_reward
from intelligent_trainer.trainers import TWO_VALUES, ActionTable, CappedReplay, DqnTrainer

RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def report(request):
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def _report(n: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        RESULTS[n] = (ok, detail)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)
        assert ok, line

    return _report


class _Critic:
    def __init__(self, q):
        self.q = q

    def act(self, state, explore=False, rng=None):
        return np.zeros(1)

    def q_value(self, state, action):
        return self.q


# 1 -------------------------------------------------------------------------
def test_criterion_1_formula_suite(report):
    start = time.time()
    failures = []

    def check(name, got, want, exact):
        ok = got == want if exact else abs(got - want) < 1e-12
        if not ok:
            failures.append(f"{name}: got {got!r}, want {want!r}")

    # quality blend of critic value and a uniform draw
    check("quality a0=1", quality([0.0], 1.0, _Critic(2.5), RngStream(0)), 2.5, False)
    check("quality a0=0.5", quality([0.0], 0.5, _Critic(2.0), ScriptedRng([0.4])), 1.2, False)
    check("quality a0=0", quality([0.0], 0.0, _Critic(7.0), ScriptedRng([0.3])), 0.3, False)
    # cyber sample and cyber batch counts
    for k, a2, want in [(10, 0.5, 10), (10, 1.0, 0), (10, 0.2, 40), (50, 0.6, 33), (50, 0.8, 12), (1, 0.2, 4)]:
        check(f"K_c({k},{a2})", compute_kc(k, a2), want, True)
    for t, a2, want in [(4, 0.5, 4), (4, 1.0, 0), (4, 0.2, 16), (50, 0.4, 75)]:
        check(f"T_c({t},{a2})", compute_tc(t, a2), want, True)
    for k in range(0, 200, 7):
        for a2 in (0.2, 0.4, 0.6, 0.8, 1.0):
            check(f"K_c({k},{a2}) rational", compute_kc(k, a2), round(k * (1 - Fraction(str(a2))) / Fraction(str(a2))),
                  True)
    # TPE reward sign
    for new, old, want in [(5, 3, 1), (3, 3, 0), (2, 4, -1)]:
        check(f"sign({new},{old})", sign_reward(new, old), want, True)
    # reference probability
    for t, phi, want in [(6, 0.7, 0.0), (6, 1.0, 0.0), (7, 0.7, 1.0), (7, 0.6, 0.5), (7, 0.4, 0.0), (8, 0.9, 1.0)]:
        check(f"p_ref({t},{phi})", reference_probability(t, phi), want, False)
    # skewness ratio
    for R, want in [((10, 4, 2), 0.75), ((5, 5, 5), 0.5), ((6, 0, 0), 1.0)]:
        check(f"phi{R}", skewness(R), want, False)
    elapsed = time.time() - start
    report(1, not failures and elapsed < 1.0,
           f"formula suite, {len(failures)} mismatches, {elapsed:.2f} s" + (f": {failures}" if failures else ""))


# 2 -------------------------------------------------------------------------
def test_criterion_2_gradient_oracle(report):
    start = time.time()
    rng = RngStream(2024)
    worst = 0.0
    h = 1e-6
    for _ in range(100):
        depth = 1 + int(rng.integers(3))
        sizes = [1 + int(rng.integers(5))] + [1 + int(rng.integers(8)) for _ in range(depth)]
        hidden = ("tanh", "relu")[int(rng.integers(2))]
        out = ("identity", "tanh")[int(rng.integers(2))]
        net = Mlp(sizes, rng, hidden, out)
        x = rng.normal((1 + int(rng.integers(4)), sizes[0]))
        g = rng.normal((x.shape[0], sizes[-1]))
        grads, dx = net.backprop(x, g)
        p0 = net.get_params()
        fd = np.zeros_like(p0)
        for i in range(p0.size):
            for sign in (1, -1):
                net.params[i] = p0[i] + sign * h
                fd[i] += sign * float(np.sum(net.forward(x) * g)) / (2 * h)
            net.params[i] = p0[i]
        fdx = np.zeros_like(x)
        for i in range(x.size):
            for sign in (1, -1):
                xp = x.copy()
                xp.flat[i] += sign * h
                fdx.flat[i] += sign * float(np.sum(net.forward(xp) * g)) / (2 * h)
        for a, b in ((grads, fd), (dx.ravel(), fdx.ravel())):
            denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
            worst = max(worst, float(np.linalg.norm(a - b) / denom))
    elapsed = time.time() - start
    report(2, worst < 1e-4 and elapsed < 10.0, f"max relative error {worst:.2e} over 100 nets, {elapsed:.1f} s")


# 3 -------------------------------------------------------------------------
SMALL_RUN = dict(controller_hidden="16", model_hidden="16", model_epochs=1, batch_size=16, warmup_size=16,
                 eval_episodes=1, t_real=1)


def test_criterion_3_budget_conservation(report):
    start = time.time()
    problems = []
    # uni-head: 200 TPE steps with random actions, budget cut part-way through the last step
    cfg = ExperimentConfig(trainer="random", k_real=10, init_samples=50, budget_n=50 + 199 * 10 + 3,
                           **SMALL_RUN).resolved()
    exp = Experiment(cfg)
    tpe = exp.tpe
    tpe.initialize()
    rng = RngStream(33)
    quota_sum, steps = 0, 0
    while not tpe.done:
        a = TpeAction(rng.uniform(), rng.uniform(), 0.2 + 0.8 * rng.uniform())
        rep = tpe.step(a)
        quota_sum += rep.real_samples_this_step
        steps += 1
        if tpe.env.sample_count != cfg.init_samples + quota_sum or tpe.env.sample_count > cfg.budget_n:
            problems.append(f"step {steps}: counter {tpe.env.sample_count}")
    if steps != 200 or tpe.env.sample_count != cfg.budget_n:
        problems.append(f"uni-head ended after {steps} steps at {tpe.env.sample_count}")
    # ensemble: K_r per ensemble step, every slot's buffer grows by K_r
    cfg = ExperimentConfig(trainer="ensemble", k_real=12, init_samples=60, budget_n=60 + 40 * 12,
                           **SMALL_RUN).resolved()
    exp = Experiment(cfg)
    ens = exp.ensemble
    ens.initialize()
    sizes = [len(s.tpe.real_buffer) for s in ens.slots]
    k = 0
    while not ens.done:
        reps = ens.step()
        k += 1
        drawn = sum(r.real_samples_this_step for r in reps if r is not None)
        counter = sum(s.tpe.env.sample_count for s in ens.slots)
        now = [len(s.tpe.real_buffer) for s in ens.slots]
        growth = [b - a for a, b in zip(sizes, now)]
        sizes = now
        if drawn != cfg.k_real or counter != ens.budget.used or counter > cfg.budget_n:
            problems.append(f"ensemble step {k}: drew {drawn}, counter {counter}")
        if k > 1 and growth != [cfg.k_real] * 3:
            problems.append(f"ensemble step {k}: buffer growth {growth}")
    elapsed = time.time() - start
    report(3, not problems and elapsed < 60.0,
           f"200 uni-head steps and {k} ensemble steps conserve the budget, {elapsed:.1f} s"
           + (f": {problems[:3]}" if problems else ""))


# 4 -------------------------------------------------------------------------
def test_criterion_4_capped_replay(report):
    start = time.time()
    mem = CappedReplay(32, 8)
    rng = RngStream(4)
    worst_total, worst_bucket = 0, 0
    for _ in range(10_000):
        mem.store((rng.uniform(), int(rng.integers(8)), rng.uniform(), rng.uniform()), rng)
        worst_total = max(worst_total, len(mem))
        worst_bucket = max(worst_bucket, max(len(b) for b in mem.stores))
    elapsed = time.time() - start
    ok = mem.per_action_cap == 4 and worst_total <= 32 and worst_bucket <= 4 and elapsed < 1.0
    report(4, ok, f"cap {mem.per_action_cap}, max total {worst_total}, max per action {worst_bucket}, "
                  f"{elapsed:.2f} s")


# 5 -------------------------------------------------------------------------
def _bandit_hits(seed, steps=300):
    table = ActionTable(TWO_VALUES)
    trainer = DqnTrainer(table, RngStream(seed), t_max=steps)
    rewarded = int(RngStream(seed + 10_000).integers(len(table)))
    hits = 0
    for t in range(steps):
        index, _ = trainer.act(0.0)
        trainer.observe(0.0, index, 1.0 if index == rewarded else 0.0, 0.0)
        trainer.tick()
        if t >= steps - 100:
            hits += trainer.greedy(0.0) == rewarded
    return hits


def test_criterion_5_dqn_bandit(report):
    start = time.time()
    hits = [_bandit_hits(seed) for seed in range(20)]
    good = sum(h >= 90 for h in hits)
    elapsed = time.time() - start
    report(5, good >= 18 and elapsed < 60.0, f"{good}/20 seeds greedy on the rewarded action >= 90% "
                                             f"(hits {hits}), {elapsed:.1f} s")


# 6 -------------------------------------------------------------------------
def test_criterion_6_ensemble_trace(report):
    start = time.time()
    ens = et.build()
    trace = et.run(ens)
    got = dict(
        p_ref=[p for p, _, _, _ in trace],
        ranks=[r for _, r, _, _ in trace],
        best=[b for _, _, b, _ in trace],
        analyses=[(a.t, a.accumulated, a.best_index, a.phi) for a in ens.book.events],
        transfers=ens.transfers,
        dqn_stores=len(ens.dqn.stores),
    )
    want = dict(p_ref=et.EXPECTED_P_REF, ranks=et.EXPECTED_RANKS, best=et.EXPECTED_BEST,
                analyses=et.EXPECTED_ANALYSES, transfers=et.EXPECTED_TRANSFERS, dqn_stores=et.EXPECTED_DQN_STORES)
    wrong = [k for k in want if got[k] != want[k]]
    copied = all(np.array_equal(a.params, b.params) for a, b in
                 ((ens.slots[0].controller.actor, ens.slots[1].controller.actor),
                  (ens.slots[0].controller.critic, ens.slots[1].controller.critic)))
    elapsed = time.time() - start
    report(6, not wrong and copied and elapsed < 1.0,
           f"9-step trace, transfers at t={ens.transfers}, mismatched fields {wrong}, {elapsed:.2f} s")


# 7 -------------------------------------------------------------------------
def test_criterion_7_dynamics_model(report):
    start = time.time()
    spec = EnvSpec("linear", 2, 2, 2, (-1.0, -1.0), (1.0, 1.0), (-5.0, -5.0), (5.0, 5.0), 50)
    rng = RngStream(7)

    def data(n):
        s = rng.uniform_array(np.full((n, 2), -1.0), np.full((n, 2), 1.0))
        a = rng.uniform_array(np.full((n, 2), -1.0), np.full((n, 2), 1.0))
        return s, a, 0.9 * s + 0.1 * a

    model = DynamicsModel(spec, RngStream(8))
    model.fit(*data(1000), epochs=200)
    hs, ha, hn = data(1000)
    mse = float(np.mean((model.predict_next(hs, ha) - hn) ** 2))
    elapsed = time.time() - start
    report(7, mse < 1e-3 and elapsed < 30.0, f"held-out one-step MSE {mse:.2e}, {elapsed:.1f} s")


# 8 -------------------------------------------------------------------------
TARGET, BUDGET, SEEDS = -500.0, 50_000, range(5)
UNI_HEADS = ("nocyber", "random", "dqn")


@pytest.mark.slow
def test_criterion_8_pendulum_reproduction(report):
    start = time.time()
    table = samples_to_target_table(SEEDS, UNI_HEADS + ("ensemble",), TARGET, BUDGET)
    charged = {k: [BUDGET if s is None else s for s in v] for k, v in table.items()}
    means = {k: float(np.mean(v)) for k, v in charged.items()}
    nocyber_hits = sum(s is not None for s in table["nocyber"])
    worst = max(UNI_HEADS, key=lambda k: means[k])
    ok = nocyber_hits >= 3 and means["ensemble"] <= means[worst]
    detail = ", ".join(f"{k} {table[k]} (mean {means[k]:.0f})" for k in table)
    report(8, ok, f"nocyber reached {TARGET} in {nocyber_hits}/5 seeds; ensemble mean {means['ensemble']:.0f} "
                  f"vs worst uni-head {worst} {means[worst]:.0f}; {detail}; {time.time() - start:.0f} s")


# 9 -------------------------------------------------------------------------
def test_criterion_9_determinism(report, tmp_path):
    start = time.time()
    same = []
    for trainer in ("dqn", "ensemble"):
        cfg = ExperimentConfig(trainer=trainer, seed=11, k_real=30, init_samples=100, budget_n=700,
                               eval_interval=5, **SMALL_RUN)
        for d in ("a", "b"):
            run_experiment(cfg, tmp_path / trainer / d)
        for name in ("learning_curve.csv", "actions.csv"):
            same.append((tmp_path / trainer / "a" / name).read_bytes() == (tmp_path / trainer / "b" / name).read_bytes())
    elapsed = time.time() - start
    report(9, all(same) and elapsed < 60.0, f"{sum(same)}/{len(same)} CSV pairs bitwise identical, {elapsed:.1f} s")


# 10 ------------------------------------------------------------------------
def test_criterion_10_order_invariance(report):
    start = time.time()
    rng = RngStream(10)
    bad = 0
    for _ in range(1000):
        raw = rng.uniform_array(np.full(3, -10.0), np.full(3, 10.0))
        c = float(10 ** rng.uniform_array(-3.0, 3.0))
        bad += order_rewards(raw) != order_rewards(c * raw)
    # whole book: same ranks, accumulated rewards, best slot and transfer decisions
    books = (EnsembleBook(C=3), EnsembleBook(C=3))
    c = 37.5
    for _ in range(300):
        raw = rng.uniform_array(np.full(3, -10.0), np.full(3, 10.0))
        evaluation = books[0].p_ref == 0.0
        r1, r2 = books[0].record(raw, evaluation), books[1].record(c * raw, evaluation)
        a1, a2 = books[0].analyse(), books[1].analyse()
        bad += r1 != r2
        if (a1 is None) != (a2 is None) or (a1 and (a1.best_index, a1.transfer, a1.accumulated)
                                            != (a2.best_index, a2.transfer, a2.accumulated)):
            bad += 1
    elapsed = time.time() - start
    report(10, bad == 0 and elapsed < 1.0, f"{bad} decisions changed by positive scaling, {elapsed:.2f} s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
