import csv
import json
import math

import numpy as np
import pytest

from intelligent_trainer import cli
from intelligent_trainer.controller import DdpgController, DdpgParams
from intelligent_trainer.envs import Pendulum, pendulum_step
from intelligent_trainer.harness import (
    ConfigError,
    EvalRecord,
    Experiment,
    ExperimentConfig,
    evaluate,
    make_trainer,
    parse_config,
    run_experiment,
    samples_to_target,
)
from intelligent_trainer.numerics import RngStream

TINY = dict(budget_n=400, k_real=30, t_real=2, init_samples=100, eval_interval=5, eval_episodes=1,
            controller_hidden="8", model_hidden="8", model_epochs=1, batch_size=16, warmup_size=16)


def tiny(**kw):
    return ExperimentConfig(**{**TINY, **kw})


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def zero_policy():
    env = Pendulum(RngStream(0))
    ctrl = DdpgController(env.spec, env.observe, DdpgParams(hidden=(4,)), RngStream(1))
    ctrl.actor.params[...] = 0.0
    return env, ctrl


def test_evaluate_deterministic_reset_has_zero_std():
    env, ctrl = zero_policy()
    _, std = evaluate(ctrl, env, 3, RngStream(0), reset_state=[0.3, 0.1])
    assert std == 0.0


def test_evaluate_matches_analytic_hanging_rollout():
    env, ctrl = zero_policy()
    mean, _ = evaluate(ctrl, env, 1, RngStream(0), reset_state=[math.pi, 0.0])
    s, total = np.array([math.pi, 0.0]), 0.0
    for _ in range(200):
        s, r, _ = pendulum_step(s, 0.0)
        total += r
    assert mean == total
    assert total == pytest.approx(-200 * math.pi ** 2, rel=1e-3)


def test_evaluate_uses_no_training_budget():
    exp = Experiment(tiny(trainer="nocyber"))
    exp._evaluate(0)
    assert exp.budget.used == 0 and exp.tpe.env.sample_count == 0


def test_samples_to_target():
    recs = [EvalRecord(0, 100, -900.0, 0.0), EvalRecord(5, 250, -400.0, 0.0), EvalRecord(9, 400, -100.0, 0.0)]
    assert samples_to_target(recs, -500.0) == 250
    assert samples_to_target(recs, 0.0) is None


def test_defaults_resolve():
    cfg = parse_config(None)
    assert cfg.task == "pendulum" and cfg.budget_n == 50_200 and cfg.k_real == 50
    ens = ExperimentConfig(trainer="ensemble").resolved()
    assert ens.k_real == 51 and ens.budget_n == 50_200 and ens.tpe_obs == "v2"
    car = ExperimentConfig(task="mountaincar").resolved()
    assert car.budget_n == 30_200 and car.transfer_threshold == 100


def test_parse_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\ntrainer = dqn5\nseed = 7  # trailing\nbudget_n = 1_000\n")
    cfg = parse_config(path, {"seed": "9"})
    assert cfg.trainer == "dqn5" and cfg.seed == 9 and cfg.budget_n == 1000
    assert len(make_trainer(cfg, RngStream(0)).table) == 125


def test_empty_file_gives_valid_pendulum_config(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("")
    assert parse_config(path).task == "pendulum"


@pytest.mark.parametrize("text,needle", [("bogus = 1\n", "2: unknown key"), ("seed = x\n", "2: bad value"),
                                         ("just words\n", "2: expected")])
def test_parse_errors_name_the_line(tmp_path, text, needle):
    path = tmp_path / "bad.cfg"
    path.write_text("task = pendulum\n" + text)
    with pytest.raises(ConfigError, match=needle):
        parse_config(path)


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        parse_config(None, {"trainer": "fixed", "a2": "0"})
    with pytest.raises(ConfigError):
        parse_config(None, {"trainer": "ensemble", "k_real": "50"})
    with pytest.raises(ConfigError):
        parse_config(None, {"task": "cartpole"})
    with pytest.raises(ConfigError):
        parse_config(None, {"eval_interval": "0"})


@pytest.mark.parametrize("trainer", ["nocyber", "fixed"])
def test_constant_trainers_log_constant_actions(tmp_path, trainer):
    run_experiment(tiny(trainer=trainer), tmp_path)
    rows = read_csv(tmp_path / "actions.csv")
    expected = (0.0, 0.0, 1.0) if trainer == "nocyber" else (0.6, 0.6, 0.6)
    assert rows and all((float(r["a0"]), float(r["a1"]), float(r["a2"])) == expected for r in rows)


@pytest.mark.parametrize("trainer", ["dqn", "dqn5", "dqn-mem2000", "reinforce", "random", "ensemble"])
def test_every_trainer_runs_to_budget(tmp_path, trainer):
    cfg = tiny(trainer=trainer)
    res = run_experiment(cfg, tmp_path)
    assert res.real_samples_used == 400 == res.train_env_steps
    curve = read_csv(tmp_path / "learning_curve.csv")
    assert int(curve[0]["real_samples"]) == 100 and int(curve[-1]["real_samples"]) == 400
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["final"]["real_samples_used"] == 400


def test_same_seed_same_files(tmp_path):
    for d in ("a", "b"):
        run_experiment(tiny(trainer="dqn", seed=3), tmp_path / d)
    for name in ("learning_curve.csv", "actions.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_stop_at_target(tmp_path):
    res = run_experiment(tiny(trainer="nocyber", target_return=-1e9, stop_at_target=True), tmp_path)
    assert res.tpe_steps == 5


def test_cli_run_and_plot(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("\n".join(f"{k} = {v}" for k, v in TINY.items()) + "\n")
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--trainer", "nocyber", "--out", str(out), "--seed", "1"]) == 0
    assert (out / "learning_curve.csv").exists()
    assert cli.main(["plot", "--in", str(out)]) == 0
    assert (out / "learning_curve.svg").exists()


def test_cli_sweep(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("\n".join(f"{k} = {v}" for k, v in TINY.items()) + "\n")
    code = cli.main(["sweep", "--config", str(cfg), "--trainer", "nocyber", "--seeds", "0..1",
                     "--out", str(tmp_path / "sw")])
    assert code == 0 and (tmp_path / "sw" / "seed_1" / "actions.csv").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["run", "--set", "nonsense=1"]) == 2
    assert "config error" in capsys.readouterr().err
