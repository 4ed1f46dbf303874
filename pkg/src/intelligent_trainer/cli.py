"""Command line: ``run``, ``sweep`` and ``plot``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure during a run.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .harness import ConfigError, ExperimentConfig, parse_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("intelligent_trainer")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--task", choices=["pendulum", "mountaincar"])
    p.add_argument("--trainer")
    p.add_argument("--budget", type=int, dest="budget_n", help="real-sample budget N")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def _overrides(args) -> dict:
    over = {"task": args.task, "trainer": args.trainer, "budget_n": args.budget_n,
            "output_dir": args.output_dir}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        over[key.strip()] = val.strip()
    return over


def _seed_range(text: str) -> list[int]:
    if ".." in text:
        a, b = text.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(s) for s in text.split(",") if s]


def _run_one(config: ExperimentConfig, out_dir: str) -> tuple[int, int]:
    result = run_experiment(config, out_dir)
    return result.real_samples_used, result.tpe_steps


def cmd_run(args) -> int:
    config = parse_config(args.config, _overrides(args))
    log.info("running %s/%s seed=%d budget=%d -> %s", config.task, config.trainer, config.seed,
             config.budget_n, config.output_dir)
    used, steps = _run_one(config, config.output_dir)
    log.info("done: %d TPE steps, %d real samples", steps, used)
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = parse_config(args.config, _overrides(args))
    seeds = _seed_range(args.seeds)
    jobs = []
    for s in seeds:
        cfg = dataclasses.replace(base, seed=s)
        jobs.append((cfg, str(Path(base.output_dir) / f"seed_{s}")))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(c, o) for c, o in jobs]
    for s, (used, steps) in zip(seeds, results):
        log.info("seed %d: %d TPE steps, %d real samples", s, steps, used)
    return EXIT_OK


def _read_curve(path: Path) -> tuple[list[int], list[float], list[float]]:
    xs, ys, sd = [], [], []
    with open(path) as f:
        for row in csv.DictReader(f):
            xs.append(int(row["real_samples"]))
            ys.append(float(row["mean_return"]))
            sd.append(float(row["return_std"]))
    return xs, ys, sd


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    root = Path(args.indir)
    curves = sorted(root.glob("**/learning_curve.csv"))
    if not curves:
        raise ConfigError(f"no learning_curve.csv under {root}")
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in curves:
        xs, ys, sd = _read_curve(path)
        label = str(path.parent.relative_to(root)) if path.parent != root else root.name
        ax.plot(xs, ys, label=label)
        ax.fill_between(xs, [y - s for y, s in zip(ys, sd)], [y + s for y, s in zip(ys, sd)], alpha=0.15)
    ax.set_xlabel("real samples")
    ax.set_ylabel("evaluation return")
    if len(curves) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    out = Path(args.output) if args.output else root / "learning_curve.svg"
    fig.savefig(out)
    log.info("wrote %s", out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intelligent-trainer")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    _add_run_options(run)
    run.add_argument("--seed", type=int)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run independent seeds")
    _add_run_options(sweep)
    sweep.add_argument("--seeds", required=True, help="range a..b or comma list")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.set_defaults(func=cmd_sweep)

    plot = sub.add_parser("plot", help="plot learning curves found under a directory")
    plot.add_argument("--in", dest="indir", required=True)
    plot.add_argument("--output")
    plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
