"""Samples-to-target on Pendulum for the ensemble and the uni-head trainers.

Every trainer runs on the same seeds. A run that never reaches the target
is charged the full budget. Writes ``summary.json`` to the output directory.

    python scripts/pendulum_comparison.py --seeds 0..4 --out runs/pendulum_comparison
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from intelligent_trainer.harness import samples_to_target_table

TARGET = -500.0
BUDGET = 50_000
TRAINERS = ("nocyber", "random", "dqn", "ensemble")


def charged(samples, budget=BUDGET) -> list[int]:
    return [budget if s is None else s for s in samples]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", default="0..4")
    parser.add_argument("--out", default="runs/pendulum_comparison")
    args = parser.parse_args(argv)
    a, b = args.seeds.split("..")
    seeds = list(range(int(a), int(b) + 1))
    table = samples_to_target_table(seeds, TRAINERS, TARGET, BUDGET, log=print)
    means = {k: float(np.mean(charged(v))) for k, v in table.items()}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps({"seeds": seeds, "target": TARGET, "budget": BUDGET,
                                                  "samples": table, "mean_charged": means}, indent=2) + "\n")
    for k, v in means.items():
        print(f"{k:9s} mean samples to {TARGET}: {v:.0f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
