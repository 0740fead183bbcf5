"""Helpers shared by the experiment scripts."""
from __future__ import annotations

import argparse
from pathlib import Path

from ppokfac.config import config_from_dict
from ppokfac.envs import default_lqr_system, lqr_optimal
from ppokfac.evaluation import lqr_average_cost, mean_action_fn
from ppokfac.cli import parse_overrides


def add_common_args(p: argparse.ArgumentParser, seeds: int = 5):
    p.add_argument("--seeds", type=int, default=seeds, help="number of seeds (0..n-1)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="extra config override applied to every run")
    p.add_argument("--out", help="write the report here as well as to stdout")


def overrides(args) -> dict:
    combos = parse_overrides(args.set)
    if len(combos) != 1:
        raise SystemExit("--set takes single values here, not sweeps")
    return combos[0]


def make_config(**fields):
    return config_from_dict(fields)


def lqr_cost_ratio(state) -> float:
    system = default_lqr_system()
    _, j_star, _ = lqr_optimal(system)
    return lqr_average_cost(mean_action_fn(state.policy, state.obs_norm), system, n_traj=64) / j_star


def emit(text: str, path: str | None):
    print(text)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text + "\n")
