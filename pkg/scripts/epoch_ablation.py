"""Final performance of the K-FAC path for different numbers of update epochs.

For each env and seed, trains with every requested ``epochs_n`` and
reports the final score: last-100 mean episode reward on pendulum, the
negated cost ratio to the Riccati optimum on LQR (higher is better for
both). Counts on how many seeds the first epoch setting is at least as
good as each of the others.

    python scripts/epoch_ablation.py --epochs 1 2 4 --envs pendulum lqr
"""
import argparse

import numpy as np

from _common import add_common_args, emit, lqr_cost_ratio, make_config, overrides
from ppokfac.trainer import train

TIMESTEPS = {"pendulum": 300_000, "lqr": 200_000, "pointmass": 200_000}


def score(env_id, result):
    if env_id == "lqr":
        return -lqr_cost_ratio(result.state)
    return result.metrics[-1].mean_episode_reward


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    add_common_args(p)
    p.add_argument("--epochs", type=int, nargs="+", default=[1, 2, 4])
    p.add_argument("--envs", nargs="+", default=["pendulum", "lqr"])
    p.add_argument("--timesteps", type=int, help="override the per-env default budget")
    args = p.parse_args()

    lines = ["# Epoch ablation (K-FAC path)", ""]
    for env_id in args.envs:
        table = np.zeros((args.seeds, len(args.epochs)))
        for seed in range(args.seeds):
            for j, epochs in enumerate(args.epochs):
                cfg = make_config(env_id=env_id, seed=seed, epochs_n=epochs,
                                  total_timesteps=args.timesteps or TIMESTEPS[env_id], **overrides(args))
                table[seed, j] = score(env_id, train(cfg))
        lines += [f"## {env_id}", "", "| seed | " + " | ".join(f"epochs={e}" for e in args.epochs) + " |",
                  "|---" * (len(args.epochs) + 1) + "|"]
        for seed in range(args.seeds):
            lines.append(f"| {seed} | " + " | ".join(f"{v:.3f}" for v in table[seed]) + " |")
        lines.append("| mean | " + " | ".join(f"{v:.3f}" for v in table.mean(axis=0)) + " |")
        for j, epochs in enumerate(args.epochs[1:], 1):
            wins = int(np.sum(table[:, 0] >= table[:, j]))
            lines.append(f"\nepochs={args.epochs[0]} at least as good as epochs={epochs} on {wins}/{args.seeds} seeds")
        lines.append("")
    emit("\n".join(lines), args.out)


if __name__ == "__main__":
    main()
