"""How well the adaptive step size keeps the per-iteration KL near its target.

Trains the K-FAC path with default settings on pendulum and prints, per
seed, the fraction of post-warm-up iterations whose observed KL lies in
[delta/4, 4 delta], along with the step-size range visited.

    python scripts/kl_controller.py --seeds 5 --timesteps 300000
"""
import argparse

import numpy as np

from _common import add_common_args, emit, make_config, overrides
from ppokfac.trainer import train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    add_common_args(p)
    p.add_argument("--env", default="pendulum")
    p.add_argument("--timesteps", type=int, default=300_000)
    p.add_argument("--warmup", type=int, default=10)
    args = p.parse_args()

    lines = [f"# KL controller on {args.env}, {args.timesteps} timesteps", "",
             "| seed | in band | median KL | eta min | eta max | final reward |", "|---|---|---|---|---|---|"]
    for seed in range(args.seeds):
        cfg = make_config(env_id=args.env, seed=seed, total_timesteps=args.timesteps, **overrides(args))
        metrics = train(cfg).metrics
        kls = np.array([m.observed_kl for m in metrics[args.warmup:]])
        etas = np.array([m.eta for m in metrics])
        band = np.mean((kls >= cfg.delta / 4) & (kls <= 4 * cfg.delta))
        lines.append(f"| {seed} | {band:.3f} | {np.median(kls):.5f} | {etas.min():.4g} | {etas.max():.4g} "
                     f"| {metrics[-1].mean_episode_reward:.1f} |")
    emit("\n".join(lines), args.out)


if __name__ == "__main__":
    main()
