"""Trained-policy cost on the LQR task relative to the Riccati optimum.

    python scripts/lqr_check.py --seeds 5 --timesteps 200000
"""
import argparse

from _common import add_common_args, emit, lqr_cost_ratio, make_config, overrides
from ppokfac.envs import default_lqr_system, lqr_optimal
from ppokfac.trainer import train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    add_common_args(p)
    p.add_argument("--timesteps", type=int, default=200_000)
    args = p.parse_args()

    _, j_star, _ = lqr_optimal(default_lqr_system())
    lines = [f"# LQR, {args.timesteps} timesteps, J* = {j_star:.4f}", "",
             "| seed | cost / J* | final training reward |", "|---|---|---|"]
    ratios = []
    for seed in range(args.seeds):
        cfg = make_config(env_id="lqr", seed=seed, total_timesteps=args.timesteps, **overrides(args))
        result = train(cfg)
        ratios.append(lqr_cost_ratio(result.state))
        lines.append(f"| {seed} | {ratios[-1]:.4f} | {result.metrics[-1].mean_episode_reward:.2f} |")
    lines += ["", f"{sum(r <= 1.1 for r in ratios)}/{len(ratios)} seeds within 10% of J*"]
    emit("\n".join(lines), args.out)


if __name__ == "__main__":
    main()
