"""Command-line harness: ``ppokfac run | compare | bench | list-envs``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.

Runs go under ``$PPOKFAC_RUN_ROOT`` (default ``./runs``) in directories
named ``<env>-<optimizer>-<config hash>-seed<seed>``. An existing directory
is never reused; a timestamp suffix keeps the new run separate.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .bench import bench, format_report
from .config import TrainerConfig, config_from_dict, load_config, parse_value
from .envs import ENV_REGISTRY, make_env
from .errors import ConfigError, PPOKFACError
from .plotting import X_AXES, compare
from .trainer import train

RUN_ROOT_ENV = "PPOKFAC_RUN_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("ppokfac")


def split_top_level(text: str, sep: str = ",") -> list[str]:
    """Split on ``sep`` outside brackets, so ``(64,64),(32,)`` gives two items."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def parse_overrides(items: list[str]) -> list[dict]:
    """``["seed=1,2", "lr=0.1"]`` -> the cartesian product of swept values."""
    keys, choices = [], []
    for item in items:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        keys.append(key)
        choices.append([parse_value(v) for v in split_top_level(value)] or [""])
    return [dict(zip(keys, combo)) for combo in itertools.product(*choices)]


def build_configs(config_path, overrides: list[str]) -> list[TrainerConfig]:
    base = {}
    if config_path is not None:
        if not Path(config_path).is_file():
            raise ConfigError("config", f"no such file {config_path}")
        base = load_config(config_path).to_dict()
    return [config_from_dict({**base, **combo}) for combo in parse_overrides(overrides)]


def run_root(arg=None) -> Path:
    return Path(arg or os.environ.get(RUN_ROOT_ENV) or "runs")


def fresh_run_dir(root: Path, cfg: TrainerConfig) -> Path:
    name = f"{cfg.env_id}-{cfg.optimizer}-{cfg.config_hash()}-seed{cfg.seed}"
    path = root / name
    if path.exists():
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = root / f"{name}-{stamp}"
        n = 1
        while path.exists():
            path = root / f"{name}-{stamp}-{n}"
            n += 1
    return path


def cmd_run(args) -> int:
    configs = build_configs(args.config, args.set)
    root = run_root(args.run_root)
    for cfg in configs:
        run_dir = fresh_run_dir(root, cfg)
        log.info("run %s (%d iterations)", run_dir, cfg.n_iterations)

        def progress(state, m):
            if args.verbose:
                print(f"  iter {m.iteration:4d}  t={m.timesteps:8d}  reward={m.mean_episode_reward:10.2f}"
                      f"  kl={m.observed_kl:.5f}  eta={m.eta:.4g}", flush=True)

        train(cfg, run_dir, callback=progress)
        print(run_dir)
    return EXIT_OK


def cmd_compare(args) -> int:
    path = compare(args.runs, args.output, x_axis=args.x_axis, metric=args.metric, title=args.title)
    print(path)
    return EXIT_OK


def cmd_bench(args) -> int:
    configs = build_configs(args.config, args.set)
    if len(configs) != 1:
        raise ConfigError("set", "bench takes a single configuration, not a sweep")
    rows = bench(configs[0], repeats=args.repeats)
    if args.json:
        print(json.dumps([r.to_dict() for r in rows], indent=2))
    else:
        print(format_report(rows))
    return EXIT_OK


def cmd_list_envs(args) -> int:
    for env_id in sorted(ENV_REGISTRY):
        s = make_env(env_id).spec
        print(f"{env_id:<10} obs_dim={s.obs_dim} action_dim={s.action_dim} "
              f"max_episode_steps={s.max_episode_steps} "
              f"action=[{', '.join(f'{a:g}' for a in s.action_low)}]..[{', '.join(f'{a:g}' for a in s.action_high)}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppokfac", description="PPO with K-FAC or first-order updates.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="WARNING", help="python logging level")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("config", nargs="?", help="config file of 'key = value' lines (optional)")
        sp.add_argument("--set", "--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override a field; comma-separated values sweep, e.g. seed=0,1,2")

    sp = sub.add_parser("run", help="train and write a run directory per config")
    config_args(sp)
    sp.add_argument("--run-root", help=f"parent directory for runs (default ${RUN_ROOT_ENV} or ./runs)")
    sp.add_argument("-v", "--verbose", action="store_true", help="print one line per iteration")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="plot learning curves of run directories as SVG")
    sp.add_argument("runs", nargs="+", help="run directories; equal configs are averaged over seeds")
    sp.add_argument("-o", "--output", default="compare.svg")
    sp.add_argument("--x-axis", choices=sorted(X_AXES), default="timesteps")
    sp.add_argument("--metric", default="mean_episode_reward")
    sp.add_argument("--title")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("bench", help="optimization vs simulation wall-clock for both optimizer paths")
    config_args(sp)
    sp.add_argument("--repeats", type=int, default=1)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("list-envs", help="show the available environments")
    sp.set_defaults(func=cmd_list_envs)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PPOKFACError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
