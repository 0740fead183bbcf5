"""Wall-clock comparison of the two optimizer paths at equal timesteps.

Only time spent inside the update loop counts as optimization; rollout
collection and advantage estimation are reported separately as simulation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

from .config import FIRST_ORDER, KFAC, TrainerConfig
from .trainer import train


@dataclass
class BenchRow:
    label: str
    optimizer: str
    epochs_n: int
    iterations: int
    updates: int
    optimization_seconds: float
    simulation_seconds: float

    @property
    def seconds_per_update(self) -> float:
        return self.optimization_seconds / self.updates if self.updates else 0.0

    def to_dict(self) -> dict:
        return {**asdict(self), "seconds_per_update": self.seconds_per_update}


def bench_config(config: TrainerConfig, label: str | None = None) -> BenchRow:
    result = train(config)
    return BenchRow(
        label=label or config.optimizer,
        optimizer=config.optimizer,
        epochs_n=config.epochs_n,
        iterations=len(result.metrics),
        updates=result.state.update_count,
        optimization_seconds=float(sum(m.optimization_seconds for m in result.metrics)),
        simulation_seconds=float(result.simulation_seconds),
    )


def bench(config: TrainerConfig, repeats: int = 1) -> list[BenchRow]:
    """Time the K-FAC path and the first-order path on ``config``'s task.

    Each path uses its own default epoch count; everything else (env,
    timesteps, batch, network, seed) is shared.
    """
    rows = []
    for r in range(repeats):
        suffix = f" #{r + 1}" if repeats > 1 else ""
        for optimizer in (KFAC, FIRST_ORDER):
            cfg = config.replace(optimizer=optimizer)
            rows.append(bench_config(cfg, f"{optimizer}{suffix}"))
    return rows


def format_report(rows: list[BenchRow]) -> str:
    header = (f"{'path':<16}{'epochs':>7}{'iters':>7}{'updates':>9}{'opt s':>10}"
              f"{'sim s':>10}{'s/update':>12}")
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.label:<16}{r.epochs_n:>7}{r.iterations:>7}{r.updates:>9}"
                     f"{r.optimization_seconds:>10.3f}{r.simulation_seconds:>10.3f}"
                     f"{r.seconds_per_update:>12.2e}")
    return "\n".join(lines)
