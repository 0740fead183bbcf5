"""Learning-curve SVGs from run directories.

Runs that share a config (up to the seed) form one group and are drawn as
their mean curve with a min/max band. The SVG is written by hand: plain
XML, inline styles, nothing fetched from outside the file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .config import TrainerConfig, load_config
from .errors import MissingMetrics
from .trainer import read_metrics

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]
X_AXES = {"timesteps": "timesteps", "updates": "update_count", "iteration": "iteration"}


@dataclass
class Run:
    path: Path
    config: TrainerConfig
    metrics: list


@dataclass
class Series:
    label: str
    x: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n_runs: int


def load_run(path) -> Run:
    path = Path(path)
    if not (path / "metrics.csv").is_file():
        raise MissingMetrics(f"no metrics.csv in {path}")
    config = load_config(path / "config.txt") if (path / "config.txt").is_file() else TrainerConfig()
    metrics = read_metrics(path)
    if not metrics:
        raise MissingMetrics(f"metrics.csv in {path} has no rows")
    return Run(path, config, metrics)


def group_runs(runs: list[Run]) -> dict[str, list[Run]]:
    """Group by config hash; label each group by the fields that tell groups apart."""
    groups: dict[str, list[Run]] = {}
    for run in runs:
        groups.setdefault(run.config.config_hash(), []).append(run)
    configs = [g[0].config for g in groups.values()]
    varying = [f.name for f in fields(TrainerConfig) if f.name != "seed"
               and len({repr(getattr(c, f.name)) for c in configs}) > 1]
    labelled = {}
    for key, members in groups.items():
        c = members[0].config
        parts = [f"{name}={getattr(c, name)}" for name in varying]
        label = ", ".join(parts) if parts else f"{c.optimizer} on {c.env_id}"
        labelled[f"{label} (n={len(members)})"] = members
    return labelled


def aggregate(label: str, runs: list[Run], x_axis: str = "timesteps",
              metric: str = "mean_episode_reward") -> Series:
    if x_axis not in X_AXES:
        raise ValueError(f"x axis must be one of {sorted(X_AXES)}")
    length = min(len(r.metrics) for r in runs)
    x = np.array([getattr(m, X_AXES[x_axis]) for m in runs[0].metrics[:length]], dtype=float)
    y = np.array([[getattr(m, metric) for m in r.metrics[:length]] for r in runs], dtype=float)
    with np.errstate(all="ignore"):
        # early iterations may have no finished episode yet (NaN rewards)
        valid = ~np.all(np.isnan(y), axis=0)
        mean = np.full(length, np.nan)
        lo, hi = mean.copy(), mean.copy()
        mean[valid] = np.nanmean(y[:, valid], axis=0)
        lo[valid] = np.nanmin(y[:, valid], axis=0)
        hi[valid] = np.nanmax(y[:, valid], axis=0)
    return Series(label, x, mean, lo, hi, len(runs))


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _fmt_tick(v: float) -> str:
    if v != 0 and (abs(v) >= 1e5 or abs(v) < 1e-3):
        return f"{v:.0e}"
    return f"{v:g}"


def _finite_values(arrays) -> np.ndarray:
    return np.concatenate([a[np.isfinite(a)] for a in arrays]) if arrays else np.array([])


def render_svg(series: list[Series], title: str, xlabel: str, ylabel: str,
               width: int = 720, height: int = 440) -> str:
    left, right, top, bottom = 70, 20, 40, 50
    legend_h = 18 * len(series)
    plot_w, plot_h = width - left - right, height - top - bottom - legend_h
    xs = _finite_values([s.x for s in series])
    ys = _finite_values([s.lo for s in series] + [s.hi for s in series] + [s.mean for s in series])
    x0, x1 = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + (x - x0) / (x1 - x0) * plot_w

    def py(y):
        return top + (1.0 - (y - y0) / (y1 - y0)) * plot_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>']
    # axes, ticks, grid
    out.append(f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>')
    for t in _nice_ticks(x0, x1):
        X = px(t)
        out.append(f'<line x1="{X:.1f}" y1="{top + plot_h}" x2="{X:.1f}" y2="{top + plot_h + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.1f}" y="{top + plot_h + 18}" text-anchor="middle">{_fmt_tick(t)}</text>')
    for t in _nice_ticks(y0, y1):
        Y = py(t)
        out.append(f'<line x1="{left}" y1="{Y:.1f}" x2="{left + plot_w}" y2="{Y:.1f}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{left - 6}" y="{Y + 4:.1f}" text-anchor="end">{_fmt_tick(t)}</text>')
    out.append(f'<text class="xlabel" x="{left + plot_w / 2:.1f}" y="{top + plot_h + 38}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text class="ylabel" transform="translate(16 {top + plot_h / 2:.1f}) rotate(-90)" '
               f'text-anchor="middle">{escape(ylabel)}</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        ok = np.isfinite(s.mean)
        if not ok.any():
            continue
        xs_, lo, hi, mean = s.x[ok], s.lo[ok], s.hi[ok], s.mean[ok]
        if s.n_runs > 1:
            pts = [(px(a), py(b)) for a, b in zip(xs_, hi)] + [(px(a), py(b)) for a, b in zip(xs_[::-1], lo[::-1])]
            out.append(f'<polygon class="band" points="{" ".join(f"{a:.1f},{b:.1f}" for a, b in pts)}" '
                       f'fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(xs_, mean))
        out.append(f'<polyline class="curve" points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
    ly = top + plot_h + bottom
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        y = ly + 18 * i
        out.append(f'<g class="legend"><line x1="{left}" y1="{y - 4}" x2="{left + 24}" y2="{y - 4}" '
                   f'stroke="{color}" stroke-width="3"/>'
                   f'<text x="{left + 30}" y="{y}">{escape(s.label)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def compare(run_dirs, output, x_axis: str = "timesteps", metric: str = "mean_episode_reward",
            title: str | None = None) -> Path:
    """Write one SVG chart of ``metric`` for the given run directories."""
    if not run_dirs:
        raise MissingMetrics("no run directories given")
    runs = [load_run(d) for d in run_dirs]
    series = [aggregate(label, members, x_axis, metric) for label, members in group_runs(runs).items()]
    xlabel = {"timesteps": "timesteps", "updates": "updates", "iteration": "iteration"}[x_axis]
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(render_svg(series, title or metric.replace("_", " "), xlabel,
                                 metric.replace("_", " ")))
    return output
