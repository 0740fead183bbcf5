"""Trainer hyperparameters and the flat ``key = value`` config format.

A config file holds one assignment per line; ``#`` starts a comment.
Values are Python literals (``0.03``, ``(64, 64)``, ``true``, ``"lqr"``);
anything that does not parse as a literal is taken as a bare string, so
``env_id = lqr`` works too.
"""
from __future__ import annotations

import ast
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

from .envs import ENV_REGISTRY
from .errors import ConfigError

KFAC = "kfac"
FIRST_ORDER = "first_order"


@dataclass(frozen=True)
class TrainerConfig:
    env_id: str = "pendulum"
    optimizer: str = KFAC
    total_timesteps: int = 300_000
    seed: int = 0

    gamma: float = 0.99
    k_steps: int = 32
    clip_epsilon: float = 0.2
    batch_size: int = 2048
    epochs_n: int | None = None          # None -> 2 for kfac, 10 for first_order
    minibatch_size: int = 64             # first-order path only
    hidden_sizes: tuple[int, ...] = (64, 64)
    num_envs: int = 1

    # K-FAC path
    eta0: float = 0.03
    delta: float = 0.002
    damping: float = 0.01                # total; split evenly (sqrt) between A and G
    ema_decay: float = 0.95
    eta_min: float = 1e-5
    eta_max: float = 1.0
    critic_eta: float = 0.1

    # first-order path
    lr: float = 3e-4
    first_order_kind: str = "adam"
    lr_schedule: str = "linear"          # "linear" decay to 0, or "constant"

    advantage_normalization: bool = True
    obs_normalization: bool = True
    entropy_coef: float = 0.0
    kl_early_stop: bool = False          # stop the epoch loop once KL > 4 delta
    init_log_std: float = 0.0
    policy_output_gain: float = 0.01
    checkpoint_every: int = 0            # iterations; 0 -> final checkpoint only

    def __post_init__(self):
        if self.epochs_n is None:
            object.__setattr__(self, "epochs_n", 2 if self.optimizer == KFAC else 10)
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        self.validate()

    def validate(self):
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(self.env_id in ENV_REGISTRY, "env_id", f"unknown env {self.env_id!r}")
        need(self.optimizer in (KFAC, FIRST_ORDER), "optimizer", "must be 'kfac' or 'first_order'")
        need(0.0 < self.gamma < 1.0, "gamma", "must lie in (0, 1)")
        need(0.0 < self.clip_epsilon < 1.0, "clip_epsilon", "must lie in (0, 1)")
        for name in ("batch_size", "epochs_n", "minibatch_size", "k_steps", "num_envs"):
            need(isinstance(getattr(self, name), int) and getattr(self, name) >= 1, name,
                 "must be a positive integer")
        need(self.k_steps <= self.batch_size, "k_steps", "cannot exceed batch_size")
        need(self.total_timesteps >= 0, "total_timesteps", "must be nonnegative")
        for name in ("eta0", "delta", "critic_eta", "lr", "eta_min", "eta_max"):
            need(getattr(self, name) > 0, name, "must be positive")
        need(self.eta_min <= self.eta0 <= self.eta_max, "eta0", "must lie within [eta_min, eta_max]")
        need(self.damping >= 0, "damping", "must be nonnegative")
        need(0.0 <= self.ema_decay < 1.0, "ema_decay", "must lie in [0, 1)")
        need(self.first_order_kind in ("adam", "sgd"), "first_order_kind", "must be 'adam' or 'sgd'")
        need(self.lr_schedule in ("linear", "constant"), "lr_schedule", "must be 'linear' or 'constant'")
        need(len(self.hidden_sizes) >= 1 and min(self.hidden_sizes) >= 1, "hidden_sizes",
             "need at least one positive hidden width")
        need(self.checkpoint_every >= 0, "checkpoint_every", "must be nonnegative")

    @property
    def n_iterations(self) -> int:
        return self.total_timesteps // self.batch_size

    @property
    def updates_per_iteration(self) -> int:
        if self.optimizer == KFAC:
            return self.epochs_n
        return self.epochs_n * -(-self.batch_size // self.minibatch_size)

    def replace(self, **changes) -> "TrainerConfig":
        if "optimizer" in changes and "epochs_n" not in changes:
            changes["epochs_n"] = None
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    def config_hash(self) -> str:
        """Hash of every field except the seed (seeds are swept under one hash)."""
        d = self.to_dict()
        d.pop("seed")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]


FIELD_NAMES = {f.name for f in fields(TrainerConfig)}


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(name, value):
    field_type = {f.name: f.type for f in fields(TrainerConfig)}[name]
    try:
        if field_type == "int" and isinstance(value, float) and value.is_integer():
            return int(value)
        if field_type == "float" and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        if name == "hidden_sizes" and isinstance(value, (list, tuple, int)):
            return tuple(value) if not isinstance(value, int) else (value,)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, f"cannot interpret {value!r}") from exc
    return value


def _check_type(name, value):
    if value is None and name == "epochs_n":
        return
    expected = {f.name: f.type for f in fields(TrainerConfig)}[name]
    ok = {
        "str": isinstance(value, str),
        "int": isinstance(value, int) and not isinstance(value, bool),
        "float": isinstance(value, (int, float)) and not isinstance(value, bool),
        "bool": isinstance(value, bool),
    }.get(expected.split(" ")[0], True)
    if not ok:
        raise ConfigError(name, f"expected {expected}, got {value!r}")


def parse_assignments(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(value)
    return out


def config_from_dict(d: dict, base: TrainerConfig | None = None) -> TrainerConfig:
    unknown = set(d) - FIELD_NAMES
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(name, "unknown config field")
    clean = {}
    for k, v in d.items():
        v = _coerce(k, v)
        _check_type(k, v)
        clean[k] = v
    base_dict = {} if base is None else {f.name: getattr(base, f.name) for f in fields(TrainerConfig)}
    if base is not None and "optimizer" in clean and "epochs_n" not in clean:
        base_dict["epochs_n"] = None   # let the optimizer pick its default
    base_dict.update(clean)
    return TrainerConfig(**base_dict)


def load_config(path, overrides: dict | None = None) -> TrainerConfig:
    with open(path) as fh:
        d = parse_assignments(fh.read())
    d.update(overrides or {})
    return config_from_dict(d)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    return repr(v)


def format_config(cfg: TrainerConfig) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(TrainerConfig))
