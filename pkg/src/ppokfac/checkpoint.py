"""Checkpoints: one ``.npz`` holding every tensor plus a JSON header.

The header records the format version, network layer sizes, the seed and
the full config. Optimizer state (Kronecker factors, learning-rate state and
first-order moments) and observation statistics are stored alongside the
parameters so a run can be resumed.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import nn
from .config import config_from_dict
from .optim import KroneckerFactors, LrState

FORMAT_VERSION = 1


def _put_mlp(arrays, prefix, net: nn.MlpParams):
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}/W{i}"] = w
        arrays[f"{prefix}/b{i}"] = b


def _get_mlp(arrays, prefix, n_layers) -> nn.MlpParams:
    return nn.MlpParams([arrays[f"{prefix}/W{i}"] for i in range(n_layers)],
                        [arrays[f"{prefix}/b{i}"] for i in range(n_layers)])


def _put_factors(arrays, prefix, f: KroneckerFactors):
    for i, (a, g) in enumerate(zip(f.A, f.G)):
        arrays[f"{prefix}/A{i}"] = a
        arrays[f"{prefix}/G{i}"] = g


def _get_factors(arrays, prefix, n_layers, count) -> KroneckerFactors:
    return KroneckerFactors([arrays[f"{prefix}/A{i}"] for i in range(n_layers)],
                            [arrays[f"{prefix}/G{i}"] for i in range(n_layers)], count)


def _lr_dict(s: LrState) -> dict:
    return {"eta": s.eta, "delta": s.delta, "eta_min": s.eta_min, "eta_max": s.eta_max,
            "iteration": s.iteration, "history": [list(h) for h in s.history]}


def _lr_from(d: dict) -> LrState:
    return LrState(d["eta"], d["delta"], d["eta_min"], d["eta_max"],
                   tuple(tuple(h) for h in d["history"]), d["iteration"])


def save_checkpoint(path, state) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = state.config
    arrays = {"policy/log_std": state.policy.log_std}
    _put_mlp(arrays, "policy", state.policy.net)
    _put_mlp(arrays, "value", state.value)
    _put_factors(arrays, "policy_factors", state.policy_factors)
    _put_factors(arrays, "critic_factors", state.critic_factors)
    for name, opt in (("policy_opt", state.policy_opt), ("critic_opt", state.critic_opt)):
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"{name}/m{i}"] = m
            arrays[f"{name}/v{i}"] = v
    norm = state.obs_norm.state_dict()
    if norm:
        arrays["obs_norm/mean"] = norm["mean"]
        arrays["obs_norm/var"] = norm["var"]
    header = {
        "format_version": FORMAT_VERSION,
        "policy_layer_sizes": list(state.policy.net.layer_sizes),
        "value_layer_sizes": list(state.value.layer_sizes),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "iteration": state.iteration,
        "timesteps": state.timesteps,
        "update_count": state.update_count,
        "policy_factor_count": state.policy_factors.update_count,
        "critic_factor_count": state.critic_factors.update_count,
        "lr_state": _lr_dict(state.lr_state),
        "critic_lr_state": _lr_dict(state.critic_lr_state),
        "opt_steps": [state.policy_opt.t, state.critic_opt.t],
        "opt_slots": [len(state.policy_opt.m), len(state.critic_opt.m)],
        "obs_norm_count": norm.get("count"),
        "recent_returns": list(state.recent_returns),
        "rng": {k: getattr(state, k).bit_generator.state
                for k in ("action_rng", "fisher_rng", "shuffle_rng")},
    }
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_header(path) -> dict:
    with np.load(path) as data:
        return json.loads(bytes(data["header"]).decode())


def load_checkpoint(path):
    """Rebuild a TrainState from a checkpoint.

    Environments restart from fresh episodes; everything the optimizer and
    the networks depend on is restored exactly.
    """
    from .trainer import make_state

    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    header = json.loads(bytes(arrays.pop("header")).decode())
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {header['format_version']}")
    cfg = config_from_dict(header["config"])
    state = make_state(cfg)
    n_pol = len(header["policy_layer_sizes"]) - 1
    n_val = len(header["value_layer_sizes"]) - 1
    state.policy = nn.GaussianPolicy(_get_mlp(arrays, "policy", n_pol), arrays["policy/log_std"])
    state.value = _get_mlp(arrays, "value", n_val)
    state.policy_factors = _get_factors(arrays, "policy_factors", n_pol, header["policy_factor_count"])
    state.critic_factors = _get_factors(arrays, "critic_factors", n_val, header["critic_factor_count"])
    state.lr_state = _lr_from(header["lr_state"])
    state.critic_lr_state = _lr_from(header["critic_lr_state"])
    for name, opt, t, slots in zip(("policy_opt", "critic_opt"), (state.policy_opt, state.critic_opt),
                                   header["opt_steps"], header["opt_slots"]):
        opt.t = t
        opt.m = [arrays[f"{name}/m{i}"] for i in range(slots)]
        opt.v = [arrays[f"{name}/v{i}"] for i in range(slots)]
    if "obs_norm/mean" in arrays:
        state.obs_norm.load_state_dict({"mean": arrays["obs_norm/mean"], "var": arrays["obs_norm/var"],
                                        "count": header["obs_norm_count"]})
    state.iteration = header["iteration"]
    state.timesteps = header["timesteps"]
    state.update_count = header["update_count"]
    state.recent_returns.extend(header["recent_returns"])
    for k, st in header["rng"].items():
        getattr(state, k).bit_generator.state = st
    return state
