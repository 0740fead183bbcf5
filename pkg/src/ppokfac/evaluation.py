"""Deterministic evaluation of trained policies."""
from __future__ import annotations

import numpy as np

from . import nn
from .envs import Lqr, LqrSystem, make_env


def mean_action_fn(policy: nn.GaussianPolicy, obs_norm):
    def act(obs):
        head, _ = nn.forward_policy(policy, obs_norm.normalize(obs))
        return head.mean
    return act


def lqr_average_cost(act, system: LqrSystem, horizon: int = 10_000, n_traj: int = 16, seed: int = 0,
                     action_limit: float = 5.0, state_limit: float = Lqr.state_limit) -> float:
    """Long-run average per-step cost of the feedback ``u = act(x)`` under process noise.

    ``n_traj`` independent trajectories are run side by side from the
    origin; the first ``horizon // 10`` steps of each are discarded.
    """
    rng = np.random.default_rng(seed)
    n = system.A.shape[0]
    x = np.zeros((n_traj, n))
    burn = horizon // 10
    total, count = 0.0, 0
    for t in range(horizon):
        u = np.clip(act(x), -action_limit, action_limit)
        if t >= burn:
            total += float(np.einsum("ij,jk,ik->", x, system.Q, x) + np.einsum("ij,jk,ik->", u, system.R, u))
            count += n_traj
        noise = system.noise_std * rng.standard_normal((n_traj, n))
        x = np.clip(x @ system.A.T + u @ system.B.T + noise, -state_limit, state_limit)
    return total / count


def linear_policy(K: np.ndarray):
    return lambda x: -x @ K.T


def episode_returns(act, env_id: str, n_episodes: int = 10, seed: int = 0) -> np.ndarray:
    """Undiscounted returns of ``act`` (observation -> action) on fresh episodes."""
    env = make_env(env_id)
    out = []
    for ep in range(n_episodes):
        obs = env.reset(seed + ep)
        total, done = 0.0, False
        while not done:
            res = env.step(act(obs[None, :])[0])
            total += res.reward
            obs, done = res.next_state, res.done
        out.append(total)
    return np.array(out)
