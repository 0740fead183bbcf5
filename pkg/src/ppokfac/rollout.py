"""Experience collection and k-step advantage estimation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .envs import EnvPool, dump_trajectory


class RunningMeanStd:
    """Streaming mean/variance of observations (parallel-merge form)."""

    def __init__(self, dim: int, clip: float = 10.0, eps: float = 1e-8):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0
        self.clip = clip
        self.eps = eps

    def update(self, x: np.ndarray):
        x = np.atleast_2d(x)
        b_mean, b_var, b_count = x.mean(axis=0), x.var(axis=0), x.shape[0]
        if self.count == 0:
            self.mean, self.var, self.count = b_mean, b_var, float(b_count)
            return
        delta = b_mean - self.mean
        total = self.count + b_count
        self.mean = self.mean + delta * b_count / total
        m2 = self.var * self.count + b_var * b_count + delta ** 2 * self.count * b_count / total
        self.var = m2 / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var + self.eps), -self.clip, self.clip)

    def state_dict(self) -> dict:
        return {"mean": self.mean.copy(), "var": self.var.copy(), "count": self.count}

    def load_state_dict(self, d: dict):
        self.mean = np.array(d["mean"], dtype=np.float64)
        self.var = np.array(d["var"], dtype=np.float64)
        self.count = float(d["count"])


class IdentityNormalizer:
    def update(self, x):
        pass

    def normalize(self, x):
        return np.asarray(x, dtype=np.float64)

    def state_dict(self):
        return {}

    def load_state_dict(self, d):
        pass


@dataclass
class RolloutBatch:
    states: np.ndarray          # (N, obs_dim), as fed to the networks
    actions: np.ndarray         # (N, act_dim), unclipped samples
    rewards: np.ndarray
    dones: np.ndarray           # episode ended after this step
    terminals: np.ndarray       # ended in a terminal set: no bootstrap
    seg_ends: np.ndarray        # last step of one env's contiguous segment
    old_log_probs: np.ndarray
    old_means: np.ndarray       # policy means at collection time, for KL(old || new)
    old_log_std: np.ndarray
    values: np.ndarray
    bootstrap_values: np.ndarray  # V(next state) where the data stops but the episode does not
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_returns: list[float] = field(default_factory=list)
    clipped_actions: int = 0

    def __len__(self):
        return self.rewards.shape[0]

    @property
    def episode_ends(self) -> list[int]:
        return np.flatnonzero(self.dones).tolist()

    def old_head(self) -> nn.GaussianHead:
        return nn.GaussianHead(self.old_means, self.old_log_std)

    def subset(self, idx) -> "RolloutBatch":
        """Rows ``idx`` only; structural fields are dropped (for minibatching)."""
        return RolloutBatch(
            self.states[idx], self.actions[idx], self.rewards[idx], self.dones[idx],
            self.terminals[idx], self.seg_ends[idx], self.old_log_probs[idx],
            self.old_means[idx], self.old_log_std, self.values[idx],
            self.bootstrap_values[idx],
            None if self.advantages is None else self.advantages[idx],
            None if self.returns is None else self.returns[idx],
        )


@dataclass
class _EnvCursor:
    obs: np.ndarray          # raw observation the env is sitting in
    ep_return: float = 0.0


def _ensure_started(pool: EnvPool, obs_norm):
    cursors = getattr(pool, "cursors", None)
    if cursors is None:
        cursors = []
        for env in pool.envs:
            obs = env.reset(pool.next_seed())
            obs_norm.update(obs)
            cursors.append(_EnvCursor(obs))
        pool.cursors = cursors
    return cursors


def collect(policy: nn.GaussianPolicy, value_fn: nn.MlpParams, pool: EnvPool, batch_size: int,
            rng: np.random.Generator, obs_norm=None) -> RolloutBatch:
    """Run the current policy for exactly ``batch_size`` transitions.

    Envs keep their state between calls, so episodes run across batch
    boundaries. Each env contributes a contiguous segment; segments are
    concatenated in env order.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    obs_norm = obs_norm or IdentityNormalizer()
    cursors = _ensure_started(pool, obs_norm)
    n_envs = len(pool.envs)
    per_env = [batch_size // n_envs + (1 if i < batch_size % n_envs else 0) for i in range(n_envs)]
    n_rounds = max(per_env)

    seg = [dict(states=[], actions=[], rewards=[], dones=[], terminals=[], logp=[],
                means=[], values=[], boot=[]) for _ in range(n_envs)]
    episode_returns = []
    clipped = 0
    for r in range(n_rounds):
        active = [i for i in range(n_envs) if r < per_env[i]]
        x = obs_norm.normalize(np.stack([cursors[i].obs for i in active]))
        head, _ = nn.forward_policy(policy, x)
        values, _ = nn.forward_value(value_fn, x)
        actions = nn.sample_action(head, rng)
        logps = nn.log_prob(head, actions)
        for row, i in enumerate(active):
            env, cur, s = pool.envs[i], cursors[i], seg[i]
            res = env.step(actions[row])
            clipped += res.action_clipped
            cur.ep_return += res.reward
            s["states"].append(x[row])
            s["actions"].append(actions[row])
            s["rewards"].append(res.reward)
            s["dones"].append(res.done)
            s["terminals"].append(res.terminal)
            s["logp"].append(logps[row])
            s["means"].append(head.mean[row])
            s["values"].append(values[row])
            needs_boot = res.truncated or (r == per_env[i] - 1 and not res.done)
            s["boot"].append(res.next_state if needs_boot else None)
            if res.done:
                episode_returns.append(cur.ep_return)
                cur.ep_return = 0.0
                cur.obs = env.reset(pool.next_seed())
            else:
                cur.obs = res.next_state
            obs_norm.update(cur.obs)

    # bootstrap values for truncations and segment cuts, one batched pass
    boot_rows = [(i, t) for i in range(n_envs) for t, b in enumerate(seg[i]["boot"]) if b is not None]
    boot_vals = {}
    if boot_rows:
        xb = obs_norm.normalize(np.stack([seg[i]["boot"][t] for i, t in boot_rows]))
        vb, _ = nn.forward_value(value_fn, xb)
        boot_vals = {key: v for key, v in zip(boot_rows, vb)}

    def cat(key, dtype=np.float64):
        return np.concatenate([np.asarray(s[key], dtype=dtype) for s in seg if s[key]])

    seg_ends = np.zeros(batch_size, dtype=bool)
    seg_ends[np.cumsum([n for n in per_env if n]) - 1] = True
    bootstrap = np.array([boot_vals.get((i, t), 0.0) for i in range(n_envs) for t in range(per_env[i])])
    return RolloutBatch(
        states=cat("states"),
        actions=cat("actions"),
        rewards=cat("rewards"),
        dones=cat("dones", bool),
        terminals=cat("terminals", bool),
        seg_ends=seg_ends,
        old_log_probs=cat("logp"),
        old_means=cat("means"),
        old_log_std=policy.log_std.copy(),
        values=cat("values"),
        bootstrap_values=bootstrap,
        episode_returns=episode_returns,
        clipped_actions=int(clipped),
    )


def next_values(batch: RolloutBatch) -> np.ndarray:
    """Value of the state following each step, 0 after a terminal."""
    nv = np.zeros(len(batch))
    nv[:-1] = batch.values[1:]
    stop = batch.dones | batch.seg_ends
    nv[stop] = batch.bootstrap_values[stop]
    nv[batch.terminals] = 0.0
    return nv


def compute_advantages(batch: RolloutBatch, gamma: float, k: int, normalize: bool = True,
                       eps: float = 1e-8) -> RolloutBatch:
    """Fill ``advantages`` and ``returns`` with truncated k-step estimates.

    ``A_t = sum_{i<m} gamma^i r_{t+i} + gamma^m V(s_{t+m}) - V(s_t)`` where
    ``m <= k`` stops early at episode ends and segment cuts. ``returns`` are
    ``A + V`` before any normalization.
    """
    n = len(batch)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    rewards = batch.rewards
    nv = next_values(batch)
    stop_at = batch.dones | batch.seg_ends
    base = np.arange(n)
    acc = np.zeros(n)
    tail = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    for i in range(k):
        j = np.minimum(base + i, n - 1)
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        jj = j[idx]
        acc[idx] += gamma ** i * rewards[jj]
        stop = stop_at[jj] | (i == k - 1)
        sidx = idx[stop]
        tail[sidx] = gamma ** (i + 1) * nv[jj[stop]]
        alive[sidx] = False
    adv = acc + tail - batch.values
    batch.returns = adv + batch.values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + eps)
    batch.advantages = adv
    return batch


def dump_batch(path, batch: RolloutBatch):
    rows = []
    adv = batch.advantages if batch.advantages is not None else np.full(len(batch), np.nan)
    ret = batch.returns if batch.returns is not None else np.full(len(batch), np.nan)
    for t in range(len(batch)):
        rows.append((t, batch.states[t], batch.actions[t], batch.rewards[t], batch.dones[t],
                     adv[t], ret[t]))
    dump_trajectory(path, rows, batch.states.shape[1], batch.actions.shape[1],
                    extra=("advantage", "return"))
