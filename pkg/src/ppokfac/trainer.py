"""PPO training loop with a K-FAC back-end (PPOKFAC) or a first-order one (PPOSGD).

One iteration collects ``batch_size`` transitions, computes k-step
advantages, snapshots the policy, then runs

* K-FAC: ``epochs_n`` full-batch natural-gradient updates, adapting the step
  size from the KL to the snapshot after every update;
* first-order: ``epochs_n`` shuffled passes of ``minibatch_size`` Adam/SGD
  updates with a linearly decaying learning rate.
"""
from __future__ import annotations

import collections
import csv
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nn
from .config import KFAC, TrainerConfig, format_config
from .envs import EnvPool
from .errors import PPOKFACError, TrainingError
from .optim import (FirstOrderState, KroneckerFactors, LrState, accumulate_factors,
                    adapt_learning_rate, critic_sampled_g, first_order_step,
                    gauss_newton_critic_step, grads_to_list, kfac_step, list_to_params,
                    log_std_natural_step, params_to_list, policy_sampled_g)
from .rollout import IdentityNormalizer, RolloutBatch, RunningMeanStd, collect, compute_advantages

log = logging.getLogger(__name__)


@dataclass
class IterationMetrics:
    iteration: int
    timesteps: int
    mean_episode_reward: float   # mean over the last 100 finished episodes
    surrogate_loss: float
    value_loss: float
    observed_kl: float
    eta: float
    clip_fraction: float
    optimization_seconds: float
    update_count: int            # cumulative


METRIC_FIELDS = [f.name for f in fields(IterationMetrics)]
# wall-clock columns go to timing.csv so that metrics.csv is reproducible bit for bit
TIMING_FIELDS = ["iteration", "optimization_seconds", "simulation_seconds", "updates"]
CSV_METRIC_FIELDS = [f for f in METRIC_FIELDS if f != "optimization_seconds"]


# --- losses ----------------------------------------------------------------

def policy_ratio(logp_new, logp_old):
    return np.exp(np.asarray(logp_new) - np.asarray(logp_old))


def clipped_surrogate(ratio, advantage, epsilon):
    """Per-sample PPO objective ``min(r A, clip(r, 1 - eps, 1 + eps) A)`` (to maximize)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage)


def clip_active(ratio, advantage, epsilon):
    """Samples whose clipped branch is selected, i.e. zero gradient."""
    return ((advantage > 0) & (ratio > 1.0 + epsilon)) | ((advantage < 0) & (ratio < 1.0 - epsilon))


def value_loss(values_pred, returns) -> float:
    diff = np.asarray(values_pred) - np.asarray(returns)
    return float(0.5 * np.mean(diff * diff))


@dataclass
class PolicyLoss:
    loss: float
    head: nn.GaussianHead
    trace: nn.ForwardTrace
    mean_grad: np.ndarray      # d loss_n / d mean_n (per sample)
    log_std_grad: np.ndarray   # d loss / d log_std (batch mean)
    clip_fraction: float
    ratio: np.ndarray


def surrogate_loss_and_grads(policy: nn.GaussianPolicy, batch: RolloutBatch, epsilon: float,
                             entropy_coef: float = 0.0) -> PolicyLoss:
    head, trace = nn.forward_policy(policy, batch.states)
    logp = nn.log_prob(head, batch.actions)
    ratio = policy_ratio(logp, batch.old_log_probs)
    adv = batch.advantages
    obj = clipped_surrogate(ratio, adv, epsilon)
    # d obj_n / d logp_n: r A on the unclipped branch, 0 where clipping is active
    w = np.where(clip_active(ratio, adv, epsilon), 0.0, ratio * adv)
    d_mean, d_log_std = nn.log_prob_grads(head, batch.actions)
    mean_grad = -w[:, None] * d_mean
    log_std_grad = -(w[:, None] * d_log_std).mean(axis=0) - entropy_coef
    loss = -float(obj.mean()) - entropy_coef * nn.entropy(head)
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > epsilon))
    return PolicyLoss(loss, head, trace, mean_grad, log_std_grad, clip_frac, ratio)


def mean_kl(batch: RolloutBatch, policy: nn.GaussianPolicy) -> float:
    head, _ = nn.forward_policy(policy, batch.states)
    return float(np.mean(nn.kl_diag_gaussian(batch.old_head(), head)))


# --- state -----------------------------------------------------------------

@dataclass
class TrainState:
    config: TrainerConfig
    policy: nn.GaussianPolicy
    value: nn.MlpParams
    pool: EnvPool
    obs_norm: object
    action_rng: np.random.Generator
    fisher_rng: np.random.Generator
    shuffle_rng: np.random.Generator
    lr_state: LrState
    critic_lr_state: LrState
    policy_factors: KroneckerFactors
    critic_factors: KroneckerFactors
    policy_opt: FirstOrderState
    critic_opt: FirstOrderState
    iteration: int = 0
    timesteps: int = 0
    update_count: int = 0
    recent_returns: collections.deque = field(default_factory=lambda: collections.deque(maxlen=100))
    # diagnostics of the most recent iteration
    update_kls: list = field(default_factory=list)
    update_clip_fractions: list = field(default_factory=list)
    updates_last_iteration: int = 0
    simulation_seconds: float = 0.0
    clipped_actions: int = 0
    last_batch: RolloutBatch | None = None
    theta_old: nn.GaussianPolicy | None = None


def make_state(config: TrainerConfig) -> TrainState:
    seq = np.random.SeedSequence(config.seed)
    init_ss, env_ss, act_ss, fisher_ss, shuffle_ss = seq.spawn(5)
    pool = EnvPool.make(config.env_id, config.num_envs, int(env_ss.generate_state(1)[0]))
    spec = pool.spec
    init_rng = np.random.default_rng(init_ss)
    policy = nn.init_policy(spec.obs_dim, spec.action_dim, config.hidden_sizes, init_rng,
                            output_gain=config.policy_output_gain, log_std=config.init_log_std)
    value = nn.init_value(spec.obs_dim, config.hidden_sizes, init_rng)
    obs_norm = RunningMeanStd(spec.obs_dim) if config.obs_normalization else IdentityNormalizer()
    return TrainState(
        config=config,
        policy=policy,
        value=value,
        pool=pool,
        obs_norm=obs_norm,
        action_rng=np.random.default_rng(act_ss),
        fisher_rng=np.random.default_rng(fisher_ss),
        shuffle_rng=np.random.default_rng(shuffle_ss),
        lr_state=LrState(config.eta0, config.delta, config.eta_min, config.eta_max),
        critic_lr_state=LrState(config.critic_eta, config.delta, config.critic_eta, config.critic_eta),
        policy_factors=KroneckerFactors.zeros(policy.net.layer_sizes),
        critic_factors=KroneckerFactors.zeros(value.layer_sizes),
        policy_opt=FirstOrderState(config.first_order_kind),
        critic_opt=FirstOrderState(config.first_order_kind),
    )


# --- updates ---------------------------------------------------------------

def _factor_decay(factors: KroneckerFactors, decay: float) -> float:
    # the first estimate replaces the zero initialization outright
    return 0.0 if factors.update_count == 0 else decay


def kfac_update(state: TrainState, batch: RolloutBatch) -> tuple[float, float, float]:
    """One full-batch K-FAC update of actor and critic; returns (loss, value loss, clip frac)."""
    cfg = state.config
    pl = surrogate_loss_and_grads(state.policy, batch, cfg.clip_epsilon, cfg.entropy_coef)
    net = state.policy.net
    grads = nn.backward(net, pl.trace, pl.mean_grad)
    g_sampled = nn.backward(net, pl.trace, policy_sampled_g(pl.head, state.fisher_rng)).preact_grads
    state.policy_factors = accumulate_factors(
        state.policy_factors, pl.trace, g_sampled, _factor_decay(state.policy_factors, cfg.ema_decay))
    new_net = kfac_step(net, grads, state.policy_factors, cfg.damping, state.lr_state)
    new_log_std = log_std_natural_step(state.policy.log_std, pl.log_std_grad, state.lr_state.eta,
                                       cfg.damping)

    v, vtrace = nn.forward_value(state.value, batch.states)
    vloss = value_loss(v, batch.returns)
    vgrads = nn.backward(state.value, vtrace, (v - batch.returns)[:, None])
    vg_sampled = nn.backward(state.value, vtrace,
                             critic_sampled_g(len(batch), state.fisher_rng)).preact_grads
    state.critic_factors = accumulate_factors(
        state.critic_factors, vtrace, vg_sampled, _factor_decay(state.critic_factors, cfg.ema_decay))
    state.value = gauss_newton_critic_step(state.value, vgrads, state.critic_factors, cfg.damping,
                                           state.critic_lr_state)
    state.policy = nn.GaussianPolicy(new_net, new_log_std)
    return pl.loss, vloss, pl.clip_fraction


def _first_order_lr(state: TrainState) -> float:
    cfg = state.config
    if cfg.lr_schedule == "constant" or cfg.n_iterations == 0:
        return cfg.lr
    return cfg.lr * max(1.0 - state.iteration / cfg.n_iterations, 0.0)


def first_order_update(state: TrainState, mb: RolloutBatch, lr: float) -> tuple[float, float, float]:
    cfg = state.config
    pl = surrogate_loss_and_grads(state.policy, mb, cfg.clip_epsilon, cfg.entropy_coef)
    grads = nn.backward(state.policy.net, pl.trace, pl.mean_grad)
    params = params_to_list(state.policy.net) + [state.policy.log_std]
    new = first_order_step(params, grads_to_list(grads) + [pl.log_std_grad], state.policy_opt, lr)
    state.policy = nn.GaussianPolicy(list_to_params(new[:-1]), new[-1])

    v, vtrace = nn.forward_value(state.value, mb.states)
    vloss = value_loss(v, mb.returns)
    vgrads = nn.backward(state.value, vtrace, (v - mb.returns)[:, None])
    state.value = list_to_params(first_order_step(params_to_list(state.value), grads_to_list(vgrads),
                                                  state.critic_opt, lr))
    return pl.loss, vloss, pl.clip_fraction


def train_iteration(state: TrainState) -> IterationMetrics:
    cfg = state.config
    t0 = time.perf_counter()
    batch = collect(state.policy, state.value, state.pool, cfg.batch_size, state.action_rng,
                    state.obs_norm)
    compute_advantages(batch, cfg.gamma, cfg.k_steps, normalize=cfg.advantage_normalization)
    t1 = time.perf_counter()

    # old_log_probs / old_means in the batch were recorded under this snapshot
    state.theta_old = state.policy.copy()
    state.update_kls, state.update_clip_fractions = [], []
    updates = 0
    loss = vloss = math.nan
    kl = 0.0
    if cfg.optimizer == KFAC:
        for _ in range(cfg.epochs_n):
            loss, vloss, cf = kfac_update(state, batch)
            updates += 1
            kl = mean_kl(batch, state.policy)
            state.update_kls.append(kl)
            state.update_clip_fractions.append(cf)
            state.lr_state = adapt_learning_rate(state.lr_state, kl)
            if cfg.kl_early_stop and kl > 4 * cfg.delta:
                break
        eta = state.lr_state.eta
    else:
        lr = _first_order_lr(state)
        n = len(batch)
        for _ in range(cfg.epochs_n):
            perm = state.shuffle_rng.permutation(n)
            for start in range(0, n, cfg.minibatch_size):
                loss, vloss, cf = first_order_update(state, batch.subset(perm[start:start + cfg.minibatch_size]), lr)
                updates += 1
                state.update_clip_fractions.append(cf)
            kl = mean_kl(batch, state.policy)
            state.update_kls.append(kl)
            if cfg.kl_early_stop and kl > 4 * cfg.delta:
                break
        eta = lr
    t2 = time.perf_counter()

    state.iteration += 1
    state.timesteps += len(batch)
    state.update_count += updates
    state.updates_last_iteration = updates
    state.simulation_seconds = t1 - t0
    state.clipped_actions += batch.clipped_actions
    state.recent_returns.extend(batch.episode_returns)
    state.last_batch = batch
    return IterationMetrics(
        iteration=state.iteration,
        timesteps=state.timesteps,
        mean_episode_reward=float(np.mean(state.recent_returns)) if state.recent_returns else math.nan,
        surrogate_loss=float(loss),
        value_loss=float(vloss),
        observed_kl=float(kl),
        eta=float(eta),
        clip_fraction=float(np.mean(state.update_clip_fractions)) if state.update_clip_fractions else 0.0,
        optimization_seconds=t2 - t1,
        update_count=state.update_count,
    )


# --- metrics files -----------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


class MetricsWriter:
    """Append-only writer for metrics.csv and timing.csv."""

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.metrics_path = self.run_dir / "metrics.csv"
        self.timing_path = self.run_dir / "timing.csv"
        for path, header in ((self.metrics_path, CSV_METRIC_FIELDS), (self.timing_path, TIMING_FIELDS)):
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(header)

    def write(self, m: IterationMetrics, simulation_seconds: float, updates: int):
        with open(self.metrics_path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(getattr(m, k)) for k in CSV_METRIC_FIELDS])
        with open(self.timing_path, "a", newline="") as fh:
            csv.writer(fh).writerow([m.iteration, _fmt(m.optimization_seconds),
                                     _fmt(simulation_seconds), updates])


def read_metrics(run_dir) -> list[IterationMetrics]:
    """Parse metrics.csv (plus timing.csv if present) back into IterationMetrics."""
    run_dir = Path(run_dir)
    timing = {}
    tpath = run_dir / "timing.csv"
    if tpath.exists():
        with open(tpath, newline="") as fh:
            for row in csv.DictReader(fh):
                timing[int(row["iteration"])] = float(row["optimization_seconds"])
    out = []
    with open(run_dir / "metrics.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            it = int(row["iteration"])
            out.append(IterationMetrics(
                iteration=it,
                timesteps=int(row["timesteps"]),
                mean_episode_reward=float(row["mean_episode_reward"]),
                surrogate_loss=float(row["surrogate_loss"]),
                value_loss=float(row["value_loss"]),
                observed_kl=float(row["observed_kl"]),
                eta=float(row["eta"]),
                clip_fraction=float(row["clip_fraction"]),
                optimization_seconds=timing.get(it, math.nan),
                update_count=int(row["update_count"]),
            ))
    return out


@dataclass
class TrainResult:
    metrics: list[IterationMetrics]
    state: TrainState
    checkpoint: Path | None = None
    simulation_seconds: float = 0.0


def train(config: TrainerConfig, run_dir=None, state: TrainState | None = None,
          callback=None) -> TrainResult:
    """Run ``config.n_iterations`` iterations; write files into ``run_dir`` if given."""
    from .checkpoint import save_checkpoint

    state = state or make_state(config)
    writer = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.txt").write_text(format_config(config))
        writer = MetricsWriter(run_dir)
    metrics = []
    sim = 0.0
    ckpt = None
    while state.iteration < config.n_iterations:
        try:
            m = train_iteration(state)
        except (PPOKFACError, FloatingPointError) as exc:
            raise TrainingError(state.iteration + 1, exc) from exc
        metrics.append(m)
        sim += state.simulation_seconds
        log.debug("iter %d t=%d R=%.2f kl=%.5f eta=%.4g", m.iteration, m.timesteps,
                  m.mean_episode_reward, m.observed_kl, m.eta)
        if writer is not None:
            writer.write(m, state.simulation_seconds, state.updates_last_iteration)
            every = config.checkpoint_every
            if every and m.iteration % every == 0:
                save_checkpoint(run_dir / "checkpoints" / f"iter_{m.iteration:06d}.npz", state)
        if callback is not None:
            callback(state, m)
    if run_dir is not None:
        ckpt = save_checkpoint(run_dir / "checkpoints" / "final.npz", state)
    return TrainResult(metrics, state, ckpt, sim)

