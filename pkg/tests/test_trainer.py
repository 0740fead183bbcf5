import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from ppokfac import nn
from ppokfac.config import TrainerConfig
from ppokfac.errors import ConfigError, NonFiniteUpdate, TrainingError
from ppokfac.trainer import (CSV_METRIC_FIELDS, clip_active, clipped_surrogate, make_state, mean_kl,
                             policy_ratio, read_metrics, surrogate_loss_and_grads, train,
                             train_iteration, value_loss)

from oracles import random_batch

FAST = dict(batch_size=256, total_timesteps=512, hidden_sizes=(16,), k_steps=8)


# --- objective pieces ------------------------------------------------------------

@pytest.mark.parametrize("ratio, adv, expected", [(1.0, 5.0, 5.0), (1.5, 1.0, 1.2), (0.5, -1.0, -0.8)])
def test_clipped_surrogate_examples(ratio, adv, expected):
    assert clipped_surrogate(ratio, adv, 0.2) == pytest.approx(expected, abs=1e-15)


def test_policy_ratio_examples(rng):
    assert policy_ratio(-1.3, -1.3) == 1.0
    assert policy_ratio(np.log(2.0) - 4.0, -4.0) == pytest.approx(2.0, rel=1e-15)
    mu_new, mu_old, s_new, s_old = rng.standard_normal(4)
    s_new, s_old = np.exp(s_new), np.exp(s_old)
    a = rng.standard_normal()
    new = nn.GaussianHead(np.array([[mu_new]]), np.log([s_new]))
    old = nn.GaussianHead(np.array([[mu_old]]), np.log([s_old]))
    r = policy_ratio(nn.log_prob(new, np.array([[a]])), nn.log_prob(old, np.array([[a]])))
    direct = norm.pdf(a, mu_new, s_new) / norm.pdf(a, mu_old, s_old)
    assert r[0] == pytest.approx(direct, rel=1e-10)


def test_value_loss_examples(rng):
    assert value_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert value_loss([0.0, 0.0], [2.0, -2.0]) == 2.0
    p, r = rng.standard_normal(17), rng.standard_normal(17)
    total = 0.0
    for x, y in zip(p, r):
        total += 0.5 * (x - y) ** 2
    assert value_loss(p, r) == pytest.approx(total / 17, rel=1e-14)


@settings(max_examples=200, derandomize=True)
@given(r=st.floats(0.01, 5.0), a=st.floats(-10, 10), eps=st.floats(0.01, 0.99))
def test_clipped_objective_is_pessimistic(r, a, eps):
    obj = clipped_surrogate(r, a, eps)
    assert obj <= r * a + 1e-12
    if clip_active(r, a, eps):
        assert obj == pytest.approx(np.clip(r, 1 - eps, 1 + eps) * a)
    else:
        assert obj == pytest.approx(r * a)


def test_surrogate_gradient_matches_finite_differences(rng):
    policy, b = random_batch(rng, n=32)
    # move away from the snapshot so that some samples clip
    policy = nn.GaussianPolicy(policy.net.with_flat(policy.net.flat() + 0.3 * rng.standard_normal(
        policy.net.flat().size)), policy.log_std + 0.1)
    pl = surrogate_loss_and_grads(policy, b, 0.2)
    assert 0 < pl.clip_fraction < 1
    grads = nn.backward(policy.net, pl.trace, pl.mean_grad).flat()
    theta = policy.net.flat()

    def loss(th, log_std=policy.log_std):
        return surrogate_loss_and_grads(nn.GaussianPolicy(policy.net.with_flat(th), log_std), b, 0.2).loss

    h = 1e-6
    for i in rng.choice(theta.size, 15, replace=False):
        e = np.zeros_like(theta)
        e[i] = h
        fd = (loss(theta + e) - loss(theta - e)) / (2 * h)
        assert grads[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)
    for d in range(policy.log_std.size):
        e = np.zeros_like(policy.log_std)
        e[d] = h
        fd = (loss(theta, policy.log_std + e) - loss(theta, policy.log_std - e)) / (2 * h)
        assert pl.log_std_grad[d] == pytest.approx(fd, rel=1e-5, abs=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_first_update_gradient_is_vanilla_surrogate(seed):
    rng = np.random.default_rng(seed)
    policy, b = random_batch(rng)
    pl = surrogate_loss_and_grads(policy, b, 0.2)
    d_mean, d_log_std = nn.log_prob_grads(pl.head, b.actions)
    np.testing.assert_allclose(pl.mean_grad, -b.advantages[:, None] * d_mean, rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(pl.log_std_grad, -(b.advantages[:, None] * d_log_std).mean(axis=0),
                               rtol=1e-13, atol=1e-15)
    assert pl.clip_fraction == 0.0
    assert mean_kl(b, policy) == 0.0


# --- update bookkeeping --------------------------------------------------------------

def test_default_update_counts():
    assert TrainerConfig().updates_per_iteration == 2
    assert TrainerConfig(optimizer="first_order").updates_per_iteration == 320


@settings(max_examples=100, derandomize=True)
@given(batch=st.integers(1, 5000), mb=st.integers(1, 512), epochs=st.integers(1, 12))
def test_update_count_arithmetic(batch, mb, epochs):
    fo = TrainerConfig(optimizer="first_order", batch_size=batch, minibatch_size=mb, epochs_n=epochs,
                       k_steps=1)
    assert fo.updates_per_iteration == epochs * math.ceil(batch / mb)
    assert TrainerConfig(batch_size=batch, epochs_n=epochs, k_steps=1).updates_per_iteration == epochs


@pytest.mark.parametrize("optimizer, updates", [("kfac", 2), ("first_order", 320)])
def test_iteration_update_counters(optimizer, updates):
    cfg = TrainerConfig(optimizer=optimizer, total_timesteps=4096, hidden_sizes=(16,))
    result = train(cfg)
    assert [m.update_count for m in result.metrics] == [updates, 2 * updates]
    assert result.state.update_count == 2 * updates


def test_clip_fraction_zero_on_first_update():
    state = make_state(TrainerConfig(**FAST, epochs_n=4))
    for _ in range(3):
        train_iteration(state)
        assert state.update_clip_fractions[0] == 0.0
        assert all(0.0 <= c <= 1.0 for c in state.update_clip_fractions)
        assert len(state.update_kls) == 4


def test_kl_reference_is_iteration_start():
    state = make_state(TrainerConfig(**FAST))
    train_iteration(state)
    b = state.last_batch
    assert mean_kl(b, state.theta_old) == 0.0
    assert state.update_kls[-1] == pytest.approx(mean_kl(b, state.policy), rel=1e-12)


def test_learning_rate_adapts_once_per_update():
    state = make_state(TrainerConfig(**FAST, epochs_n=3))
    for _ in range(2):
        train_iteration(state)
    assert len(state.lr_state.history) == 6
    assert [h[1] for h in state.lr_state.history[-3:]] == state.update_kls


def test_kl_early_stop():
    cfg = TrainerConfig(**FAST, epochs_n=10, kl_early_stop=True, delta=1e-7, eta0=0.5)
    state = make_state(cfg)
    train_iteration(state)
    assert state.updates_last_iteration < 10
    assert state.update_kls[-1] > 4 * cfg.delta


def test_first_order_learning_rate_decays():
    cfg = TrainerConfig(**FAST, optimizer="first_order", epochs_n=1, minibatch_size=128)
    result = train(cfg)
    assert [m.eta for m in result.metrics] == [3e-4, 1.5e-4]


# --- loop --------------------------------------------------------------------

@pytest.mark.parametrize("total, iterations", [(256, 1), (255, 0), (1000, 3)])
def test_iteration_count(total, iterations):
    result = train(TrainerConfig(**{**FAST, "total_timesteps": total}))
    assert len(result.metrics) == iterations


def test_timesteps_monotone_and_exact():
    result = train(TrainerConfig(**{**FAST, "total_timesteps": 1024}))
    assert [m.timesteps for m in result.metrics] == [256, 512, 768, 1024]
    assert [m.iteration for m in result.metrics] == [1, 2, 3, 4]


@pytest.mark.parametrize("optimizer", ["kfac", "first_order"])
def test_deterministic_metrics(tmp_path, optimizer):
    cfg = TrainerConfig(**FAST, optimizer=optimizer, env_id="pointmass", epochs_n=2)
    train(cfg, tmp_path / "a")
    train(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_run_directory_contents(tmp_path):
    cfg = TrainerConfig(**FAST, checkpoint_every=1)
    result = train(cfg, tmp_path)
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert header.split(",") == CSV_METRIC_FIELDS
    assert (tmp_path / "timing.csv").exists()
    assert (tmp_path / "config.txt").exists()
    assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == [
        "final.npz", "iter_000001.npz", "iter_000002.npz"]
    assert result.checkpoint == tmp_path / "checkpoints" / "final.npz"


def test_metrics_round_trip(tmp_path):
    result = train(TrainerConfig(**FAST), tmp_path)
    back = read_metrics(tmp_path)
    for m, r in zip(result.metrics, back):
        for name in CSV_METRIC_FIELDS:
            a, b = getattr(m, name), getattr(r, name)
            assert a == b or (isinstance(a, float) and math.isnan(a) and math.isnan(b))
        assert r.optimization_seconds == pytest.approx(m.optimization_seconds)


def test_errors_carry_iteration(monkeypatch):
    import ppokfac.trainer as trainer

    calls = {"n": 0}
    real = trainer.kfac_update

    def flaky(state, batch):
        calls["n"] += 1
        if state.iteration == 1:
            raise NonFiniteUpdate("boom")
        return real(state, batch)

    monkeypatch.setattr(trainer, "kfac_update", flaky)
    with pytest.raises(TrainingError) as info:
        train(TrainerConfig(**FAST))
    assert info.value.iteration == 2
    assert isinstance(info.value.cause, NonFiniteUpdate)


@pytest.mark.parametrize("field, value", [
    ("clip_epsilon", 1.5), ("gamma", 1.0), ("batch_size", 0), ("optimizer", "lbfgs"),
    ("env_id", "cartpole"), ("ema_decay", 1.0), ("eta0", 2.0), ("k_steps", 5000)])
def test_config_validation(field, value):
    with pytest.raises(ConfigError) as info:
        TrainerConfig(**{field: value})
    assert info.value.field == field
