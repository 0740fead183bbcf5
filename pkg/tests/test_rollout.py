import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppokfac import nn
from ppokfac.envs import EnvPool
from ppokfac.rollout import RolloutBatch, RunningMeanStd, collect, compute_advantages, dump_batch


def synthetic_batch(n, rng, p_done=0.1, p_terminal=0.5, n_segments=1):
    dones = rng.uniform(size=n) < p_done
    terminals = dones & (rng.uniform(size=n) < p_terminal)
    seg_ends = np.zeros(n, dtype=bool)
    cuts = np.sort(rng.choice(np.arange(n - 1), size=n_segments - 1, replace=False)) if n_segments > 1 else []
    seg_ends[list(cuts)] = True
    seg_ends[-1] = True
    boot = np.where((dones & ~terminals) | (seg_ends & ~dones), rng.standard_normal(n), 0.0)
    return RolloutBatch(
        states=np.zeros((n, 1)), actions=np.zeros((n, 1)), rewards=rng.standard_normal(n),
        dones=dones, terminals=terminals, seg_ends=seg_ends, old_log_probs=np.zeros(n),
        old_means=np.zeros((n, 1)), old_log_std=np.zeros(1), values=rng.standard_normal(n),
        bootstrap_values=boot)


def reference_advantages(b, gamma, k):
    """Explicit per-index loop."""
    n = len(b.rewards)
    out = np.zeros(n)
    for t in range(n):
        g = 0.0
        for i in range(k):
            j = t + i
            g += gamma ** i * b.rewards[j]
            if b.terminals[j]:
                g += gamma ** (i + 1) * 0.0
                break
            if b.dones[j] or b.seg_ends[j]:
                g += gamma ** (i + 1) * b.bootstrap_values[j]
                break
            if i == k - 1:
                g += gamma ** (i + 1) * b.values[j + 1]
        out[t] = g - b.values[t]
    return out


def test_gamma_zero(rng):
    b = compute_advantages(synthetic_batch(50, rng), gamma=0.0, k=5, normalize=False)
    np.testing.assert_array_equal(b.advantages, b.rewards - b.values)


def test_one_step_td():
    b = RolloutBatch(np.zeros((1, 1)), np.zeros((1, 1)), np.array([1.5]), np.array([False]),
                     np.array([False]), np.array([True]), np.zeros(1), np.zeros((1, 1)), np.zeros(1),
                     np.array([0.4]), np.array([2.0]))
    compute_advantages(b, gamma=0.9, k=1, normalize=False)
    assert b.advantages[0] == pytest.approx(1.5 + 0.9 * 2.0 - 0.4)


def test_three_step_episode_hand_sum():
    b = RolloutBatch(np.zeros((3, 1)), np.zeros((3, 1)), np.array([1.0, 2.0, 3.0]),
                     np.array([False, False, True]), np.array([False, False, True]),
                     np.array([False, False, True]), np.zeros(3), np.zeros((3, 1)), np.zeros(1),
                     np.zeros(3), np.zeros(3))
    compute_advantages(b, gamma=0.9, k=3, normalize=False)
    assert b.advantages[0] == pytest.approx(1 + 1.8 + 2.43, abs=1e-12)
    np.testing.assert_allclose(b.returns, [5.23, 2 + 2.7, 3.0])


@settings(max_examples=60, deadline=None, derandomize=True)
@given(n=st.integers(1, 120), k=st.integers(1, 40), gamma=st.floats(0.0, 0.999),
       seed=st.integers(0, 10_000), segs=st.integers(1, 4))
def test_matches_reference_exactly(n, k, gamma, seed, segs):
    k = min(k, n)
    rng = np.random.default_rng(seed)
    b = synthetic_batch(n, rng, n_segments=min(segs, n))
    compute_advantages(b, gamma, k, normalize=False)
    assert np.array_equal(b.advantages, reference_advantages(b, gamma, k))
    assert np.array_equal(b.returns, b.advantages + b.values)


def effective_horizon(b, t, k):
    for i in range(k):
        j = t + i
        if b.dones[j] or b.seg_ends[j]:
            return i + 1, not b.terminals[j]
    return k, True


@settings(max_examples=40, deadline=None, derandomize=True)
@given(seed=st.integers(0, 10_000), c=st.floats(-10, 10), k=st.integers(1, 16))
def test_constant_value_shift_identity(seed, c, k):
    rng = np.random.default_rng(seed)
    gamma = 0.95
    b = synthetic_batch(60, rng, n_segments=2)
    base = compute_advantages(b, gamma, k, normalize=False).advantages.copy()
    b.values = b.values + c
    boot_mask = (b.dones & ~b.terminals) | (b.seg_ends & ~b.dones)
    b.bootstrap_values = np.where(boot_mask, b.bootstrap_values + c, 0.0)
    shifted = compute_advantages(b, gamma, k, normalize=False).advantages
    for t in range(60):
        m, bootstrapped = effective_horizon(b, t, k)
        expected = base[t] + c * (gamma ** m * bootstrapped - 1)
        assert shifted[t] == pytest.approx(expected, abs=1e-9)


def test_normalization(rng):
    b = compute_advantages(synthetic_batch(500, rng), 0.99, 32, normalize=True)
    assert abs(b.advantages.mean()) < 1e-6
    assert abs(b.advantages.std() - 1.0) < 1e-6


def test_k_out_of_range(rng):
    with pytest.raises(ValueError):
        compute_advantages(synthetic_batch(10, rng), 0.9, 11)


def make_nets(env_id, seed=0, n_envs=1):
    pool = EnvPool.make(env_id, n_envs, seed)
    r = np.random.default_rng(seed)
    policy = nn.init_policy(pool.spec.obs_dim, pool.spec.action_dim, (16,), r)
    value = nn.init_value(pool.spec.obs_dim, (16,), r)
    return pool, policy, value


def test_collect_single_transition():
    pool, policy, value = make_nets("pendulum")
    b = collect(policy, value, pool, 1, np.random.default_rng(0))
    assert len(b) == 1
    assert np.isfinite(b.values).all() and np.isfinite(b.old_log_probs).all()
    assert b.seg_ends[0] and not b.dones[0]
    v, _ = nn.forward_value(value, b.states)
    assert b.values[0] == v[0]


@pytest.mark.parametrize("n_envs", [1, 3])
def test_collect_deterministic(n_envs):
    def run():
        pool, policy, value = make_nets("pointmass", seed=4, n_envs=n_envs)
        norm = RunningMeanStd(pool.spec.obs_dim)
        b1 = collect(policy, value, pool, 300, np.random.default_rng(1), norm)
        b2 = collect(policy, value, pool, 300, np.random.default_rng(2), norm)
        return b1.states.tobytes() + b2.actions.tobytes() + b2.rewards.tobytes()

    assert run() == run()


def test_episode_boundary_count():
    pool, policy, value = make_nets("pendulum")
    b = collect(policy, value, pool, 2048, np.random.default_rng(0))
    expected = 2048 // pool.spec.max_episode_steps
    assert abs(len(b.episode_ends) - expected) <= 1
    assert len(b.episode_returns) == len(b.episode_ends)
    # every cut is bootstrapped from the value of the next state
    assert np.all(b.bootstrap_values[b.dones] != 0.0)


def test_log_probs_recorded_under_current_policy():
    pool, policy, value = make_nets("lqr")
    b = collect(policy, value, pool, 64, np.random.default_rng(0))
    head, _ = nn.forward_policy(policy, b.states)
    np.testing.assert_allclose(b.old_log_probs, nn.log_prob(head, b.actions), rtol=0, atol=1e-13)
    np.testing.assert_allclose(b.old_means, head.mean, rtol=0, atol=1e-12)


def test_episodes_continue_across_batches():
    pool, policy, value = make_nets("pendulum")
    rng = np.random.default_rng(0)
    collect(policy, value, pool, 150, rng)
    b = collect(policy, value, pool, 100, rng)
    # the first episode was 150 steps in, so it ends 50 steps into the second batch
    assert b.episode_ends[0] == 49


def test_multi_env_segments():
    pool, policy, value = make_nets("pendulum", n_envs=3)
    b = collect(policy, value, pool, 100, np.random.default_rng(0))
    assert np.flatnonzero(b.seg_ends).tolist() == [33, 66, 99]


def test_running_mean_std_matches_numpy(rng):
    x = rng.standard_normal((1000, 3)) * [1, 5, 0.1] + [2, -1, 0]
    rms = RunningMeanStd(3)
    for chunk in np.array_split(x, 37):
        rms.update(chunk)
    np.testing.assert_allclose(rms.mean, x.mean(axis=0), rtol=1e-10)
    np.testing.assert_allclose(rms.var, x.var(axis=0), rtol=1e-10)


def test_dump_batch(tmp_path):
    pool, policy, value = make_nets("lqr")
    b = compute_advantages(collect(policy, value, pool, 10, np.random.default_rng(0)), 0.99, 3)
    dump_batch(tmp_path / "b.csv", b)
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0].endswith("reward,done,advantage,return")
    assert len(lines) == 11
