"""Independent reference computations shared by the unit and acceptance suites.

Everything here is built from first principles (finite differences,
explicit matrices, ``np.linalg.solve``) rather than from the package's
Kronecker machinery.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ppokfac import nn
from ppokfac.optim import KroneckerFactors, accumulate_factors, gauss_newton_critic_step, kfac_step
from ppokfac.optim import LrState, policy_sampled_g
from ppokfac.rollout import RolloutBatch


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at flat vector ``x``."""
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# every network shape the gradient checks cover
NETWORK_SHAPES = [(3, 8, 8, 2), (4, 1), (2, 5, 1), (3, 6, 4, 5, 3), (1, 64, 64, 1)]


def backprop_fd_error(sizes, rng, n: int = 7, h: float = 1e-5) -> float:
    """Max per-coordinate relative error of ``nn.backward`` vs central differences.

    The loss mixes a linear and a squared-error term so that every head
    gradient depends on the output.
    """
    net = nn.init_mlp(sizes, rng, output_gain=1.0)
    net.biases = [0.3 * rng.standard_normal(b.shape) for b in net.biases]
    x = rng.standard_normal((n, sizes[0]))
    target = rng.standard_normal((n, sizes[-1]))
    coef = rng.standard_normal((n, sizes[-1]))

    def loss(theta):
        out, _ = nn.forward(net.with_flat(theta), x)
        return float(np.mean(np.sum(coef * out + 0.5 * (out - target) ** 2, axis=1)))

    out, trace = nn.forward(net, x)
    analytic = nn.backward(net, trace, coef + (out - target)).flat()
    numeric = fd_gradient(loss, net.flat(), h)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


def relative_error(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@dataclass
class FisherCase:
    kfac_update: np.ndarray
    explicit: np.ndarray          # (F + lam I)^-1 grad with F materialized
    damped_kron: np.ndarray       # ((A + lam I) kron (G + lam I))^-1 grad, materialized
    score_scale: float            # |d log pi / d mu| of the re-sampled action
    input_scale: float            # |[x, 1]|


def actor_fisher_case(seed: int, obs_dim: int = 3, lam: float = 1e-8) -> FisherCase:
    """One linear policy layer, one state, 1-d action, step size 1.

    The
    K-FAC side uses damping ``lam`` on each factor; the explicit side solves
    ``(F + lam I) x = grad`` with ``F`` the outer product of the score of the
    re-sampled action. For a linear mean ``mu = W x + b`` the score and the
    loss gradient have the closed form ``(y - mu) / sigma^2 * [x, 1]``.
    """
    rng = np.random.default_rng(seed)
    net = nn.init_mlp((obs_dim, 1), rng)
    net = net.with_flat(rng.standard_normal(net.flat().size))
    log_std = np.array([rng.uniform(-0.3, 0.3)])
    policy = nn.GaussianPolicy(net, log_std)
    state = rng.standard_normal((1, obs_dim))
    head, trace = nn.forward_policy(policy, state)

    g_head = policy_sampled_g(head, np.random.default_rng(seed + 1))
    sampled = nn.backward(net, trace, g_head).preact_grads
    factors = accumulate_factors(KroneckerFactors.zeros(net.layer_sizes), trace, sampled, 0.0)

    # a rollout action and a surrogate-like loss -w * log pi(action)
    sigma2 = float(np.exp(2 * log_std[0]))
    action = head.mean + np.sqrt(sigma2) * rng.standard_normal((1, 1))
    w = rng.standard_normal()
    d_mean, _ = nn.log_prob_grads(head, action)
    grads = nn.backward(net, trace, -w * d_mean)
    new = kfac_step(net, grads, factors, lam * lam, LrState(1.0, 0.002, eta_max=1.0))
    kfac_update = net.flat() - new.flat()

    # same generator seed -> the same re-sampled action
    resampled = nn.sample_action(head, np.random.default_rng(seed + 1))
    x_aug = np.append(state[0], 1.0)
    mu = float(state[0] @ net.weights[0][0] + net.biases[0][0])
    score = (float(resampled[0, 0]) - mu) / sigma2 * x_aug
    grad = -w * (float(action[0, 0]) - mu) / sigma2 * x_aug
    F = np.outer(score, score)
    eye = np.eye(F.shape[0])
    explicit = np.linalg.solve(F + lam * eye, grad)
    g = score[-1]   # the homogeneous coordinate carries the bare score
    damped = np.linalg.solve(np.kron(np.outer(x_aug, x_aug) + lam * eye, g * g + lam), grad)
    return FisherCase(kfac_update, explicit, damped, abs(g), float(np.linalg.norm(x_aug)))


def critic_gauss_newton_case(seed: int, obs_dim: int = 3, lam: float = 1e-8):
    """Scalar linear critic, one state: K-FAC block vs explicit ``J^T J``.

    Returns ``(kfac_block, JtJ, kfac_update, explicit_update)``. Factors are
    estimated with a unit head gradient so that ``G = 1`` and the
    Gauss-Newton block is ``J^T J`` with ``J = [x, 1]``.
    """
    rng = np.random.default_rng(seed)
    net = nn.init_mlp((obs_dim, 1), rng)
    net = net.with_flat(rng.standard_normal(net.flat().size))
    state = rng.standard_normal((1, obs_dim))
    target = rng.standard_normal()
    v, trace = nn.forward_value(net, state)
    sampled = nn.backward(net, trace, np.ones((1, 1))).preact_grads
    factors = accumulate_factors(KroneckerFactors.zeros(net.layer_sizes), trace, sampled, 0.0)
    grads = nn.backward(net, trace, (v - target)[:, None])
    new = gauss_newton_critic_step(net, grads, factors, lam * lam, LrState(1.0, 0.002, eta_max=1.0))
    kfac_update = net.flat() - new.flat()

    J = np.append(state[0], 1.0)[None, :]
    JtJ = J.T @ J
    loss_grad = (float(v[0]) - target) * J[0]
    explicit = np.linalg.solve(JtJ + lam * np.eye(JtJ.shape[0]), loss_grad)
    block = np.kron(factors.A[0], factors.G[0])
    return block, JtJ, kfac_update, explicit


def expected_eta(eta: Fraction, delta: Fraction, kl: Fraction,
                 eta_min: Fraction, eta_max: Fraction) -> Fraction:
    """The step-size schedule in exact rational arithmetic."""
    if kl >= 2 * delta:
        eta = eta / Fraction(3, 2)
    elif kl <= delta / 2:
        eta = Fraction(3, 2) * eta
    return min(max(eta, eta_min), eta_max)


def lr_transition_table():
    """20 (eta, delta, kl) cases covering all branches and their boundaries."""
    d = Fraction(1, 500)   # 0.002
    e = Fraction(3, 100)   # 0.03
    kls = [Fraction(0), d / 4, d / 2, d / 2 + Fraction(1, 10**9), d * Fraction(3, 4), d,
           Fraction(3, 2) * d, 2 * d - Fraction(1, 10**9), 2 * d, 3 * d, 10 * d, Fraction(1)]
    cases = [(e, d, kl) for kl in kls]
    cases += [(Fraction(9, 10), d, Fraction(0)),           # grow, hits eta_max
              (Fraction(1, 100000), d, d * 5),                 # shrink, hits eta_min
              (Fraction(1, 10), Fraction(1, 100), Fraction(1, 200)),
              (Fraction(1, 10), Fraction(1, 100), Fraction(1, 50)),
              (Fraction(1, 10), Fraction(1, 100), Fraction(1, 100)),
              (Fraction(1, 2), Fraction(1, 1000), Fraction(1, 4000)),
              (Fraction(1, 2), Fraction(1, 1000), Fraction(7, 1000)),
              (Fraction(1, 20), Fraction(1, 250), Fraction(1, 330))]
    return cases


def random_batch(rng, n=64, obs_dim=3, act_dim=2, policy=None):
    """A batch whose recorded log-probs come from ``policy`` itself (ratio 1)."""
    policy = policy or nn.init_policy(obs_dim, act_dim, (8,), rng, output_gain=1.0,
                                      log_std=rng.uniform(-1, 0.5))
    states = rng.standard_normal((n, obs_dim))
    head, _ = nn.forward_policy(policy, states)
    actions = nn.sample_action(head, rng)
    z = np.zeros(n)
    b = RolloutBatch(states, actions, z, z.astype(bool), z.astype(bool), z.astype(bool),
                     nn.log_prob(head, actions), head.mean, policy.log_std.copy(), z, z)
    b.advantages = rng.standard_normal(n)
    b.returns = rng.standard_normal(n)
    return policy, b
