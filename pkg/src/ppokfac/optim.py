"""Optimizers: K-FAC natural gradient for actor and critic, and first-order baselines.

The K-FAC metric for a layer with augmented weight ``[W | b]`` is
``A kron G`` where ``A = E[a a^T]`` over layer inputs (with the homogeneous
coordinate) and ``G = E[g g^T]`` over pre-activation gradients. For the
actor, ``g`` comes from the log-density of actions re-sampled from the
current policy; for the critic it comes from a unit-variance Gaussian
observation model, which makes the block a Gauss-Newton approximation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteUpdate, ShapeMismatch
from .linalg import kron_solve, split_damping
from .nn import ForwardTrace, GaussianHead, Gradients, MlpParams, log_prob_grads, sample_action


@dataclass
class KroneckerFactors:
    A: list[np.ndarray]
    G: list[np.ndarray]
    update_count: int = 0

    @classmethod
    def zeros(cls, layer_sizes) -> "KroneckerFactors":
        sizes = tuple(layer_sizes)
        return cls([np.zeros((n + 1, n + 1)) for n in sizes[:-1]],
                   [np.zeros((n, n)) for n in sizes[1:]])

    def copy(self) -> "KroneckerFactors":
        return KroneckerFactors([a.copy() for a in self.A], [g.copy() for g in self.G],
                                self.update_count)


def batch_factors(trace: ForwardTrace, sampled_g: list[np.ndarray]):
    """Per-layer second moments ``a^T a / N`` and ``g^T g / N`` of one batch."""
    if len(sampled_g) != trace.depth:
        raise ShapeMismatch(f"{len(sampled_g)} gradient layers for a depth-{trace.depth} trace")
    a_hat, g_hat = [], []
    for a, g in zip(trace.inputs, sampled_g):
        if a.shape[0] != g.shape[0]:
            raise ShapeMismatch("activation and gradient batch sizes differ")
        n = a.shape[0]
        a_hat.append(a.T @ a / n)
        g_hat.append(g.T @ g / n)
    return a_hat, g_hat


def accumulate_factors(factors: KroneckerFactors, trace: ForwardTrace, sampled_g: list[np.ndarray],
                       decay: float) -> KroneckerFactors:
    """EMA update ``F <- decay * F + (1 - decay) * F_batch`` of every factor."""
    if not 0.0 <= decay < 1.0:
        raise ValueError("decay must lie in [0, 1)")
    a_hat, g_hat = batch_factors(trace, sampled_g)
    A, G = [], []
    for a_old, g_old, a_new, g_new in zip(factors.A, factors.G, a_hat, g_hat):
        if a_old.shape != a_new.shape or g_old.shape != g_new.shape:
            raise ShapeMismatch(f"factor shapes {a_old.shape}/{g_old.shape} vs batch "
                                f"{a_new.shape}/{g_new.shape}")
        A.append(decay * a_old + (1.0 - decay) * a_new)
        G.append(decay * g_old + (1.0 - decay) * g_new)
    return KroneckerFactors(A, G, factors.update_count + 1)


@dataclass(frozen=True)
class LrState:
    eta: float
    delta: float
    eta_min: float = 1e-5
    eta_max: float = 1.0
    history: tuple = ()   # (iteration, observed_kl, eta after adaptation)
    iteration: int = 0

    def __post_init__(self):
        if not (self.eta > 0 and self.delta > 0):
            raise ValueError("eta and delta must be positive")


def adapt_learning_rate(lr_state: LrState, observed_kl: float) -> LrState:
    """Trust-region schedule: shrink by 1.5 at KL >= 2 delta, grow by 1.5 at KL <= delta / 2."""
    if observed_kl < 0:
        raise ValueError("observed KL must be nonnegative")
    eta, delta = lr_state.eta, lr_state.delta
    if observed_kl >= 2 * delta:
        eta = eta / 1.5
    elif observed_kl <= delta / 2:
        eta = 1.5 * eta
    eta = min(max(eta, lr_state.eta_min), lr_state.eta_max)
    return replace(lr_state, eta=eta, iteration=lr_state.iteration + 1,
                   history=lr_state.history + ((lr_state.iteration, float(observed_kl), eta),))


def natural_direction(grads: Gradients, factors: KroneckerFactors, damping: float) -> list[np.ndarray]:
    """Per-layer ``(G + l_G I)^-1 grad (A + l_A I)^-1`` on augmented ``[dW | db]``."""
    if factors.update_count < 1:
        raise ValueError("factors have not been estimated yet")
    lam_a, lam_g = split_damping(damping)
    out = []
    for i, (A, G) in enumerate(zip(factors.A, factors.G)):
        out.append(kron_solve(grads.augmented(i), A, G, lam_a, lam_g))
    return out


def _apply_augmented(params: MlpParams, directions, eta: float) -> MlpParams:
    weights, biases = [], []
    for w, b, d in zip(params.weights, params.biases, directions):
        weights.append(w - eta * d[:, :-1])
        biases.append(b - eta * d[:, -1])
    new = MlpParams(weights, biases)
    if not new.is_finite():
        raise NonFiniteUpdate("K-FAC update produced non-finite parameters")
    return new


def kfac_step(params: MlpParams, grads: Gradients, factors: KroneckerFactors, damping: float,
              lr_state: LrState) -> MlpParams:
    """One natural-gradient descent step on the actor's mean network."""
    return _apply_augmented(params, natural_direction(grads, factors, damping), lr_state.eta)


def gauss_newton_critic_step(params: MlpParams, grads: Gradients, factors: KroneckerFactors,
                             damping: float, lr_state: LrState) -> MlpParams:
    """One Gauss-Newton step on the critic.

    Numerically the same preconditioning as ``kfac_step``; the difference is
    where the factors come from (see ``critic_sampled_g``).
    """
    return _apply_augmented(params, natural_direction(grads, factors, damping), lr_state.eta)


def log_std_natural_step(log_std: np.ndarray, grad: np.ndarray, eta: float, damping: float) -> np.ndarray:
    """Natural step for a state-independent log-std; its exact Fisher is ``2 I``."""
    new = log_std - eta * grad / (2.0 + damping)
    if not np.isfinite(new).all():
        raise NonFiniteUpdate("log_std update produced non-finite values")
    return new


def policy_sampled_g(head: GaussianHead, rng: np.random.Generator) -> np.ndarray:
    """Head gradient for actor factors: score of an action re-drawn from the policy.

    Using fresh samples instead of the rollout actions gives the true Fisher
    rather than the empirical one.
    """
    action = sample_action(head, rng)
    d_mean, _ = log_prob_grads(head, action)
    return d_mean


def critic_sampled_g(n: int, rng: np.random.Generator) -> np.ndarray:
    """Head gradient for critic factors.

    Under ``y ~ N(v, 1)`` the score ``d log p(y) / dv = y - v`` is a
    standard normal draw, independent of the prediction.
    """
    return rng.standard_normal((n, 1))


# --- first-order baselines -------------------------------------------------

@dataclass
class FirstOrderState:
    kind: str = "adam"          # "adam" or "sgd"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown first-order optimizer {self.kind!r}")


def first_order_step(params: list[np.ndarray], grads: list[np.ndarray], state: FirstOrderState,
                     lr: float) -> list[np.ndarray]:
    """Momentum SGD or Adam on a list of arrays. Mutates ``state``."""
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if state.kind == "sgd":
            state.m[i] = state.momentum * state.m[i] + g
            out.append(p - lr * state.m[i])
            continue
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / (1 - state.beta1 ** state.t)
        v_hat = state.v[i] / (1 - state.beta2 ** state.t)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    if not all(np.isfinite(p).all() for p in out):
        raise NonFiniteUpdate("first-order update produced non-finite parameters")
    return out


def params_to_list(net: MlpParams) -> list[np.ndarray]:
    return [x for pair in zip(net.weights, net.biases) for x in pair]


def list_to_params(arrays: list[np.ndarray]) -> MlpParams:
    return MlpParams(list(arrays[0::2]), list(arrays[1::2]))


def grads_to_list(grads: Gradients) -> list[np.ndarray]:
    return [x for pair in zip(grads.weights, grads.biases) for x in pair]
