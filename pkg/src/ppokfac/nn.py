"""Hand-written MLPs for the actor and critic.

The forward pass records every layer input (with a trailing homogeneous 1 so
the bias sits in the last weight column) and every pre-activation. Backward
returns parameter gradients of a batch-mean loss together with the
per-sample pre-activation gradients that K-FAC needs for its G factors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteOutput, ShapeMismatch

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class MlpParams:
    """Weights (out x in) and biases (out,) of a tanh MLP with a linear head."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeMismatch(f"layer {i} input {w.shape[1]} != previous output")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def augmented(self, i: int) -> np.ndarray:
        """Layer ``i`` as a single (out, in+1) matrix ``[W | b]``."""
        return np.hstack([self.weights[i], self.biases[i][:, None]])

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() and np.isfinite(b).all()
                   for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_flat(self, vec: np.ndarray) -> "MlpParams":
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(vec[pos:pos + b.size].copy())
            pos += b.size
        return MlpParams(weights, biases)


def init_mlp(layer_sizes, rng: np.random.Generator, output_gain: float = 1.0) -> MlpParams:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.

    The last layer is additionally multiplied by ``output_gain``.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeMismatch(f"bad layer sizes {sizes}")
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / math.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        if i == len(sizes) - 2:
            w = w * output_gain
        weights.append(w)
        biases.append(np.zeros(n_out))
    return MlpParams(weights, biases)


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray]    # (N, in+1), last column is 1
    preacts: list[np.ndarray]   # (N, out)

    @property
    def depth(self) -> int:
        return len(self.inputs)


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.layer_sizes[0]:
        raise ShapeMismatch(f"input width {x.shape[1]} != network input {params.layer_sizes[0]}")
    inputs, preacts = [], []
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(np.hstack([h, np.ones((h.shape[0], 1))]))
        s = h @ w.T + b
        preacts.append(s)
        h = s if i == last else np.tanh(s)
    if not np.isfinite(h).all():
        raise NonFiniteOutput("network output contains NaN or Inf")
    return h, ForwardTrace(inputs, preacts)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    preact_grads: list[np.ndarray] = field(default_factory=list)  # per-sample, (N, out)

    def augmented(self, i: int) -> np.ndarray:
        return np.hstack([self.weights[i], self.biases[i][:, None]])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])


def backward(params: MlpParams, trace: ForwardTrace, head_grad: np.ndarray) -> Gradients:
    """Backprop ``head_grad[n] = d loss_n / d output_n`` through the network.

    Returned weight/bias gradients are for the batch-mean loss
    ``(1/N) sum_n loss_n``; ``preact_grads`` hold the unaveraged per-sample
    ``d loss_n / d s_n`` for every layer.
    """
    if trace.depth != params.n_layers:
        raise ShapeMismatch(f"trace depth {trace.depth} != {params.n_layers} layers")
    g = np.atleast_2d(np.asarray(head_grad, dtype=np.float64))
    n = trace.inputs[0].shape[0]
    if g.shape != trace.preacts[-1].shape:
        raise ShapeMismatch(f"head gradient {g.shape} != output {trace.preacts[-1].shape}")
    n_layers = params.n_layers
    dws, dbs, gs = [None] * n_layers, [None] * n_layers, [None] * n_layers
    for i in reversed(range(n_layers)):
        gs[i] = g
        a = trace.inputs[i]
        dwa = g.T @ a / n
        dws[i] = dwa[:, :-1]
        dbs[i] = dwa[:, -1].copy()
        if i:
            # through tanh of the previous layer: h = a[:, :-1]
            h = a[:, :-1]
            g = (g @ params.weights[i]) * (1.0 - h * h)
    return Gradients(dws, dbs, gs)


# --- Gaussian policy -------------------------------------------------------

@dataclass
class GaussianHead:
    """Diagonal Gaussian over actions; ``mean`` is (N, d), ``log_std`` is (d,)."""

    mean: np.ndarray
    log_std: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def __getitem__(self, idx) -> "GaussianHead":
        return GaussianHead(self.mean[idx], self.log_std)


@dataclass
class GaussianPolicy:
    net: MlpParams
    log_std: np.ndarray

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.net.copy(), self.log_std.copy())

    @property
    def action_dim(self) -> int:
        return self.log_std.shape[0]


def init_policy(obs_dim, action_dim, hidden, rng, output_gain=0.01, log_std=0.0) -> GaussianPolicy:
    net = init_mlp((obs_dim, *hidden, action_dim), rng, output_gain=output_gain)
    return GaussianPolicy(net, np.full(action_dim, float(log_std)))


def init_value(obs_dim, hidden, rng, output_gain=1.0) -> MlpParams:
    return init_mlp((obs_dim, *hidden, 1), rng, output_gain=output_gain)


def forward_policy(policy: GaussianPolicy, states: np.ndarray) -> tuple[GaussianHead, ForwardTrace]:
    mean, trace = forward(policy.net, states)
    if mean.shape[1] != policy.action_dim:
        raise ShapeMismatch("network head width does not match log_std")
    return GaussianHead(mean, policy.log_std), trace


def forward_value(params: MlpParams, states: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    out, trace = forward(params, states)
    if out.shape[1] != 1:
        raise ShapeMismatch("value network must have a scalar head")
    return out[:, 0], trace


def log_prob(head: GaussianHead, action: np.ndarray) -> np.ndarray:
    action = np.asarray(action, dtype=np.float64)
    if action.shape[-1] != head.log_std.shape[-1]:
        raise ShapeMismatch("action dimension mismatch")
    z = (action - head.mean) / head.std
    return np.sum(-0.5 * z * z - head.log_std - 0.5 * LOG_2PI, axis=-1)


def log_prob_grads(head: GaussianHead, action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample derivatives of log_prob w.r.t. the mean and log_std."""
    var = np.exp(2.0 * head.log_std)
    diff = action - head.mean
    d_mean = diff / var
    d_log_std = diff * diff / var - 1.0
    return d_mean, d_log_std


def sample_action(head: GaussianHead, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(np.shape(head.mean))
    return head.mean + head.std * z


def kl_diag_gaussian(p: GaussianHead, q: GaussianHead) -> np.ndarray:
    """KL(p || q) per state, summed over action dimensions."""
    var_p = np.exp(2.0 * p.log_std)
    var_q = np.exp(2.0 * q.log_std)
    diff = p.mean - q.mean
    kl = (q.log_std - p.log_std) + (var_p + diff * diff) / (2.0 * var_q) - 0.5
    return np.sum(kl, axis=-1)


def entropy(head: GaussianHead) -> float:
    return float(np.sum(head.log_std + 0.5 * (LOG_2PI + 1.0)))
