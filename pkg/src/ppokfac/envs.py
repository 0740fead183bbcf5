"""Desk-scale continuous-control tasks.

Three seedable environments stand in for MuJoCo:

``pendulum``
    Swing-up of a rod pendulum (angle 0 is upright). Observation
    ``(cos th, sin th, th_dot)``, torque in [-2, 2], 200-step episodes,
    reward ``-(th^2 + 0.1 th_dot^2 + 0.001 u^2)`` with ``th`` wrapped to
    [-pi, pi). Initial ``th ~ U(-pi, pi)``, ``th_dot ~ U(-1, 1)``.
``pointmass``
    2-d double integrator with viscous drag driven toward a random goal.
    Observation ``(p - goal, v)``, force in [-1, 1]^2, 100-step episodes,
    reward ``-|p - goal| - 0.01 |u|^2``; the episode terminates early once
    ``|p - goal| < 0.05`` and ``|v| < 0.05``.
``lqr``
    Discrete-time linear system ``x' = A x + B u + w`` with 4 states, 2
    inputs and Gaussian process noise, reward ``-(x'Qx + u'Ru)`` and
    200-step episodes. ``lqr_optimal`` gives the exact optimum.

The physical tasks integrate with semi-implicit Euler at ``DT = 0.05``.
Observation normalization is left to the trainer.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NoConvergence, NonFiniteState

DT = 0.05


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    obs_dim: int
    action_dim: int
    max_episode_steps: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    reward_bounds: tuple[float, float]

    def __post_init__(self):
        if self.obs_dim < 1 or self.action_dim < 1 or self.max_episode_steps < 1:
            raise ValueError("dimensions and episode length must be positive")
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ValueError("action bounds must have one entry per action dimension")
        if any(lo >= hi for lo, hi in zip(self.action_low, self.action_high)):
            raise ValueError("action bounds need lower < upper")


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool
    # done because a terminal set was entered (no bootstrap), not a time limit
    terminal: bool = False
    action_clipped: bool = False

    @property
    def truncated(self) -> bool:
        return self.done and not self.terminal


class Env:
    spec: EnvSpec

    def __init__(self):
        self.rng = np.random.default_rng(0)
        self.steps = 0

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.steps = 0
        self._reset()
        return self.observe()

    def step(self, action) -> StepResult:
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        low = np.asarray(self.spec.action_low)
        high = np.asarray(self.spec.action_high)
        clipped = np.clip(action, low, high)
        reward, terminal = self._advance(clipped)
        self.steps += 1
        obs = self.observe()
        if not (np.isfinite(obs).all() and math.isfinite(reward)):
            raise NonFiniteState(f"{self.spec.env_id}: state blew up at step {self.steps}")
        done = terminal or self.steps >= self.spec.max_episode_steps
        return StepResult(obs, float(reward), bool(done), bool(terminal),
                          bool(np.any(clipped != action)))

    def _reset(self):
        raise NotImplementedError

    def _advance(self, action) -> tuple[float, bool]:
        raise NotImplementedError

    def observe(self) -> np.ndarray:
        raise NotImplementedError


def angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


class Pendulum(Env):
    """Rod pendulum, ``I th'' = (m g l / 2) sin th - b th' + u`` with ``I = m l^2 / 3``."""

    g = 10.0
    m = 1.0
    length = 1.0
    damping = 0.05
    max_speed = 8.0
    max_torque = 2.0
    # mean 200-step return of the energy-pumping + PD controller in tests/test_envs.py
    NEAR_OPTIMAL_RETURN = -167.0

    spec = EnvSpec("pendulum", 3, 1, 200, (-2.0,), (2.0,),
                   (-(math.pi ** 2 + 0.1 * 8.0 ** 2 + 0.001 * 4.0), 0.0))

    def __init__(self):
        super().__init__()
        self.state = np.array([math.pi, 0.0])

    @property
    def inertia(self):
        return self.m * self.length ** 2 / 3.0

    def _reset(self):
        self.state = np.array([self.rng.uniform(-np.pi, np.pi), self.rng.uniform(-1.0, 1.0)])

    def observe(self):
        th, thdot = self.state
        return np.array([math.cos(th), math.sin(th), thdot])

    def energy(self, state=None) -> float:
        th, thdot = self.state if state is None else state
        return 0.5 * self.inertia * thdot ** 2 + 0.5 * self.m * self.g * self.length * math.cos(th)

    def _advance(self, action):
        th, thdot = self.state
        u = float(action[0])
        cost = angle_normalize(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2
        torque = 0.5 * self.m * self.g * self.length * math.sin(th) - self.damping * thdot + u
        thdot = thdot + DT * torque / self.inertia
        thdot = min(max(thdot, -self.max_speed), self.max_speed)
        th = th + DT * thdot
        self.state = np.array([th, thdot])
        return -cost, False


class PointMass(Env):
    drag = 0.5
    arena = 2.0
    goal_radius = 0.05

    spec = EnvSpec("pointmass", 4, 2, 100, (-1.0, -1.0), (1.0, 1.0),
                   (-(2 * math.sqrt(2) * 3.0 / 2 + 0.02), 0.0))

    # initial obs (p - goal, v): mean zero, p - goal components have
    # variance 2/3 (difference of two U(-1, 1))
    INIT_OBS_MEAN = np.zeros(4)
    INIT_OBS_STD = np.array([math.sqrt(2 / 3), math.sqrt(2 / 3), 0.0, 0.0])

    def __init__(self):
        super().__init__()
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.goal = np.zeros(2)

    def _reset(self):
        self.pos = self.rng.uniform(-1.0, 1.0, size=2)
        self.vel = np.zeros(2)
        self.goal = self.rng.uniform(-1.0, 1.0, size=2)

    def observe(self):
        return np.concatenate([self.pos - self.goal, self.vel])

    def _advance(self, action):
        dist = float(np.linalg.norm(self.pos - self.goal))
        cost = dist + 0.01 * float(action @ action)
        self.vel = self.vel + DT * (action - self.drag * self.vel)
        self.pos = self.pos + DT * self.vel
        hit = np.abs(self.pos) > self.arena
        if hit.any():
            self.pos = np.clip(self.pos, -self.arena, self.arena)
            self.vel = np.where(hit, 0.0, self.vel)
        reached = (np.linalg.norm(self.pos - self.goal) < self.goal_radius
                   and np.linalg.norm(self.vel) < self.goal_radius)
        return -cost, bool(reached)


@dataclass
class LqrSystem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    noise_std: float = 0.0

    @property
    def W(self) -> np.ndarray:
        return self.noise_std ** 2 * np.eye(self.A.shape[0])


def default_lqr_system() -> LqrSystem:
    """Two damped masses on springs, coupled, each pushed by its own actuator.

    Zero-order-hold discretization with a 0.1 time-unit sample period.
    """
    dt = 0.1
    k, c, kc = 1.0, 0.2, 0.5
    Ac = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-(k + kc), -c, kc, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [kc, 0.0, -(k + kc), -c],
    ])
    Bc = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    M = np.zeros((6, 6))
    M[:4, :4] = Ac
    M[:4, 4:] = Bc
    E = scipy.linalg.expm(M * dt)
    return LqrSystem(E[:4, :4], E[:4, 4:], np.eye(4), 0.1 * np.eye(2), noise_std=0.2)


class Lqr(Env):
    state_limit = 10.0
    init_radius = 1.0

    def __init__(self, system: LqrSystem | None = None, max_episode_steps: int = 200,
                 action_limit: float = 5.0):
        super().__init__()
        self.system = system or default_lqr_system()
        n, m = self.system.B.shape
        self.x = np.zeros(n)
        xmax = np.full(n, self.state_limit)
        umax = np.full(m, action_limit)
        worst = float(xmax @ self.system.Q @ xmax + umax @ self.system.R @ umax)
        self.spec = EnvSpec("lqr", n, m, max_episode_steps,
                            tuple(-umax), tuple(umax), (-abs(worst) * 1.0, 0.0))

    def _reset(self):
        n = self.system.A.shape[0]
        # uniform in the ball of radius init_radius
        d = self.rng.standard_normal(n)
        d /= np.linalg.norm(d)
        self.x = d * self.init_radius * self.rng.uniform() ** (1.0 / n)

    def observe(self):
        return self.x.copy()

    def _advance(self, action):
        s = self.system
        cost = float(self.x @ s.Q @ self.x + action @ s.R @ action)
        noise = s.noise_std * self.rng.standard_normal(self.x.shape[0])
        self.x = np.clip(s.A @ self.x + s.B @ action + noise, -self.state_limit, self.state_limit)
        return -cost, False


def lqr_optimal(system: LqrSystem | Lqr, tol: float = 1e-10, max_iter: int = 100_000):
    """Solve the discrete algebraic Riccati equation by value iteration.

    Returns ``(K, J, P)`` where ``u = -K x`` is optimal and ``J = tr(P W)``
    is the optimal long-run average cost per step under process noise ``W``.
    """
    if isinstance(system, Lqr):
        system = system.system
    A, B, Q, R = system.A, system.B, system.Q, system.R
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ (A - B @ K)
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) < tol:
            P = P_next
            K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return K, float(np.trace(P @ system.W)), P
        if not np.isfinite(P_next).all():
            break
        P = P_next
    raise NoConvergence(f"Riccati iteration did not converge in {max_iter} iterations")


def linear_gain_cost(system: LqrSystem, K: np.ndarray) -> float:
    """Average cost per step of ``u = -K x``; inf if the closed loop is unstable."""
    Acl = system.A - system.B @ K
    if np.max(np.abs(np.linalg.eigvals(Acl))) >= 1.0:
        return math.inf
    P = scipy.linalg.solve_discrete_lyapunov(Acl.T, system.Q + K.T @ system.R @ K)
    return float(np.trace(P @ system.W))


ENV_REGISTRY = {
    "pendulum": Pendulum,
    "pointmass": PointMass,
    "lqr": Lqr,
}


def make_env(env_id: str) -> Env:
    try:
        return ENV_REGISTRY[env_id]()
    except KeyError:
        raise ValueError(f"unknown env id {env_id!r}; choose from {sorted(ENV_REGISTRY)}") from None


@dataclass
class EnvPool:
    """Several instances of one task stepped round-robin."""

    envs: list[Env]
    seed_rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @classmethod
    def make(cls, env_id: str, n: int, seed: int) -> "EnvPool":
        pool = cls([make_env(env_id) for _ in range(n)], np.random.default_rng(seed))
        return pool

    @property
    def spec(self) -> EnvSpec:
        return self.envs[0].spec

    def next_seed(self) -> int:
        return int(self.seed_rng.integers(2 ** 31))


def dump_trajectory(path, rows, obs_dim: int, action_dim: int, extra: tuple[str, ...] = ()):
    """Write ``(step, state, action, reward, done, *extra)`` rows to CSV."""
    header = (["step"] + [f"state_{i}" for i in range(obs_dim)]
              + [f"action_{i}" for i in range(action_dim)] + ["reward", "done", *extra])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for step, state, action, reward, done, *rest in rows:
            w.writerow([step, *map(repr, map(float, state)), *map(repr, map(float, action)),
                        repr(float(reward)), int(bool(done)), *map(repr, map(float, rest))])
