"""Damped inverses and Kronecker-structured preconditioning.

Symmetric matrices are plain 2-d float64 numpy arrays; ``check_symmetric``
enforces the invariants where it matters.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotPositiveDefinite

SYMMETRY_ATOL = 1e-10


def check_symmetric(m: np.ndarray, atol: float = SYMMETRY_ATOL) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0.0, atol=atol):
        raise ValueError("matrix is not symmetric")
    return m


def split_damping(total: float) -> tuple[float, float]:
    """Split a total damping into equal per-factor terms (lambda_A, lambda_G)."""
    if total < 0:
        raise ValueError("damping must be nonnegative")
    s = math.sqrt(total)
    return s, s


def damped_cholesky(m: np.ndarray, damping: float = 0.0):
    """Cholesky factor of ``m + damping * I`` in scipy ``cho_factor`` form.

    Raises NotPositiveDefinite instead of silently adding jitter.
    """
    m = check_symmetric(m)
    if damping < 0:
        raise ValueError("damping must be nonnegative")
    n = m.shape[0]
    try:
        return scipy.linalg.cho_factor(m + damping * np.eye(n), lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(
            f"{n}x{n} factor is not positive definite with damping {damping:g}"
        ) from exc


def damped_inverse(m: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """Return ``(m + damping * I)^-1`` through a Cholesky factorization."""
    factor = damped_cholesky(m, damping)
    inv = scipy.linalg.cho_solve(factor, np.eye(factor[0].shape[0]))
    return 0.5 * (inv + inv.T)


def kron_precondition(grad: np.ndarray, a_inv: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    """Apply ``(A kron G)^-1`` to a weight gradient of shape (out, in+1).

    Uses the identity ``(A kron G)^-1 vec(X) = vec(G^-1 X A^-1)`` with
    column-major vec, so the Kronecker product is never formed.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.ndim != 2:
        raise DimensionMismatch(f"gradient must be 2-d, got shape {grad.shape}")
    out_dim, in_dim = grad.shape
    if a_inv.shape != (in_dim, in_dim):
        raise DimensionMismatch(f"A^-1 has shape {a_inv.shape}, gradient input side is {in_dim}")
    if g_inv.shape != (out_dim, out_dim):
        raise DimensionMismatch(f"G^-1 has shape {g_inv.shape}, gradient output side is {out_dim}")
    return g_inv @ grad @ a_inv


def kron_solve(grad: np.ndarray, a: np.ndarray, g: np.ndarray, damping_a: float,
               damping_g: float) -> np.ndarray:
    """``(G + l_G I)^-1 grad (A + l_A I)^-1`` by two Cholesky solves.

    Same result as ``kron_precondition`` with ``damped_inverse`` factors, but
    without forming the inverses, which is markedly more accurate when a
    factor is nearly singular (small damping, few samples).
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.ndim != 2:
        raise DimensionMismatch(f"gradient must be 2-d, got shape {grad.shape}")
    out_dim, in_dim = grad.shape
    if np.shape(a) != (in_dim, in_dim):
        raise DimensionMismatch(f"A has shape {np.shape(a)}, gradient input side is {in_dim}")
    if np.shape(g) != (out_dim, out_dim):
        raise DimensionMismatch(f"G has shape {np.shape(g)}, gradient output side is {out_dim}")
    left = scipy.linalg.cho_solve(damped_cholesky(g, damping_g), grad, check_finite=False)
    # A is symmetric, so X A^-1 = (A^-1 X^T)^T
    return scipy.linalg.cho_solve(damped_cholesky(a, damping_a), left.T, check_finite=False).T
