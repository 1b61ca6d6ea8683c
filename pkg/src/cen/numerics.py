"""Dense float64 primitives: affine maps, tempered softmax, finite differences.

Vectors are 1-d float64 numpy arrays and matrices are 2-d row-major float64
arrays. Public operations validate shapes and finiteness up front and raise
ValueError on violation, so callers can assume clean numbers afterwards.
All functions here are pure and safe to call concurrently.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

RealVector = np.ndarray
RealMatrix = np.ndarray


def as_vector(x, name: str = "vector") -> RealVector:
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name}: expected a non-empty 1-d array, got shape {v.shape}")
    return v


def as_matrix(x, name: str = "matrix") -> RealMatrix:
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"{name}: expected a non-empty 2-d array, got shape {m.shape}")
    return m


def require_finite(a: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def affine(W: RealMatrix, x: RealVector, b: RealVector) -> RealVector:
    """Return W @ x + b, where W has shape (rows out, cols in)."""
    W = require_finite(as_matrix(W, "W"), "W")
    x = require_finite(as_vector(x, "x"), "x")
    b = require_finite(as_vector(b, "b"), "b")
    rows, cols = W.shape
    if cols != x.shape[0]:
        raise ValueError(f"affine: W shape {W.shape} does not accept x shape {x.shape}")
    if rows != b.shape[0]:
        raise ValueError(f"affine: W shape {W.shape} does not match b shape {b.shape}")
    return W @ x + b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax_tempered(z: RealVector, tau: float) -> RealVector:
    """Softmax of z / tau; larger tau yields a flatter distribution.

    The maximum logit is subtracted before exponentiation so large logits
    cannot overflow. Output entries are positive and sum to 1.
    """
    if not tau > 0:
        raise ValueError(f"softmax_tempered: tau must be positive, got {tau}")
    z = require_finite(as_vector(z, "z"), "z")
    u = z / tau
    u -= u.max()
    e = np.exp(u)
    return e / e.sum()


def softmax_rows(Z: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise tempered softmax for a batch of logit vectors, shape (n, k)."""
    if not tau > 0:
        raise ValueError(f"softmax_rows: tau must be positive, got {tau}")
    U = np.asarray(Z, dtype=np.float64) / tau
    U = U - U.max(axis=1, keepdims=True)
    E = np.exp(U)
    return E / E.sum(axis=1, keepdims=True)


def finite_diff_grad(
    loss_fn: Callable[[RealVector], float], params: RealVector, eps: float
) -> RealVector:
    """Central-difference gradient of a scalar loss over a flat parameter vector.

    Used as the independent oracle for every analytic gradient in this
    package. loss_fn must be deterministic; eps is restricted to the window
    where the central-difference error is well below the check tolerances.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"finite_diff_grad: eps must lie in [1e-7, 1e-3], got {eps}")
    theta = as_vector(params, "params").copy()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + eps
        up = float(loss_fn(theta))
        theta[i] = orig - eps
        down = float(loss_fn(theta))
        theta[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError(f"finite_diff_grad: non-finite loss at coordinate {i}")
        grad[i] = (up - down) / (2.0 * eps)
    return grad
