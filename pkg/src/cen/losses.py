"""Training losses with values and analytic gradients.

The label side uses cross entropy against the one-hot age and a soft-target
cross-entropy transfer term that pulls the current generation's tempered
distribution toward its ancestor's. The regression side uses plain L1 for the
first generation and a slack hinge afterwards: the ancestor's absolute error
defines a zero-loss interval around the target.

Gradient conventions: distributions come from the tempered softmax of logits
z, and every gradient here is taken with respect to z (shape k) or the raw
regression output s. Subgradients at the kinks of |.| and the hinge are 0, so
samples that land exactly on a kink are inert. Batched variants reduce by the
arithmetic mean over samples and return gradients of that mean.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_vector

LOG_CLAMP = 1e-300

LabelDistribution = np.ndarray


def one_hot(index: int, k: int) -> np.ndarray:
    if not 0 <= index < k:
        raise ValueError(f"one_hot: index {index} outside [0, {k})")
    o = np.zeros(k, dtype=np.float64)
    o[index] = 1.0
    return o


def check_distribution(p: np.ndarray, tol: float = 1e-9, name: str = "p") -> np.ndarray:
    p = as_vector(p, name)
    if p.min() < 0 or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"{name} is not a probability distribution (sum={p.sum()!r})")
    return p


@dataclass
class LossBundle:
    """A loss value, its named parts, and gradients of the total.

    d_z is the gradient with respect to the distribution-head logits and d_s
    with respect to the regression output. For batched bundles d_z has shape
    (batch, k), d_s shape (batch,), and both are gradients of the batch mean.
    """

    total: float
    parts: dict[str, float] = field(default_factory=dict)
    d_z: np.ndarray | None = None
    d_s: float | np.ndarray | None = None


def cross_entropy(p: np.ndarray, o: np.ndarray, tau: float = 1.0) -> tuple[float, np.ndarray]:
    """Cross entropy -sum(o * ln p) against a one-hot target.

    p must be the tempered softmax of the logits at the same tau; the returned
    gradient with respect to those logits is (p - o) / tau. A zero probability
    on the true label is clamped inside the log and flagged with a warning,
    since it means the distribution has collapsed.
    """
    p = as_vector(p, "p")
    o = as_vector(o, "o")
    if p.shape != o.shape:
        raise ValueError(f"cross_entropy: p shape {p.shape} != o shape {o.shape}")
    hot = int(np.argmax(o))
    if o[hot] != 1.0 or o.sum() != 1.0 or np.count_nonzero(o) != 1:
        raise ValueError("cross_entropy: o must be one-hot")
    p_hot = float(p[hot])
    if p_hot <= 0.0:
        warnings.warn(
            "cross_entropy: zero probability on the true label (collapsed distribution)",
            RuntimeWarning,
            stacklevel=2,
        )
    value = -np.log(max(p_hot, LOG_CLAMP))
    return float(value), (p - o) / tau


def kl_transfer(p_prev: np.ndarray, p_cur: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Soft-target cross entropy -sum(p_prev * ln p_cur) and its logit gradient.

    This is the ancestor-to-offspring transfer term: the true KL divergence
    minus the ancestor's (constant) entropy, so its minimum over p_cur sits at
    p_cur == p_prev with value equal to that entropy. p_prev is treated as a
    frozen constant; the gradient with respect to the current logits is
    (p_cur - p_prev) / tau.
    """
    p_prev = as_vector(p_prev, "p_prev")
    p_cur = as_vector(p_cur, "p_cur")
    if p_prev.shape != p_cur.shape:
        raise ValueError(
            f"kl_transfer: p_prev shape {p_prev.shape} != p_cur shape {p_cur.shape}"
        )
    value = -float(np.dot(p_prev, np.log(np.maximum(p_cur, LOG_CLAMP))))
    return value, (p_cur - p_prev) / tau


def ldl_loss(alpha: float, kl: float, ce: float) -> float:
    """Blend of the transfer and cross-entropy terms: alpha*kl + (1-alpha)*ce."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"ldl_loss: alpha must lie in [0, 1], got {alpha}")
    return alpha * kl + (1.0 - alpha) * ce


def l1_loss(s: float, y: float) -> tuple[float, float]:
    """Absolute error |s - y| and its subgradient sign(s - y), 0 at the kink."""
    diff = s - y
    return abs(diff), float(np.sign(diff))


def slack_term(s_prev: float, y: float) -> float:
    """The ancestor's absolute regression error, inherited as the slack width."""
    return abs(s_prev - y)


def slack_l1(s: float, y: float, delta: float) -> tuple[float, float]:
    """Hinge max(0, |s - y| - delta): zero exactly on [y - delta, y + delta].

    delta converts regression onto a discrete target into regression onto a
    continuous interval. The subgradient is sign(s - y) outside the interval
    and 0 on it (boundary included).
    """
    if delta < 0:
        raise ValueError(f"slack_l1: delta must be >= 0, got {delta}")
    gap = abs(s - y) - delta
    if gap > 0:
        return gap, float(np.sign(s - y))
    return 0.0, 0.0


def total_ancestor(
    ce: float,
    l1: float,
    lambda1: float,
    d_z: np.ndarray | None = None,
    d_s: float | np.ndarray | None = None,
) -> LossBundle:
    """First-generation objective ce + lambda1 * l1 assembled into a bundle.

    d_z is the cross-entropy logit gradient and d_s the raw L1 subgradient;
    the bundle stores gradients of the weighted total.
    """
    if not lambda1 > 0:
        raise ValueError(f"total_ancestor: lambda1 must be positive, got {lambda1}")
    total = ce + lambda1 * l1
    return LossBundle(
        total=float(total),
        parts={"ce": float(ce), "l1": float(l1)},
        d_z=d_z,
        d_s=None if d_s is None else lambda1 * d_s,
    )


def total_evolution(
    ldl: float,
    slack: float,
    lambda_t: float,
    ce: float | None = None,
    kl: float | None = None,
    d_z: np.ndarray | None = None,
    d_s: float | np.ndarray | None = None,
) -> LossBundle:
    """Later-generation objective ldl + lambda_t * slack assembled into a bundle.

    d_z is the gradient of the blended label term and d_s the raw hinge
    subgradient; the bundle stores gradients of the weighted total.
    """
    if not lambda_t > 0:
        raise ValueError(f"total_evolution: lambda_t must be positive, got {lambda_t}")
    parts = {"ldl": float(ldl), "slack_l1": float(slack)}
    if ce is not None:
        parts["ce"] = float(ce)
    if kl is not None:
        parts["kl"] = float(kl)
    return LossBundle(
        total=float(ldl + lambda_t * slack),
        parts=parts,
        d_z=d_z,
        d_s=None if d_s is None else lambda_t * d_s,
    )


def _batch_ce(P: np.ndarray, hot_idx: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample CE values and per-sample logit gradients for a batch."""
    n = P.shape[0]
    p_hot = P[np.arange(n), hot_idx]
    if np.any(p_hot <= 0.0):
        warnings.warn(
            "cross_entropy: zero probability on a true label (collapsed distribution)",
            RuntimeWarning,
            stacklevel=3,
        )
    vals = -np.log(np.maximum(p_hot, LOG_CLAMP))
    d = P.copy()
    d[np.arange(n), hot_idx] -= 1.0
    return vals, d / tau


def total_ancestor_batch(
    p1: np.ndarray,
    hot_idx: np.ndarray,
    s: np.ndarray,
    y: np.ndarray,
    lambda1: float,
    head_mode: str = "both",
) -> LossBundle:
    """Batch-mean first-generation objective with gradients of the mean.

    p1 holds the tau=1 distributions, row per sample. head_mode selects the
    coupled objective ("both") or a single head ("ldl" keeps cross entropy
    only, "reg" keeps plain L1 only, unweighted).
    """
    n = p1.shape[0]
    ce_vals, ce_grad = _batch_ce(p1, hot_idx, tau=1.0)
    diff = s - y
    l1_vals = np.abs(diff)
    sign = np.sign(diff)
    ce = float(ce_vals.mean())
    l1 = float(l1_vals.mean())
    if head_mode == "both":
        if not lambda1 > 0:
            raise ValueError(f"total_ancestor_batch: lambda1 must be positive, got {lambda1}")
        return LossBundle(
            total=ce + lambda1 * l1,
            parts={"ce": ce, "l1": l1},
            d_z=ce_grad / n,
            d_s=lambda1 * sign / n,
        )
    if head_mode == "ldl":
        return LossBundle(total=ce, parts={"ce": ce}, d_z=ce_grad / n, d_s=np.zeros(n))
    if head_mode == "reg":
        return LossBundle(
            total=l1, parts={"l1": l1}, d_z=np.zeros_like(p1), d_s=sign / n
        )
    raise ValueError(f"unknown head_mode '{head_mode}'")


def total_evolution_batch(
    p_tau: np.ndarray,
    p_prev: np.ndarray,
    p_ce: np.ndarray,
    hot_idx: np.ndarray,
    s: np.ndarray,
    y: np.ndarray,
    deltas: np.ndarray,
    alpha: float,
    lambda_t: float,
    tau: float,
    ce_tau: float = 1.0,
    kl_tau_square_rescale: bool = False,
    head_mode: str = "both",
) -> LossBundle:
    """Batch-mean later-generation objective with gradients of the mean.

    p_tau are the current tempered distributions, p_prev the frozen ancestor
    distributions at the same tau, p_ce the distributions used by the
    cross-entropy term (temperature ce_tau). When kl_tau_square_rescale is
    set, the transfer term and its gradient are scaled by tau**2, the common
    distillation convention for keeping gradient magnitudes comparable
    across temperatures.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"total_evolution_batch: alpha must lie in [0, 1], got {alpha}")
    n = p_tau.shape[0]
    if deltas.min() < 0:
        raise ValueError("total_evolution_batch: negative slack delta")

    kl_vals = -np.sum(p_prev * np.log(np.maximum(p_tau, LOG_CLAMP)), axis=1)
    kl_grad = (p_tau - p_prev) / tau
    if kl_tau_square_rescale:
        kl_vals = kl_vals * tau**2
        kl_grad = kl_grad * tau**2
    ce_vals, ce_grad = _batch_ce(p_ce, hot_idx, tau=ce_tau)

    diff = s - y
    active = np.abs(diff) > deltas
    slack_vals = np.where(active, np.abs(diff) - deltas, 0.0)
    slack_sign = np.where(active, np.sign(diff), 0.0)

    kl = float(kl_vals.mean())
    ce = float(ce_vals.mean())
    ldl = alpha * kl + (1.0 - alpha) * ce
    slack = float(slack_vals.mean())

    if head_mode == "both":
        if not lambda_t > 0:
            raise ValueError(f"total_evolution_batch: lambda_t must be positive, got {lambda_t}")
        return LossBundle(
            total=ldl + lambda_t * slack,
            parts={"ce": ce, "kl": kl, "ldl": ldl, "slack_l1": slack},
            d_z=(alpha * kl_grad + (1.0 - alpha) * ce_grad) / n,
            d_s=lambda_t * slack_sign / n,
        )
    if head_mode == "ldl":
        return LossBundle(
            total=ldl,
            parts={"ce": ce, "kl": kl, "ldl": ldl},
            d_z=(alpha * kl_grad + (1.0 - alpha) * ce_grad) / n,
            d_s=np.zeros(n),
        )
    if head_mode == "reg":
        return LossBundle(
            total=slack,
            parts={"slack_l1": slack},
            d_z=np.zeros_like(p_tau),
            d_s=slack_sign / n,
        )
    raise ValueError(f"unknown head_mode '{head_mode}'")
