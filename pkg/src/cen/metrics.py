"""Evaluation metrics: MAE, the apparent-age epsilon error, and CA(n)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def mae(pred, truth) -> float:
    """Mean absolute error in years."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError(f"mae: shapes {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))


def epsilon_error(pred, mu, sigma) -> float:
    """Mean of 1 - exp(-(pred - mu)^2 / (2 sigma^2)) over samples.

    mu and sigma are the per-sample annotator mean and standard deviation;
    sigma must be strictly positive.
    """
    pred = np.asarray(pred, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if not (pred.shape == mu.shape == sigma.shape) or pred.size == 0:
        raise ValueError(f"epsilon_error: shapes {pred.shape}, {mu.shape}, {sigma.shape}")
    if np.any(sigma <= 0):
        raise ValueError("epsilon_error: every sigma must be > 0")
    return float(np.mean(1.0 - np.exp(-((pred - mu) ** 2) / (2.0 * sigma**2))))


def ca(pred, truth, n) -> float:
    """Cumulative accuracy: percentage of samples with absolute error strictly below n years."""
    if not n > 0:
        raise ValueError(f"ca: n must be positive, got {n}")
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError(f"ca: shapes {pred.shape} vs {truth.shape}")
    return float(100.0 * np.count_nonzero(np.abs(pred - truth) < n) / pred.size)


CA_LEVELS = (3, 5, 7)


@dataclass
class EvalReport:
    """Metric values for one model on one split."""

    mae: float
    ca: dict[int, float]
    n_samples: int
    out_of_range_count: int
    epsilon_error: float | None = None


def build_report(
    pred,
    truth,
    out_of_range_count: int = 0,
    mu=None,
    sigma=None,
) -> EvalReport:
    eps = epsilon_error(pred, mu, sigma) if mu is not None and sigma is not None else None
    return EvalReport(
        mae=mae(pred, truth),
        ca={n: ca(pred, truth, n) for n in CA_LEVELS},
        n_samples=int(np.asarray(pred).size),
        out_of_range_count=int(out_of_range_count),
        epsilon_error=eps,
    )


def format_report(report: EvalReport, generation: int | None = None) -> str:
    """Fixed-order key=value block for logs and stdout."""
    lines = []
    if generation is not None:
        lines.append(f"generation={generation}")
    lines.append(f"n_samples={report.n_samples}")
    lines.append(f"mae={report.mae!r}")
    if report.epsilon_error is not None:
        lines.append(f"epsilon_error={report.epsilon_error!r}")
    for n in CA_LEVELS:
        lines.append(f"ca{n}={report.ca[n]!r}")
    lines.append(f"out_of_range={report.out_of_range_count}")
    return "\n".join(lines)
