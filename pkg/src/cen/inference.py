"""Test-time prediction: distribution expectation, regression denormalization,
and their fused average, plus batch evaluation and the distribution dump."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import AgeRange, Dataset
from .metrics import EvalReport, build_report
from .model import ModelParams, forward
from .numerics import softmax_rows, softmax_tempered


@dataclass(frozen=True)
class Prediction:
    """Per-sample ages in years from both heads, their average, and the tau=1 distribution."""

    y_ldl: float
    y_reg: float
    y_fused: float
    distribution: np.ndarray


def predict_ldl(p: np.ndarray, age_range: AgeRange) -> float:
    """Expected age under a label distribution: sum_i p_i * age_i."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (age_range.k,):
        raise ValueError(f"predict_ldl: p shape {p.shape}, expected ({age_range.k},)")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise ValueError(f"predict_ldl: distribution sums to {p.sum()!r}, not 1")
    return float(p @ age_range.ages)


def predict_reg(s: float, age_range: AgeRange) -> float:
    """Map the normalized regression output back to years: (lk - l1) * s + l1.

    Deliberately unclamped; out-of-range predictions are counted by the
    evaluation report rather than hidden.
    """
    return (age_range.lk - age_range.l1) * float(s) + age_range.l1


def predict(params: ModelParams, x: np.ndarray, age_range: AgeRange, tau: float = 1.0) -> Prediction:
    """One forward pass, then both estimates and their average."""
    trace = forward(params, np.asarray(x, dtype=np.float64))
    p = softmax_tempered(trace.z, tau)
    y_ldl = predict_ldl(p, age_range)
    y_reg = predict_reg(trace.s, age_range)
    return Prediction(y_ldl=y_ldl, y_reg=y_reg, y_fused=(y_ldl + y_reg) / 2.0, distribution=p)


def predict_batch(
    params: ModelParams, X: np.ndarray, age_range: AgeRange, tau: float = 1.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized predict: returns (y_ldl, y_reg, y_fused, distributions)."""
    trace = forward(params, np.asarray(X, dtype=np.float64))
    P = softmax_rows(trace.z, tau)
    y_ldl = P @ age_range.ages
    y_reg = (age_range.lk - age_range.l1) * trace.s + age_range.l1
    return y_ldl, y_reg, (y_ldl + y_reg) / 2.0, P


def final_prediction(y_ldl: np.ndarray, y_reg: np.ndarray, head_mode: str) -> np.ndarray:
    """The estimate a run reports: fused for coupled training, else the live head."""
    if head_mode == "both":
        return (y_ldl + y_reg) / 2.0
    if head_mode == "ldl":
        return y_ldl
    if head_mode == "reg":
        return y_reg
    raise ValueError(f"unknown head_mode '{head_mode}'")


def evaluate(
    params: ModelParams,
    dataset: Dataset,
    head_mode: str = "both",
    tau: float = 1.0,
    eval_sigma: float | None = None,
) -> EvalReport:
    """Evaluate a model on a dataset split.

    eval_sigma, when given, also computes the apparent-age epsilon error using
    the true ages as annotator means and a constant annotator deviation.
    """
    y_ldl, y_reg, _, _ = predict_batch(params, dataset.features, dataset.age_range, tau)
    pred = final_prediction(y_ldl, y_reg, head_mode)
    truth = dataset.ages.astype(np.float64)
    oor = int(np.count_nonzero((pred < dataset.age_range.l1) | (pred > dataset.age_range.lk)))
    if eval_sigma is not None:
        return build_report(
            pred, truth, out_of_range_count=oor, mu=truth, sigma=np.full(len(dataset), eval_sigma)
        )
    return build_report(pred, truth, out_of_range_count=oor)


def dump_distributions(
    params: ModelParams, dataset: Dataset, path: str | Path, tau: float = 1.0
) -> None:
    """Write per-sample predictions and the full distribution rows to CSV.

    Columns: sample_id,true_age,y_ldl,y_reg,y_fused,p_0,...,p_{k-1}.
    """
    y_ldl, y_reg, y_fused, P = predict_batch(params, dataset.features, dataset.age_range, tau)
    k = dataset.age_range.k
    header = "sample_id,true_age,y_ldl,y_reg,y_fused," + ",".join(f"p_{j}" for j in range(k))
    lines = [header]
    for i in range(len(dataset)):
        cells = [str(i), str(int(dataset.ages[i])), repr(float(y_ldl[i])), repr(float(y_reg[i])), repr(float(y_fused[i]))]
        cells.extend(repr(float(v)) for v in P[i])
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
