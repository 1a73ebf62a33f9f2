from __future__ import annotations

import math
from typing import Literal, Union

import numpy as np

from marom.core.errors import DataError, NumericalError
from marom.schemas.artifacts import ErrorReport
from marom.services.fields import SnapshotMatrix

FieldInput = Union[SnapshotMatrix, np.ndarray]


def _values(fields: FieldInput) -> np.ndarray:
    if isinstance(fields, SnapshotMatrix):
        return fields.values
    arr = np.asarray(fields, dtype=np.float64)
    return arr.reshape(-1, 1) if arr.ndim == 1 else arr


def _pair(predictions: FieldInput, truths: FieldInput) -> tuple[np.ndarray, np.ndarray]:
    pred = _values(predictions)
    truth = _values(truths)
    if pred.shape != truth.shape:
        raise DataError(
            f"predictions are {pred.shape[0]}×{pred.shape[1]} but truths are {truth.shape[0]}×{truth.shape[1]}",
            code="DIMENSION_MISMATCH",
            details={"predictions": list(pred.shape), "truths": list(truth.shape)},
        )
    if truth.shape[1] < 1:
        raise DataError("error metrics need at least one test sample", code="EMPTY_MATRIX")
    return pred, truth


def sample_norms(predictions: FieldInput, truths: FieldInput) -> np.ndarray:
    """‖x*_j − x̃_j‖₂ for every test column j."""
    pred, truth = _pair(predictions, truths)
    return np.linalg.norm(truth - pred, axis=0)


def _rms(norms: np.ndarray) -> float:
    return math.sqrt(float(np.sum(norms * norms)) / norms.shape[0])


def field_error(predictions: FieldInput, truths: FieldInput) -> float:
    return _rms(sample_norms(predictions, truths))


def _denominator(truths: np.ndarray, mean_field: np.ndarray) -> float:
    mean = np.asarray(mean_field, dtype=np.float64).ravel()
    if mean.shape[0] != truths.shape[0]:
        raise DataError(
            f"mean field has length {mean.shape[0]} but fields have d={truths.shape[0]}",
            code="DIMENSION_MISMATCH",
        )
    spread = _rms(sample_norms(np.broadcast_to(mean[:, None], truths.shape), truths))
    if spread == 0.0:
        raise NumericalError(
            "normalized error undefined: every test field equals the mean field",
            code="DEGENERATE_TEST_SET",
        )
    return spread


def normalized_error(predictions: FieldInput, truths: FieldInput, mean_field: np.ndarray) -> float:
    pred, truth = _pair(predictions, truths)
    return field_error(pred, truth) / _denominator(truth, mean_field)


def error_report(
    predictions: FieldInput,
    truths: FieldInput,
    mean_field: np.ndarray,
    denominator: Literal["training", "test", "custom"] = "custom",
) -> ErrorReport:
    pred, truth = _pair(predictions, truths)
    norms = sample_norms(pred, truth)
    e_abs = _rms(norms)
    return ErrorReport(
        e_abs=e_abs,
        e_norm=e_abs / _denominator(truth, mean_field),
        n_test=int(truth.shape[1]),
        per_sample_norms=[float(v) for v in norms],
        worst_index=int(np.argmax(norms)),
        denominator=denominator,
    )


def error_field(predictions: FieldInput, truths: FieldInput, index: int | None = None) -> np.ndarray:
    """Per-node error x* − x̃ of one test sample, or of all samples (d × n_t) when index is None."""
    pred, truth = _pair(predictions, truths)
    diff = truth - pred
    if index is None:
        return diff
    if not 0 <= index < diff.shape[1]:
        raise DataError(f"test sample index {index} out of range 0..{diff.shape[1] - 1}", code="INDEX_OUT_OF_RANGE")
    return diff[:, index]


def training_cost(n_hi: int, m_lo: int, cost_hi: float, cost_lo: float) -> float:
    if min(n_hi, m_lo) < 0 or min(cost_hi, cost_lo) < 0:
        raise DataError("sample counts and per-sample costs must be nonnegative", code="INVALID_COST")
    return n_hi * cost_hi + m_lo * cost_lo


def budget_allocation(budget: float, tau: float, cost_hi: float, cost_lo: float) -> tuple[int, int]:
    """
    Largest (n, m = round(tau·n)) affordable within `budget` CPU-sec.
    tau = 0 is the single-fidelity allocation.
    """
    if budget < 0 or tau < 0:
        raise DataError("budget and tau must be nonnegative", code="INVALID_COST")
    per_hi = cost_hi + tau * cost_lo
    if per_hi <= 0:
        raise DataError("per-sample costs must not both be zero", code="INVALID_COST")
    n = int(math.floor(budget / per_hi))
    return n, int(round(tau * n))
