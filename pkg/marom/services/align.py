from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from marom.core.errors import DataError

logger = logging.getLogger(__name__)

CENTERING_RTOL = 1e-8


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProcrustesTransform:
    """Affine map z = s·Q·(w − t) from low- to high-fidelity latent space."""

    s: float
    t: np.ndarray
    Q: np.ndarray
    residual: float
    det_q: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "t", _frozen(self.t))
        object.__setattr__(self, "Q", _frozen(self.Q))

    @property
    def k(self) -> int:
        return int(self.t.shape[0])

    def to_dict(self) -> dict[str, Any]:
        return {
            "s": float(self.s),
            "t": [float(v) for v in self.t],
            "Q": [[float(v) for v in row] for row in self.Q],
            "residual": float(self.residual),
            "detQ": float(self.det_q),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ProcrustesTransform":
        return cls(
            s=float(data["s"]),
            t=np.asarray(data["t"], dtype=np.float64),
            Q=np.asarray(data["Q"], dtype=np.float64).reshape(len(data["t"]), len(data["t"])),
            residual=float(data["residual"]),
            det_q=float(data["detQ"]),
        )


def _as_latent(name: str, values: np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"{name} must be a k×n matrix (got ndim={arr.ndim})", code="DIMENSION_MISMATCH")
    return arr


def fit_procrustes(z_hi: np.ndarray, w_linked: np.ndarray) -> ProcrustesTransform:
    z = _as_latent("z_hi", z_hi)
    w = _as_latent("w_linked", w_linked)
    if z.shape != w.shape:
        raise DataError(
            f"z_hi is {z.shape[0]}×{z.shape[1]} but w_linked is {w.shape[0]}×{w.shape[1]}",
            code="DIMENSION_MISMATCH",
            details={"z_hi": list(z.shape), "w_linked": list(w.shape)},
        )
    k, n = z.shape
    if n < 2:
        raise DataError(f"Procrustes alignment needs n >= 2 linked pairs (got {n})", code="INSUFFICIENT_SAMPLES")
    scale = max(1.0, float(np.max(np.abs(z)))) if z.size else 1.0
    drift = float(np.max(np.abs(z.mean(axis=1)))) if z.size else 0.0
    if drift > CENTERING_RTOL * scale:
        raise DataError(
            f"z_hi must be centered (max column-mean {drift:.3e})",
            code="UNCENTERED_LATENT",
        )

    t = w.mean(axis=1)
    w_c = w - t[:, None]
    denom = float(np.sum(w_c * w_c))
    if denom == 0.0:
        raise DataError(
            "linked low-fidelity latent coordinates are all equal; alignment scale is undefined",
            code="DEGENERATE_LINKED_SET",
        )
    u, sigma, vt = np.linalg.svd(w_c @ z.T)
    q = vt.T @ u.T
    s = float(sigma.sum()) / denom
    misfit = z - s * (q @ w_c)
    residual = float(np.sqrt(np.sum(misfit * misfit)))
    det_q = float(np.linalg.det(q))
    logger.debug(
        "procrustes_fitted",
        extra={"k": k, "n": n, "s": s, "residual": residual, "det_q": det_q},
    )
    return ProcrustesTransform(s=s, t=t, Q=q, residual=residual, det_q=det_q)


def apply_transform(transform: ProcrustesTransform, w_all: np.ndarray) -> np.ndarray:
    w = _as_latent("w_all", w_all)
    if w.shape[0] != transform.k:
        raise DataError(
            f"latent matrix has {w.shape[0]} rows but the transform has k={transform.k}",
            code="DIMENSION_MISMATCH",
            details={"expected": transform.k, "actual": int(w.shape[0])},
        )
    return transform.s * (transform.Q @ (w - transform.t[:, None]))


def objective(transform: ProcrustesTransform, z_hi: np.ndarray, w_linked: np.ndarray) -> float:
    """‖z_hi − s·Q·(w_linked − t)‖_F for the given transform."""
    misfit = np.asarray(z_hi, dtype=np.float64) - apply_transform(transform, w_linked)
    return float(np.sqrt(np.sum(misfit * misfit)))
