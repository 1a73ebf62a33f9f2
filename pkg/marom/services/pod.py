from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from marom.core.csv_io import PathInput, read_matrix, read_vector, write_matrix, write_vector
from marom.core.errors import DataError
from marom.services.fields import SnapshotMatrix, center

logger = logging.getLogger(__name__)

RANK_RTOL = 1e-12
RIC_TOL = 1e-12


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PodBasis:
    """
    Truncated POD basis.

    `eigenvalues` holds the full nonzero spectrum (length = numerical rank),
    not only the k kept values. A padded basis has k > rank.
    """

    modes: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray
    achieved_ric: float
    field_name: str = "field"

    def __post_init__(self) -> None:
        object.__setattr__(self, "modes", _frozen(self.modes))
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        object.__setattr__(self, "mean", _frozen(self.mean))
        if self.modes.ndim != 2 or self.modes.shape[0] != self.mean.shape[0]:
            raise DataError(
                f"modes shape {self.modes.shape} does not match mean length {self.mean.shape[0]}",
                code="DIMENSION_MISMATCH",
            )

    @property
    def k(self) -> int:
        return int(self.modes.shape[1])

    @property
    def d(self) -> int:
        return int(self.modes.shape[0])

    @property
    def rank(self) -> int:
        return int(self.eigenvalues.shape[0])


def ric_curve(eigenvalues: np.ndarray) -> np.ndarray:
    """Relative information content after 1..r modes."""
    eig = np.asarray(eigenvalues, dtype=np.float64)
    total = float(eig.sum())
    if total <= 0.0:
        raise DataError("zero total variance: RIC is undefined", code="ZERO_VARIANCE")
    return np.cumsum(eig) / total


def select_rank(eigenvalues: np.ndarray, ric_threshold: float) -> int:
    """Smallest k whose RIC reaches the threshold."""
    if not 0.0 < ric_threshold <= 1.0:
        raise DataError(f"ric_threshold must be in (0, 1] (got {ric_threshold})", code="INVALID_RIC")
    curve = ric_curve(eigenvalues)
    reached = np.flatnonzero(curve >= ric_threshold - RIC_TOL)
    # curve[-1] is 1 up to roundoff, so the threshold is always reached
    return int(reached[0]) + 1 if reached.size else int(curve.size)


def fit_pod(
    snapshots: SnapshotMatrix,
    *,
    ric_threshold: Optional[float] = None,
    fixed_k: Optional[int] = None,
    allow_padding: bool = False,
) -> PodBasis:
    if (ric_threshold is None) == (fixed_k is None):
        raise DataError("pass exactly one of ric_threshold or fixed_k", code="INVALID_TRUNCATION")
    if snapshots.n < 2:
        raise DataError(
            f"POD needs at least 2 snapshots (got {snapshots.n})",
            code="INSUFFICIENT_SAMPLES",
            details={"n": snapshots.n},
        )
    centered = center(snapshots)
    u, sigma, _ = np.linalg.svd(centered.values, full_matrices=False)
    sigma_max = float(sigma[0]) if sigma.size else 0.0
    rank = int(np.count_nonzero(sigma > RANK_RTOL * sigma_max)) if sigma_max > 0.0 else 0
    if rank == 0:
        raise DataError(
            f"snapshots of {snapshots.field_name!r} have zero variance (all columns equal)",
            code="ZERO_VARIANCE",
        )
    eigenvalues = np.clip(sigma[:rank] ** 2 / snapshots.n, 0.0, None)

    if fixed_k is not None:
        if fixed_k < 1:
            raise DataError(f"fixed_k must be >= 1 (got {fixed_k})", code="INVALID_TRUNCATION")
        limit = min(u.shape[1], snapshots.d) if allow_padding else rank
        if fixed_k > limit:
            raise DataError(
                f"fixed_k={fixed_k} exceeds the data rank {rank}"
                + (f" and the padding limit {limit}" if allow_padding else ""),
                code="RANK_EXCEEDED",
                details={"fixed_k": fixed_k, "rank": rank},
            )
        k = fixed_k
    else:
        k = select_rank(eigenvalues, float(ric_threshold))

    modes = np.array(u[:, :k], copy=True)
    pivots = np.argmax(np.abs(modes), axis=0)
    signs = np.sign(modes[pivots, np.arange(k)])
    signs[signs == 0] = 1.0
    modes *= signs

    curve = ric_curve(eigenvalues)
    achieved = float(curve[min(k, rank) - 1])
    if k > rank:
        logger.debug("pod_basis_padded", extra={"rank": rank, "k": k})
    logger.debug(
        "pod_fitted",
        extra={"field": snapshots.field_name, "d": snapshots.d, "n": snapshots.n, "rank": rank, "k": k, "ric": achieved},
    )
    return PodBasis(
        modes=modes,
        eigenvalues=eigenvalues,
        mean=centered.mean,
        achieved_ric=achieved,
        field_name=snapshots.field_name,
    )


def _as_array(snapshots: Union[SnapshotMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(snapshots, SnapshotMatrix):
        return snapshots.values
    values = np.asarray(snapshots, dtype=np.float64)
    return values.reshape(-1, 1) if values.ndim == 1 else values


def project(basis: PodBasis, snapshots: Union[SnapshotMatrix, np.ndarray]) -> np.ndarray:
    """Latent coordinates Φᵀ(X − mean), k × n."""
    values = _as_array(snapshots)
    if values.shape[0] != basis.d:
        raise DataError(
            f"snapshots have {values.shape[0]} rows but the basis has d={basis.d}",
            code="DIMENSION_MISMATCH",
            details={"expected": basis.d, "actual": int(values.shape[0])},
        )
    return basis.modes.T @ (values - basis.mean[:, None])


def reconstruct(basis: PodBasis, latent: np.ndarray) -> SnapshotMatrix:
    z = np.asarray(latent, dtype=np.float64)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    if z.shape[0] != basis.k:
        raise DataError(
            f"latent matrix has {z.shape[0]} rows but the basis has k={basis.k}",
            code="DIMENSION_MISMATCH",
            details={"expected": basis.k, "actual": int(z.shape[0])},
        )
    return SnapshotMatrix(basis.mean[:, None] + basis.modes @ z, basis.field_name)


def save_basis(basis: PodBasis, directory: PathInput, prefix: str) -> list[str]:
    """Write `<prefix>.json` plus mode and mean CSVs; returns the file names."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    modes_name = f"{prefix}_modes.csv"
    mean_name = f"{prefix}_mean.csv"
    header = {
        "k": basis.k,
        "d": basis.d,
        "achieved_ric": basis.achieved_ric,
        "eigenvalues": [float(v) for v in basis.eigenvalues],
        "field_name": basis.field_name,
        "modes": modes_name,
        "mean": mean_name,
    }
    write_matrix(out / modes_name, basis.modes)
    write_vector(out / mean_name, basis.mean)
    (out / f"{prefix}.json").write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    return [f"{prefix}.json", modes_name, mean_name]


def load_basis(directory: PathInput, prefix: str) -> PodBasis:
    base = Path(directory)
    header_path = base / f"{prefix}.json"
    if not header_path.is_file():
        raise DataError(f"basis header not found: {header_path}", code="MISSING_FILE")
    header = json.loads(header_path.read_text(encoding="utf-8"))
    modes = read_matrix(base / header["modes"])
    mean = read_vector(base / header["mean"])
    if modes.shape != (int(header["d"]), int(header["k"])):
        raise DataError(
            f"{header['modes']}: shape {modes.shape} does not match header k={header['k']}, d={header['d']}",
            code="DIMENSION_MISMATCH",
        )
    return PodBasis(
        modes=modes,
        eigenvalues=np.asarray(header["eigenvalues"], dtype=np.float64),
        mean=mean,
        achieved_ric=float(header["achieved_ric"]),
        field_name=str(header.get("field_name", "field")),
    )
