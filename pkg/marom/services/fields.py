from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import ValidationError

from marom.core.csv_io import PathInput, read_matrix, write_matrix
from marom.core.errors import DataError
from marom.schemas.artifacts import DatasetManifest

logger = logging.getLogger(__name__)

DESIGN_MATCH_RTOL = 1e-12


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def _match_tolerance(bounds: np.ndarray) -> np.ndarray:
    return DESIGN_MATCH_RTOL * (bounds[:, 1] - bounds[:, 0])


def _duplicate_pairs(values: np.ndarray, tol: np.ndarray) -> list[tuple[int, int]]:
    b, n = values.shape
    close = np.ones((n, n), dtype=bool)
    for i in range(b):
        row = values[i]
        close &= np.abs(row[:, None] - row[None, :]) <= tol[i]
    np.fill_diagonal(close, False)
    idx = np.argwhere(np.triu(close))
    return [(int(a), int(c)) for a, c in idx]


@dataclass(frozen=True)
class DesignMatrix:
    """b design parameters × n samples, with per-parameter bounds."""

    values: np.ndarray
    names: tuple[str, ...]
    bounds: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        bounds = np.asarray(self.bounds, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "bounds", _frozen(bounds))
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))

        b, n = self.values.shape
        if b < 1 or n < 1:
            raise DataError(f"design matrix must be non-empty (got {b}×{n})", code="EMPTY_MATRIX")
        if self.bounds.shape[0] != b:
            raise DataError(
                f"design matrix has {b} parameters but {self.bounds.shape[0]} bounds",
                code="DIMENSION_MISMATCH",
            )
        if len(self.names) != b:
            raise DataError(
                f"design matrix has {b} parameters but {len(self.names)} names",
                code="DIMENSION_MISMATCH",
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("design matrix contains non-finite values", code="NON_FINITE")
        if np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise DataError("design bounds must satisfy lower < upper", code="INVALID_BOUNDS")
        outside = (self.values < self.bounds[:, :1]) | (self.values > self.bounds[:, 1:])
        if np.any(outside):
            r, c = np.argwhere(outside)[0]
            raise DataError(
                f"design column {c} parameter {self.names[r]!r} = {self.values[r, c]} "
                f"outside bounds [{self.bounds[r, 0]}, {self.bounds[r, 1]}]",
                code="OUT_OF_BOUNDS",
                details={"column": int(c), "parameter": self.names[r]},
            )
        dups = _duplicate_pairs(self.values, self.tolerance)
        if dups:
            a, c = dups[0]
            raise DataError(
                f"design columns {a} and {c} are duplicates",
                code="DUPLICATE_DESIGN",
                details={"columns": [a, c]},
            )

    @property
    def b(self) -> int:
        return int(self.values.shape[0])

    @property
    def n(self) -> int:
        return int(self.values.shape[1])

    @property
    def tolerance(self) -> np.ndarray:
        return _match_tolerance(self.bounds)

    def column(self, j: int) -> np.ndarray:
        return self.values[:, j]

    def take(self, columns: Sequence[int]) -> "DesignMatrix":
        return DesignMatrix(self.values[:, list(columns)], self.names, self.bounds)


@dataclass(frozen=True)
class SnapshotMatrix:
    """d field degrees of freedom × n samples; one column per sample."""

    values: np.ndarray
    field_name: str = "field"
    node_ids: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2:
            raise DataError(f"snapshot matrix must be 2-D (got ndim={values.ndim})")
        object.__setattr__(self, "values", _frozen(values))
        node_ids = tuple(str(v) for v in self.node_ids) or tuple(
            str(i) for i in range(values.shape[0])
        )
        object.__setattr__(self, "node_ids", node_ids)
        if len(self.node_ids) != self.d:
            raise DataError(
                f"snapshot matrix has {self.d} rows but {len(self.node_ids)} node ids",
                code="DIMENSION_MISMATCH",
            )
        if not np.all(np.isfinite(self.values)):
            r, c = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(
                f"snapshot matrix has a non-finite value at row {r}, column {c}",
                code="NON_FINITE",
                details={"row": int(r), "column": int(c)},
            )

    @property
    def d(self) -> int:
        return int(self.values.shape[0])

    @property
    def n(self) -> int:
        return int(self.values.shape[1])

    def take(self, columns: Sequence[int]) -> "SnapshotMatrix":
        return SnapshotMatrix(self.values[:, list(columns)], self.field_name, self.node_ids)


@dataclass(frozen=True)
class Dataset:
    designs: DesignMatrix
    snapshots: SnapshotMatrix
    fidelity_tag: str
    cost_per_sample: float = 0.0

    def __post_init__(self) -> None:
        if self.designs.n != self.snapshots.n:
            raise DataError(
                f"designs have {self.designs.n} columns but snapshots have {self.snapshots.n}",
                code="DIMENSION_MISMATCH",
                details={"designs": self.designs.n, "snapshots": self.snapshots.n},
            )
        if self.cost_per_sample < 0:
            raise DataError("cost_per_sample must be nonnegative", code="INVALID_COST")

    @property
    def n(self) -> int:
        return self.designs.n

    def take(self, columns: Sequence[int]) -> "Dataset":
        return Dataset(
            self.designs.take(columns),
            self.snapshots.take(columns),
            self.fidelity_tag,
            self.cost_per_sample,
        )

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.designs.values).tobytes())
        digest.update(np.ascontiguousarray(self.designs.bounds).tobytes())
        digest.update(np.ascontiguousarray(self.snapshots.values).tobytes())
        digest.update(self.fidelity_tag.encode("utf-8"))
        return digest.hexdigest()


@dataclass(frozen=True)
class CenteredSnapshots:
    values: np.ndarray
    mean: np.ndarray


def center(snapshots: SnapshotMatrix) -> CenteredSnapshots:
    if snapshots.values.size == 0:
        raise DataError("cannot center an empty snapshot matrix", code="EMPTY_MATRIX")
    mean = snapshots.values.mean(axis=1)
    return CenteredSnapshots(_frozen(snapshots.values - mean[:, None]), _frozen(mean))


def find_design(designs: DesignMatrix, point: np.ndarray) -> list[int]:
    """Indices of columns matching `point` within the per-parameter tolerance."""
    diff = np.abs(designs.values - np.asarray(point, dtype=np.float64)[:, None])
    hit = np.all(diff <= designs.tolerance[:, None], axis=0)
    return [int(j) for j in np.flatnonzero(hit)]


def split_linked(
    lo: Dataset, linked_designs: DesignMatrix
) -> tuple[SnapshotMatrix, SnapshotMatrix, list[int]]:
    """
    Partition low-fidelity snapshots into linked (ordered like
    `linked_designs`) and unlinked columns.

    The returned permutation lists lo column indices: linked ones first,
    then the unlinked ones in their original order.
    """
    if linked_designs.b != lo.designs.b:
        raise DataError(
            f"linked designs have {linked_designs.b} parameters, lo designs have {lo.designs.b}",
            code="DIMENSION_MISMATCH",
        )
    linked_idx: list[int] = []
    for j in range(linked_designs.n):
        hits = find_design(lo.designs, linked_designs.column(j))
        if not hits:
            raise DataError(
                f"linked design column {j} not found among low-fidelity designs",
                code="UNLINKED_DESIGN",
                details={"column": j},
            )
        if len(hits) > 1:
            raise DataError(
                f"linked design column {j} matches {len(hits)} low-fidelity columns {hits}",
                code="AMBIGUOUS_LINK",
                details={"column": j, "matches": hits},
            )
        linked_idx.append(hits[0])
    linked_set = set(linked_idx)
    unlinked_idx = [j for j in range(lo.n) if j not in linked_set]
    permutation = linked_idx + unlinked_idx
    return lo.snapshots.take(linked_idx), lo.snapshots.take(unlinked_idx), permutation


def merge_designs(linked: DesignMatrix, extra: DesignMatrix) -> tuple[DesignMatrix, list[int]]:
    """
    Append `extra` designs after `linked`, dropping extras that repeat a
    linked design. Returns the merged matrix and the kept `extra` indices.
    """
    kept: list[int] = []
    for j in range(extra.n):
        if find_design(linked, extra.column(j)):
            logger.warning("duplicate_unlinked_design_dropped", extra={"extra_column": j})
            continue
        kept.append(j)
    values = np.hstack([linked.values, extra.values[:, kept]])
    return DesignMatrix(values, linked.names, linked.bounds), kept


def _parse_manifest(path: Path) -> DatasetManifest:
    if not path.is_file():
        raise DataError(f"manifest not found: {path}", code="MISSING_FILE", details={"path": str(path)})
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(
            f"{path.name}: invalid JSON at line {exc.lineno}, column {exc.colno}",
            code="MALFORMED_MANIFEST",
        ) from exc
    try:
        return DatasetManifest.model_validate(raw)
    except ValidationError as exc:
        raise DataError(
            f"{path.name}: invalid manifest: {exc.errors()[0]['msg']}",
            code="MALFORMED_MANIFEST",
            details={"errors": [str(e["loc"]) for e in exc.errors()]},
        ) from exc


def _first_occurrences(values: np.ndarray, bounds: np.ndarray) -> list[int]:
    repeats: dict[int, int] = {}
    for a, c in _duplicate_pairs(values, _match_tolerance(bounds)):
        repeats.setdefault(c, a)
    for c, a in sorted(repeats.items()):
        logger.warning("duplicate_design_dropped", extra={"column": c, "repeats": a})
    return [j for j in range(values.shape[1]) if j not in repeats]


def load_dataset(manifest_path: PathInput, *, deduplicate: bool = False) -> Dataset:
    """
    Read a dataset manifest and its CSVs. With `deduplicate`, a design
    column repeating an earlier one is dropped (first occurrence wins)
    together with its snapshot; otherwise repeats are a DUPLICATE_DESIGN
    error.
    """
    path = Path(manifest_path)
    manifest = _parse_manifest(path)
    base = path.parent
    designs = read_matrix(base / manifest.designs)
    snapshots = read_matrix(base / manifest.snapshots)
    if designs.shape[1] != snapshots.shape[1]:
        raise DataError(
            f"designs have {designs.shape[1]} columns but snapshots have {snapshots.shape[1]}",
            code="DIMENSION_MISMATCH",
            details={"designs": int(designs.shape[1]), "snapshots": int(snapshots.shape[1])},
        )
    bounds = np.asarray(manifest.bounds, dtype=np.float64).reshape(-1, 2)
    if deduplicate and designs.shape[0] == bounds.shape[0]:
        kept = _first_occurrences(designs, bounds)
        if len(kept) < designs.shape[1]:
            designs, snapshots = designs[:, kept], snapshots[:, kept]
    dataset = Dataset(
        designs=DesignMatrix(designs, tuple(manifest.names), bounds),
        snapshots=SnapshotMatrix(
            snapshots, manifest.field_name, tuple(manifest.node_ids or ())
        ),
        fidelity_tag=manifest.fidelity,
        cost_per_sample=manifest.cost_per_sample,
    )
    logger.debug(
        "dataset_loaded",
        extra={"manifest": str(path), "b": dataset.designs.b, "d": dataset.snapshots.d, "n": dataset.n},
    )
    return dataset


def save_dataset(dataset: Dataset, manifest_path: PathInput) -> Path:
    path = Path(manifest_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    designs_name = f"{stem}_designs.csv"
    snapshots_name = f"{stem}_snapshots.csv"
    write_matrix(path.parent / designs_name, dataset.designs.values)
    write_matrix(path.parent / snapshots_name, dataset.snapshots.values)
    manifest = DatasetManifest(
        designs=designs_name,
        snapshots=snapshots_name,
        fidelity=dataset.fidelity_tag,
        cost_per_sample=dataset.cost_per_sample,
        bounds=[(float(lo), float(hi)) for lo, hi in dataset.designs.bounds],
        names=list(dataset.designs.names),
        field_name=dataset.snapshots.field_name,
        node_ids=list(dataset.snapshots.node_ids),
    )
    path.write_text(json.dumps(manifest.model_dump(), indent=2) + "\n", encoding="utf-8")
    return path
