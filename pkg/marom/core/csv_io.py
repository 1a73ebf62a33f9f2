from __future__ import annotations

import csv
import re
from os import PathLike
from pathlib import Path
from typing import Union

import numpy as np

from marom.core.errors import DataError

PathInput = Union[str, PathLike[str], Path]

# Plain decimal with '.' separator and optional exponent; no thousands
# separators, no underscores, no locale forms.
_NUMBER_RE = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")
_NON_FINITE_RE = re.compile(r"^[+-]?(?:nan|inf|infinity)$", re.IGNORECASE)

FLOAT_FORMAT = "{:.17g}"


def read_matrix(path: PathInput) -> np.ndarray:
    """Read a headerless numeric CSV into a 2-D float array (rows × columns)."""
    file_path = Path(path)
    if not file_path.is_file():
        raise DataError(
            f"file not found: {file_path}",
            code="MISSING_FILE",
            details={"path": str(file_path)},
        )
    rows: list[list[float]] = []
    width: int | None = None
    with file_path.open(newline="", encoding="utf-8") as fh:
        for row_no, raw in enumerate(csv.reader(fh), start=1):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if width is None:
                width = len(raw)
            elif len(raw) != width:
                raise DataError(
                    f"{file_path.name}: row {row_no} has {len(raw)} columns, expected {width}",
                    code="MALFORMED_CSV",
                    details={"path": str(file_path), "row": row_no, "columns": len(raw)},
                )
            values: list[float] = []
            for col_no, cell in enumerate(raw, start=1):
                token = cell.strip()
                if _NON_FINITE_RE.match(token):
                    raise DataError(
                        f"{file_path.name}: non-finite value {token!r} at row {row_no}, column {col_no}",
                        code="NON_FINITE",
                        details={"path": str(file_path), "row": row_no, "column": col_no},
                    )
                if not _NUMBER_RE.match(token):
                    raise DataError(
                        f"{file_path.name}: cannot parse {token!r} at row {row_no}, column {col_no}",
                        code="MALFORMED_CSV",
                        details={"path": str(file_path), "row": row_no, "column": col_no},
                    )
                values.append(float(token))
            rows.append(values)
    if not rows:
        raise DataError(
            f"{file_path.name}: empty matrix",
            code="MALFORMED_CSV",
            details={"path": str(file_path)},
        )
    matrix = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(matrix)):
        r, c = np.argwhere(~np.isfinite(matrix))[0]
        raise DataError(
            f"{file_path.name}: non-finite value at row {r + 1}, column {c + 1}",
            code="NON_FINITE",
            details={"path": str(file_path), "row": int(r + 1), "column": int(c + 1)},
        )
    return matrix


def write_matrix(path: PathInput, matrix: np.ndarray) -> None:
    """Write a 2-D array as headerless CSV with 17 significant digits."""
    values = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with file_path.open("w", newline="", encoding="utf-8") as fh:
        for row in values:
            fh.write(",".join(FLOAT_FORMAT.format(float(v)) for v in row))
            fh.write("\n")


def write_vector(path: PathInput, vector: np.ndarray) -> None:
    """Write a vector as a single CSV column."""
    write_matrix(path, np.asarray(vector, dtype=np.float64).reshape(-1, 1))


def read_vector(path: PathInput) -> np.ndarray:
    matrix = read_matrix(path)
    if matrix.shape[1] != 1 and matrix.shape[0] != 1:
        raise DataError(
            f"{Path(path).name}: expected a single row or column, got {matrix.shape}",
            code="DIMENSION_MISMATCH",
        )
    return matrix.ravel()
