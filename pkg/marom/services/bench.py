"""
Analytic cantilever benchmark with two multi-fidelity scenarios and the
repetition-averaged study runner.

Scenario "grid": high fidelity on a fine uniform grid, low fidelity on a
coarse uniform grid with simplified physics. Scenario "topology": the
auxiliary dataset sits on a cosine-clustered grid and drops the tip-load
term entirely.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
from tqdm import tqdm

from marom.core.csv_io import FLOAT_FORMAT, PathInput
from marom.core.errors import DataError, MaromError, NumericalError
from marom.schemas.artifacts import StudyRow
from marom.schemas.configs import FieldKind, LhsConfig, Scenario, StudyConfig
from marom.services.fields import Dataset, SnapshotMatrix, merge_designs, save_dataset
from marom.services.metrics import normalized_error, training_cost
from marom.services.pipeline import predict_fields, train_marom, train_sfrom
from marom.services.sampling import lhs_maximin

logger = logging.getLogger(__name__)

BEAM_NAMES = ("L", "q", "taper", "F")
BEAM_BOUNDS = ((8.0, 12.0), (0.5, 2.0), (0.2, 0.8), (0.0, 1.0))

COST_HI = 5.4402
COST_LO = 0.5998

MAX_FAILED_FRACTION = 0.5


@dataclass(frozen=True)
class BeamProblem:
    d_hi: int = 201
    d_lo: int = 41
    d_aux: int = 151
    bounds: tuple[tuple[float, float], ...] = BEAM_BOUNDS
    names: tuple[str, ...] = BEAM_NAMES
    ei: float = 1.0
    lo_tip_load_factor: float = 0.5

    def __post_init__(self) -> None:
        if not self.d_hi > self.d_lo >= 5:
            raise DataError(f"grid sizes must satisfy d_hi > d_lo >= 5 (got {self.d_hi}, {self.d_lo})")
        if self.d_aux < 5:
            raise DataError(f"auxiliary grid needs at least 5 nodes (got {self.d_aux})")
        if self.ei <= 0:
            raise DataError("stiffness EI must be positive")

    @property
    def hi_grid(self) -> np.ndarray:
        return uniform_grid(self.d_hi)

    @property
    def lo_grid(self) -> np.ndarray:
        return uniform_grid(self.d_lo)

    @property
    def aux_grid(self) -> np.ndarray:
        return cosine_grid(self.d_aux)

    @property
    def bounds_array(self) -> np.ndarray:
        return np.asarray(self.bounds, dtype=np.float64)


def uniform_grid(d: int) -> np.ndarray:
    """Normalized nodes ξ ∈ [0, 1], equally spaced."""
    return np.linspace(0.0, 1.0, d)


def cosine_grid(d: int) -> np.ndarray:
    """Normalized nodes clustered toward both ends: ξ_j = (1 − cos(πj/(d−1)))/2."""
    j = np.arange(d, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(np.pi * j / (d - 1)))


def _check_points(points: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.shape[0] != bounds.shape[0]:
        raise DataError(
            f"beam designs need {bounds.shape[0]} parameters (got {pts.shape[0]})",
            code="DIMENSION_MISMATCH",
        )
    outside = (pts < bounds[:, :1]) | (pts > bounds[:, 1:]) | ~np.isfinite(pts)
    if np.any(outside):
        r, c = np.argwhere(outside)[0]
        raise DataError(
            f"beam parameter {BEAM_NAMES[r] if r < len(BEAM_NAMES) else r} = {pts[r, c]} "
            f"outside [{bounds[r, 0]}, {bounds[r, 1]}]",
            code="OUT_OF_BOUNDS",
        )
    return pts


def _beam(
    points: np.ndarray,
    kind: FieldKind,
    grid: np.ndarray,
    *,
    ei: float,
    taper_on: bool,
    tip_factor: float,
) -> np.ndarray:
    """Closed-form cantilever fields, d × N for N designs (columns of `points`)."""
    length, q, taper, tip = (points[i][None, :] for i in range(4))
    xi = np.asarray(grid, dtype=np.float64)[:, None]
    x = xi * length
    tip = tip * tip_factor
    if kind == "displacement":
        base = (
            q * x**2 * (6.0 * length**2 - 4.0 * length * x + x**2) / (24.0 * ei)
            + tip * x**2 * (3.0 * length - x) / (6.0 * ei)
        )
    elif kind == "stress":
        base = q * (length - x) ** 2 / 2.0 + tip * (length - x)
    else:
        raise DataError(f"unknown field kind {kind!r}", code="INVALID_FIELD")
    if taper_on:
        base = base * (1.0 + taper * xi**2)
    return base


def beam_fields_hi(
    points: np.ndarray, kind: FieldKind, grid: np.ndarray, problem: Optional[BeamProblem] = None
) -> np.ndarray:
    prob = problem or BeamProblem()
    pts = _check_points(points, prob.bounds_array)
    return _beam(pts, kind, grid, ei=prob.ei, taper_on=True, tip_factor=1.0)


def beam_fields_lo(
    points: np.ndarray,
    kind: FieldKind,
    grid: np.ndarray,
    problem: Optional[BeamProblem] = None,
    *,
    tip_load_factor: Optional[float] = None,
) -> np.ndarray:
    prob = problem or BeamProblem()
    pts = _check_points(points, prob.bounds_array)
    factor = prob.lo_tip_load_factor if tip_load_factor is None else tip_load_factor
    return _beam(pts, kind, grid, ei=prob.ei, taper_on=False, tip_factor=factor)


def beam_field_hi(p: np.ndarray, kind: FieldKind, grid: np.ndarray, problem: Optional[BeamProblem] = None) -> np.ndarray:
    return beam_fields_hi(np.asarray(p, dtype=np.float64).reshape(-1, 1), kind, grid, problem)[:, 0]


def beam_field_lo(
    p: np.ndarray,
    kind: FieldKind,
    grid: np.ndarray,
    problem: Optional[BeamProblem] = None,
    *,
    tip_load_factor: Optional[float] = None,
) -> np.ndarray:
    pts = np.asarray(p, dtype=np.float64).reshape(-1, 1)
    return beam_fields_lo(pts, kind, grid, problem, tip_load_factor=tip_load_factor)[:, 0]


def _node_ids(grid: np.ndarray) -> tuple[str, ...]:
    return tuple(FLOAT_FORMAT.format(float(v)) for v in grid)


def generate_scenario(
    problem: BeamProblem,
    scenario: Scenario,
    field_kind: FieldKind,
    n: int,
    m: int,
    seed: int,
    *,
    test_size: int = 200,
    cost_hi: float = COST_HI,
    cost_lo: float = COST_LO,
    lhs_iters: int = 1000,
) -> tuple[Dataset, Dataset, Dataset]:
    """
    Build (hi, lo, test) datasets. The first n low-fidelity designs are the
    high-fidelity designs; test designs come from the same maximin pool and
    never coincide with training designs.
    """
    if n < 1:
        raise DataError(f"n must be >= 1 (got {n})")
    if m < n:
        raise DataError(f"m must be >= n (got n={n}, m={m})", code="INSUFFICIENT_SAMPLES")
    if test_size < 1:
        raise DataError(f"test_size must be >= 1 (got {test_size})")
    if scenario not in ("grid", "topology"):
        raise DataError(f"unknown scenario {scenario!r}", code="INVALID_SCENARIO")

    pool = lhs_maximin(
        LhsConfig(
            n=m + test_size,
            bounds=list(problem.bounds),
            seed=seed,
            optimize_iters=lhs_iters,
            names=list(problem.names),
        )
    )
    order = np.random.default_rng([seed, 1]).permutation(pool.n)
    lo_idx, test_idx = order[:m], order[m:]
    hi_designs = pool.take(lo_idx[:n])
    lo_designs = merge_designs(hi_designs, pool.take(lo_idx[n:]))[0] if m > n else hi_designs

    hi_grid = problem.hi_grid
    hi = Dataset(
        hi_designs,
        SnapshotMatrix(beam_fields_hi(hi_designs.values, field_kind, hi_grid, problem), field_kind, _node_ids(hi_grid)),
        "hi",
        cost_hi,
    )
    if scenario == "grid":
        lo_grid, tag, tip = problem.lo_grid, "lo", None
    else:
        lo_grid, tag, tip = problem.aux_grid, "aux", 0.0
    lo = Dataset(
        lo_designs,
        SnapshotMatrix(
            beam_fields_lo(lo_designs.values, field_kind, lo_grid, problem, tip_load_factor=tip),
            field_kind,
            _node_ids(lo_grid),
        ),
        tag,
        cost_lo,
    )
    test_designs = pool.take(test_idx)
    test = Dataset(
        test_designs,
        SnapshotMatrix(beam_fields_hi(test_designs.values, field_kind, hi_grid, problem), field_kind, _node_ids(hi_grid)),
        "test",
        0.0,
    )
    logger.debug(
        "scenario_generated",
        extra={"scenario": scenario, "field": field_kind, "n": n, "m": m, "test_size": test_size, "seed": seed},
    )
    return hi, lo, test


@dataclass(frozen=True)
class RepOutcome:
    n: int
    tau: float
    rep: int
    seed: int
    e_marom: Optional[float] = None
    e_sfrom: Optional[float] = None
    error: Optional[str] = None


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list[StudyRow] = field(default_factory=list)
    baseline: list[StudyRow] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    outcomes: list[RepOutcome] = field(default_factory=list)


def cell_m(n: int, tau: float) -> int:
    return int(round(tau * n))


def rep_seed(seed: int, n: int, tau: float, rep: int) -> int:
    state = np.random.SeedSequence([seed, n, int(round(1000 * tau)), rep]).generate_state(1)
    return int(state[0])


def run_rep(config: StudyConfig, n: int, tau: float, rep: int, problem: Optional[BeamProblem] = None) -> RepOutcome:
    prob = problem or BeamProblem()
    seed = rep_seed(config.seed, n, tau, rep)
    try:
        hi, lo, test = generate_scenario(
            prob,
            config.scenario,
            config.field,
            n,
            cell_m(n, tau),
            seed,
            test_size=config.test_size,
            cost_hi=config.cost_hi,
            cost_lo=config.cost_lo,
        )
        train_cfg = config.train.model_copy(update={"seed": seed, "jobs": 1})
        ma = train_marom(hi, lo, train_cfg)
        sf = train_sfrom(hi, train_cfg)
        truths = test.snapshots
        e_ma = normalized_error(predict_fields(ma, test.designs), truths, ma.basis.mean)
        e_sf = normalized_error(predict_fields(sf, test.designs), truths, sf.basis.mean)
    except MaromError as exc:
        logger.warning("study_rep_failed", extra={"n": n, "tau": tau, "rep": rep, "seed": seed, "error": exc.message})
        return RepOutcome(n, tau, rep, seed, error=exc.message)
    return RepOutcome(n, tau, rep, seed, e_marom=e_ma, e_sfrom=e_sf)


def _stats(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def run_study(
    config: StudyConfig,
    *,
    jobs: int = 1,
    progress: bool = False,
    problem: Optional[BeamProblem] = None,
) -> StudyResult:
    tasks = [(n, tau, rep) for n in config.n_values for tau in config.tau_values for rep in range(config.reps)]
    logger.info(
        "study_started",
        extra={"scenario": config.scenario, "field": config.field, "tasks": len(tasks), "jobs": jobs},
    )
    outcomes: dict[tuple[int, float, int], RepOutcome] = {}
    with tqdm(total=len(tasks), disable=not progress, file=sys.stderr, desc="study") as bar:
        if jobs <= 1:
            for task in tasks:
                outcomes[task] = run_rep(config, *task, problem=problem)
                bar.update(1)
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = {pool.submit(run_rep, config, *task, problem=problem): task for task in tasks}
                for future in as_completed(futures):
                    outcomes[futures[future]] = future.result()
                    bar.update(1)

    result = StudyResult(config=config, outcomes=[outcomes[t] for t in tasks])
    cells: list[dict[str, Any]] = []
    sf_by_n: dict[int, list[float]] = {}
    for n in config.n_values:
        for tau in config.tau_values:
            reps = [outcomes[(n, tau, rep)] for rep in range(config.reps)]
            ok = [o for o in reps if o.error is None]
            failed = len(reps) - len(ok)
            if failed > MAX_FAILED_FRACTION * len(reps) or not ok:
                first = next(o for o in reps if o.error is not None)
                raise NumericalError(
                    f"study cell n={n}, tau={tau:g} failed in {failed}/{len(reps)} reps "
                    f"(first failure at seed {first.seed}: {first.error})",
                    code="STUDY_CELL_FAILED",
                    details={"n": n, "tau": tau, "seed": first.seed, "failed": failed, "reps": len(reps)},
                )
            m = cell_m(n, tau)
            ma_mean, ma_std = _stats([o.e_marom for o in ok])
            sf_mean, sf_std = _stats([o.e_sfrom for o in ok])
            sf_by_n.setdefault(n, []).extend(o.e_sfrom for o in ok)
            result.rows.append(
                StudyRow(
                    n=n,
                    m=m,
                    tau=float(tau),
                    e_norm_mean=ma_mean,
                    e_norm_std=ma_std,
                    cost_cpusec=training_cost(n, m, config.cost_hi, config.cost_lo),
                    reps=len(ok),
                )
            )
            cells.append(
                {
                    "n": n,
                    "m": m,
                    "tau": float(tau),
                    "reps": len(ok),
                    "failed": failed,
                    "e_norm_mean": ma_mean,
                    "e_norm_std": ma_std,
                    "sf_e_norm_mean": sf_mean,
                    "sf_e_norm_std": sf_std,
                    "improvement": 1.0 - ma_mean / sf_mean if sf_mean > 0 else None,
                }
            )
    for n in config.n_values:
        sf_mean, sf_std = _stats(sf_by_n[n])
        result.baseline.append(
            StudyRow(
                n=n,
                m=0,
                tau=0.0,
                e_norm_mean=sf_mean,
                e_norm_std=sf_std,
                cost_cpusec=training_cost(n, 0, config.cost_hi, config.cost_lo),
                reps=len(sf_by_n[n]),
            )
        )
    result.summary = {
        "scenario": config.scenario,
        "field": config.field,
        "seed": config.seed,
        "reps": config.reps,
        "test_size": config.test_size,
        "cost_hi": config.cost_hi,
        "cost_lo": config.cost_lo,
        "cells": cells,
    }
    logger.info("study_finished", extra={"cells": len(cells)})
    return result


def _format_cell(value: Any) -> str:
    if isinstance(value, float):
        return FLOAT_FORMAT.format(value)
    return str(value)


def write_table(path: PathInput, rows: list[StudyRow]) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    columns = StudyRow.columns()
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            data = row.model_dump()
            writer.writerow([_format_cell(data[c]) for c in columns])


def write_study(result: StudyResult, directory: PathInput) -> dict[str, str]:
    """Write study.csv, baseline.csv and summary.json; returns the paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "study": out / "study.csv",
        "baseline": out / "baseline.csv",
        "summary": out / "summary.json",
    }
    write_table(paths["study"], result.rows)
    write_table(paths["baseline"], result.baseline)
    paths["summary"].write_text(json.dumps(result.summary, indent=2) + "\n", encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}


def dump_scenario(
    datasets: tuple[Dataset, Dataset, Dataset], directory: PathInput
) -> dict[str, str]:
    """Save (hi, lo, test) in the dataset manifest format."""
    out = Path(directory)
    names = ("hi", "lo", "test")
    return {name: str(save_dataset(ds, out / f"{name}.json")) for name, ds in zip(names, datasets)}
