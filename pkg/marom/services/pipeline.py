from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Optional, Sequence, TypeVar, Union

import numpy as np

from marom.core.build_info import get_code_version
from marom.core.config import load_settings
from marom.core.errors import DataError, NumericalError
from marom.schemas.configs import TrainConfig
from marom.services.align import ProcrustesTransform, apply_transform, fit_procrustes
from marom.services.fields import Dataset, DesignMatrix, SnapshotMatrix, split_linked
from marom.services.kriging import (
    HierarchicalKrigingModel,
    InputNormalizer,
    KrigingModel,
    LatentModel,
    fit_hk,
    fit_kriging,
    predict_latent_many,
)
from marom.services.pod import PodBasis, fit_pod, project, reconstruct

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class MaRomModel:
    hi_basis: PodBasis
    lo_basis: PodBasis
    transform: ProcrustesTransform
    latent_models: tuple[HierarchicalKrigingModel, ...]
    config: TrainConfig
    design_names: tuple[str, ...]
    provenance: dict[str, Any] = field(default_factory=dict)

    kind = "marom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "latent_models", tuple(self.latent_models))
        _check_latent_models(self.hi_basis, self.latent_models)

    @property
    def basis(self) -> PodBasis:
        return self.hi_basis

    @property
    def normalizer(self) -> InputNormalizer:
        return self.latent_models[0].normalizer


@dataclass(frozen=True)
class SfRomModel:
    basis: PodBasis
    latent_models: tuple[KrigingModel, ...]
    config: TrainConfig
    design_names: tuple[str, ...]
    provenance: dict[str, Any] = field(default_factory=dict)

    kind = "sfrom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "latent_models", tuple(self.latent_models))
        _check_latent_models(self.basis, self.latent_models)

    @property
    def normalizer(self) -> InputNormalizer:
        return self.latent_models[0].normalizer


RomModel = Union[MaRomModel, SfRomModel]


def _check_latent_models(basis: PodBasis, models: Sequence[LatentModel]) -> None:
    if len(models) != basis.k:
        raise DataError(
            f"model has {len(models)} latent models but the basis has k={basis.k}",
            code="DIMENSION_MISMATCH",
        )
    first = models[0].normalizer
    if any(not m.normalizer.matches(first) for m in models[1:]):
        raise DataError("latent models do not share one input normalizer", code="NORMALIZER_MISMATCH")


def _latent_seed(seed: int, index: int, stage: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, index, stage])


def _run_indexed(fn: Callable[[int], T], count: int, jobs: int) -> list[T]:
    if jobs <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=min(jobs, count)) as pool:
        return list(pool.map(fn, range(count)))


def _with_latent_context(fn: Callable[[int], T]) -> Callable[[int], T]:
    def wrapped(i: int) -> T:
        try:
            return fn(i)
        except NumericalError as exc:
            details = dict(exc.details or {})
            details["latent_index"] = i
            raise NumericalError(f"latent coordinate {i}: {exc.message}", code=exc.code, details=details) from exc

    return wrapped


def _provenance(config: TrainConfig, **fingerprints: str) -> dict[str, Any]:
    created = datetime.now(timezone.utc).isoformat() if load_settings().provenance_timestamps else None
    return {
        **fingerprints,
        "seed": config.seed,
        "code_version": get_code_version(),
        "created_utc": created,
    }


def _check_design_space(hi: DesignMatrix, lo: DesignMatrix) -> None:
    if hi.b != lo.b:
        raise DataError(
            f"hi designs have b={hi.b} parameters but lo designs have b={lo.b}",
            code="DIMENSION_MISMATCH",
            details={"hi": hi.b, "lo": lo.b},
        )
    tol = lo.tolerance
    if np.any(np.abs(hi.bounds - lo.bounds) > tol[:, None]):
        raise DataError("hi and lo datasets declare different design bounds", code="BOUNDS_MISMATCH")


def _common_rank(config: TrainConfig, hi: Dataset, lo: Dataset) -> int:
    if config.k_override is not None:
        return config.k_override
    hi_full = fit_pod(hi.snapshots, ric_threshold=config.ric_threshold)
    lo_full = fit_pod(lo.snapshots, ric_threshold=config.ric_threshold)
    k_hi, k_lo = hi_full.k, lo_full.k
    k = min(max(k_hi, k_lo), hi_full.rank)
    if config.latent_dim_rule == "capped":
        k = min(k, lo_full.rank)
    logger.info(
        "latent_dimension_selected",
        extra={
            "k": k,
            "k_hi": k_hi,
            "k_lo": k_lo,
            "rank_hi": hi_full.rank,
            "rank_lo": lo_full.rank,
            "rule": config.latent_dim_rule,
        },
    )
    return k


def train_marom(hi: Dataset, lo: Dataset, config: Optional[TrainConfig] = None) -> MaRomModel:
    cfg = config or TrainConfig()
    n, m = hi.n, lo.n
    if n < 2:
        raise DataError(f"MA-ROM needs at least 2 high-fidelity samples (got {n})", code="INSUFFICIENT_SAMPLES")
    if m < n:
        raise DataError(
            f"low-fidelity set (m={m}) must be at least as large as the high-fidelity set (n={n})",
            code="INSUFFICIENT_SAMPLES",
            details={"n": n, "m": m},
        )
    _check_design_space(hi.designs, lo.designs)

    _, y_unlinked, permutation = split_linked(lo, hi.designs)
    if y_unlinked.n == 0:
        logger.warning("no_unlinked_low_fidelity_data", extra={"n": n, "m": m})

    k = _common_rank(cfg, hi, lo)
    hi_basis = fit_pod(hi.snapshots, fixed_k=k)
    lo_basis = fit_pod(lo.snapshots, fixed_k=k, allow_padding=cfg.latent_dim_rule == "padded")

    z_hi = project(hi_basis, hi.snapshots)
    w_all = project(lo_basis, lo.snapshots)
    w_linked = w_all[:, permutation[:n]]
    transform = fit_procrustes(z_hi, w_linked)
    z_lo = apply_transform(transform, w_all)
    logger.info(
        "manifolds_aligned",
        extra={"k": k, "n": n, "m": m, "s": transform.s, "residual": transform.residual, "det_q": transform.det_q},
    )

    normalizer = InputNormalizer.from_design(lo.designs)

    def fit_latent(i: int) -> HierarchicalKrigingModel:
        lo_model = fit_kriging(
            lo.designs, z_lo[i], cfg.kriging, seed=_latent_seed(cfg.seed, i, 0), normalizer=normalizer
        )
        return fit_hk(lo_model, hi.designs, z_hi[i], cfg.kriging, seed=_latent_seed(cfg.seed, i, 1))

    latent_models = _run_indexed(_with_latent_context(fit_latent), k, cfg.jobs)
    model = MaRomModel(
        hi_basis=hi_basis,
        lo_basis=lo_basis,
        transform=transform,
        latent_models=tuple(latent_models),
        config=cfg,
        design_names=hi.designs.names,
        provenance=_provenance(cfg, hi_fingerprint=hi.fingerprint(), lo_fingerprint=lo.fingerprint()),
    )
    logger.info("marom_trained", extra={"k": k, "n": n, "m": m, "ric": hi_basis.achieved_ric})
    return model


def train_sfrom(hi: Dataset, config: Optional[TrainConfig] = None) -> SfRomModel:
    cfg = config or TrainConfig()
    if hi.n < 2:
        raise DataError(f"SF-ROM needs at least 2 samples (got {hi.n})", code="INSUFFICIENT_SAMPLES")
    if cfg.k_override is not None:
        basis = fit_pod(hi.snapshots, fixed_k=cfg.k_override)
    else:
        basis = fit_pod(hi.snapshots, ric_threshold=cfg.ric_threshold)
    z = project(basis, hi.snapshots)
    normalizer = InputNormalizer.from_design(hi.designs)

    def fit_latent(i: int) -> KrigingModel:
        return fit_kriging(hi.designs, z[i], cfg.kriging, seed=_latent_seed(cfg.seed, i, 0), normalizer=normalizer)

    latent_models = _run_indexed(_with_latent_context(fit_latent), basis.k, cfg.jobs)
    model = SfRomModel(
        basis=basis,
        latent_models=tuple(latent_models),
        config=cfg,
        design_names=hi.designs.names,
        provenance=_provenance(cfg, hi_fingerprint=hi.fingerprint()),
    )
    logger.info("sfrom_trained", extra={"k": basis.k, "n": hi.n, "ric": basis.achieved_ric})
    return model


def predict_latent(model: RomModel, designs: Union[DesignMatrix, np.ndarray]) -> np.ndarray:
    """Stacked latent predictions, k × N."""
    points = designs.values if isinstance(designs, DesignMatrix) else np.asarray(designs, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    unit = model.normalizer.transform(points)
    outside = int(np.count_nonzero(np.any((unit < 0.0) | (unit > 1.0), axis=0)))
    if outside:
        logger.warning("prediction_extrapolated", extra={"points": outside, "total": int(points.shape[1])})
    return np.vstack([predict_latent_many(lm, points) for lm in model.latent_models])


def predict_fields(model: RomModel, designs: Union[DesignMatrix, np.ndarray]) -> SnapshotMatrix:
    """Predicted fields, one column per design."""
    return reconstruct(model.basis, predict_latent(model, designs))


def predict_marom(model: MaRomModel, p_star: np.ndarray) -> np.ndarray:
    point = np.asarray(p_star, dtype=np.float64).reshape(-1, 1)
    return predict_fields(model, point).values[:, 0]


def predict_sfrom(model: SfRomModel, p_star: np.ndarray) -> np.ndarray:
    point = np.asarray(p_star, dtype=np.float64).reshape(-1, 1)
    return predict_fields(model, point).values[:, 0]


def verify_training_data(model: RomModel, hi: Dataset, lo: Optional[Dataset] = None) -> None:
    """Raise DataError when the datasets differ from the ones the model was trained on."""
    checks = [("hi_fingerprint", hi)]
    if lo is not None:
        checks.append(("lo_fingerprint", lo))
    for key, dataset in checks:
        recorded = model.provenance.get(key)
        if recorded is None:
            raise DataError(f"model provenance has no {key}", code="MISSING_PROVENANCE")
        if recorded != dataset.fingerprint():
            raise DataError(
                f"{key} mismatch: the {dataset.fidelity_tag!r} dataset is not the one this model was trained on",
                code="STALE_MODEL",
                details={"key": key, "recorded": recorded},
            )
