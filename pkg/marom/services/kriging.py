from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, NamedTuple, Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky
from scipy.optimize import minimize

from marom.core.errors import DataError, NumericalError
from marom.schemas.configs import KrigingSettings
from marom.services.fields import DesignMatrix
from marom.services.sampling import SeedLike, lhs_unit

logger = logging.getLogger(__name__)

SQRT3 = math.sqrt(3.0)
SIGMA2_FLOOR = 1e-12
TREND_ZERO_RTOL = 1e-12
NUGGET_GROWTH = 10.0
MULTISTART_LHS_ITERS = 100


def _frozen(values: Any) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class InputNormalizer:
    """Per-dimension affine map from raw design units to [0, 1]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", _frozen(self.lower))
        object.__setattr__(self, "upper", _frozen(self.upper))

    @classmethod
    def from_design(cls, design: DesignMatrix) -> "InputNormalizer":
        return cls(design.bounds[:, 0], design.bounds[:, 1])

    @property
    def b(self) -> int:
        return int(self.lower.shape[0])

    def transform(self, raw: np.ndarray) -> np.ndarray:
        """b×N raw points -> b×N unit-cube coordinates."""
        pts = np.asarray(raw, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.shape[0] != self.b:
            raise DataError(
                f"design points have {pts.shape[0]} parameters, the model expects b={self.b}",
                code="DIMENSION_MISMATCH",
                details={"expected": self.b, "actual": int(pts.shape[0])},
            )
        if not np.all(np.isfinite(pts)):
            raise DataError("design points must be finite", code="NON_FINITE")
        return (pts - self.lower[:, None]) / (self.upper - self.lower)[:, None]

    def matches(self, other: "InputNormalizer") -> bool:
        tol = 1e-12 * (self.upper - self.lower)
        return (
            self.b == other.b
            and bool(np.all(np.abs(self.lower - other.lower) <= tol))
            and bool(np.all(np.abs(self.upper - other.upper) <= tol))
        )

    def to_dict(self) -> dict[str, Any]:
        return {"lower": [float(v) for v in self.lower], "upper": [float(v) for v in self.upper]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "InputNormalizer":
        return cls(np.asarray(data["lower"], dtype=np.float64), np.asarray(data["upper"], dtype=np.float64))


@dataclass(frozen=True)
class KernelParams:
    theta: np.ndarray
    sigma2: float
    nugget: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", _frozen(self.theta))

    def to_dict(self) -> dict[str, Any]:
        return {"theta": [float(v) for v in self.theta], "sigma2": float(self.sigma2), "nugget": float(self.nugget)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "KernelParams":
        return cls(np.asarray(data["theta"], dtype=np.float64), float(data["sigma2"]), float(data["nugget"]))


class Prediction(NamedTuple):
    mean: float
    variance: float
    extrapolated: bool


def correlation(a: np.ndarray, b: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Product Matérn 3/2 correlation between unit-cube point sets (b×n1, b×n2)."""
    out = np.ones((a.shape[1], b.shape[1]), dtype=np.float64)
    for i, th in enumerate(np.asarray(theta, dtype=np.float64)):
        h = SQRT3 * th * np.abs(a[i][:, None] - b[i][None, :])
        out *= (1.0 + h) * np.exp(-h)
    return out


def matern32(p1: np.ndarray, p2: np.ndarray, params: KernelParams) -> float:
    a = np.asarray(p1, dtype=np.float64).reshape(-1, 1)
    b = np.asarray(p2, dtype=np.float64).reshape(-1, 1)
    return float(params.sigma2 * correlation(a, b, params.theta)[0, 0])


@dataclass(frozen=True)
class _Profile:
    """Closed-form GLS quantities for one θ (outputs in scaled units)."""

    log_likelihood: float
    beta: float
    sigma2: float
    chol: np.ndarray
    nugget: float


def _factor(x_unit: np.ndarray, theta: np.ndarray, nugget: float, max_nugget: float) -> tuple[np.ndarray, float]:
    corr = correlation(x_unit, x_unit, theta)
    eye = np.eye(corr.shape[0])
    while True:
        try:
            return cholesky(corr + nugget * eye, lower=True, check_finite=False), nugget
        except LinAlgError:
            if nugget * NUGGET_GROWTH > max_nugget * (1.0 + 1e-9):
                raise
            nugget *= NUGGET_GROWTH


def _profile(
    x_unit: np.ndarray,
    y: np.ndarray,
    trend: np.ndarray,
    theta: np.ndarray,
    settings: KrigingSettings,
) -> Optional[_Profile]:
    try:
        chol, nugget = _factor(x_unit, theta, settings.nugget, settings.max_nugget)
    except LinAlgError:
        return None
    n = y.shape[0]
    rinv_f = cho_solve((chol, True), trend, check_finite=False)
    gram = float(trend @ rinv_f)
    if gram <= 0.0:
        return None
    beta = float(rinv_f @ y) / gram
    resid = y - beta * trend
    sigma2 = max(float(resid @ cho_solve((chol, True), resid, check_finite=False)) / n, SIGMA2_FLOOR)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    log_likelihood = -0.5 * n * math.log(sigma2) - 0.5 * log_det
    return _Profile(log_likelihood, beta, sigma2, chol, nugget)


def multistart_points(settings: KrigingSettings, b: int, seed: SeedLike) -> np.ndarray:
    """Starting log-θ vectors (n_starts × b) from a seeded maximin LHS."""
    lo, hi = (math.log(v) for v in settings.theta_bounds)
    unit = lhs_unit(settings.n_starts, b, seed, MULTISTART_LHS_ITERS)
    return lo + unit * (hi - lo)


def _initial_simplex(x0: np.ndarray, lo: float, hi: float) -> np.ndarray:
    step = 0.1 * (hi - lo)
    simplex = np.tile(x0, (x0.size + 1, 1))
    for i in range(x0.size):
        simplex[i + 1, i] += step if x0[i] + step <= hi else -step
    return simplex


@dataclass(frozen=True)
class _Optimum:
    theta: np.ndarray
    profile: _Profile


def _fit_theta(
    x_unit: np.ndarray,
    y: np.ndarray,
    trend: np.ndarray,
    settings: KrigingSettings,
    seed: SeedLike,
    constant: bool,
) -> _Optimum:
    b = x_unit.shape[0]
    lo, hi = (math.log(v) for v in settings.theta_bounds)

    if settings.fixed_theta is not None or constant:
        if settings.fixed_theta is not None:
            if len(settings.fixed_theta) != b:
                raise DataError(
                    f"fixed_theta has {len(settings.fixed_theta)} entries, inputs have b={b}",
                    code="DIMENSION_MISMATCH",
                )
            theta = np.asarray(settings.fixed_theta, dtype=np.float64)
        else:
            theta = np.full(b, math.exp(0.5 * (lo + hi)))
        profile = _profile(x_unit, y, trend, theta, settings)
        if profile is None:
            raise NumericalError(
                f"correlation matrix is not positive definite up to nugget {settings.max_nugget:g}",
                code="FACTORIZATION_FAILED",
                details={"theta": theta.tolist()},
            )
        return _Optimum(theta, profile)

    def neg_log_likelihood(log_theta: np.ndarray) -> float:
        prof = _profile(x_unit, y, trend, np.exp(np.clip(log_theta, lo, hi)), settings)
        return np.inf if prof is None else -prof.log_likelihood

    best: Optional[tuple[float, np.ndarray]] = None
    for x0 in multistart_points(settings, b, seed):
        start_value = neg_log_likelihood(x0)
        result = minimize(
            neg_log_likelihood,
            x0,
            method="Nelder-Mead",
            bounds=[(lo, hi)] * b,
            options={
                "maxiter": settings.max_iter,
                "xatol": 1e-4,
                "fatol": 1e-10,
                "initial_simplex": _initial_simplex(x0, lo, hi),
            },
        )
        candidate = (float(result.fun), np.clip(result.x, lo, hi))
        if not np.isfinite(candidate[0]) or candidate[0] > start_value:
            candidate = (start_value, x0)
        if np.isfinite(candidate[0]) and (best is None or candidate[0] < best[0]):
            best = candidate

    if best is None:
        raise NumericalError(
            f"likelihood optimization failed from all {settings.n_starts} starts "
            f"(correlation matrix not positive definite up to nugget {settings.max_nugget:g})",
            code="OPTIMIZER_FAILED",
        )
    theta = np.exp(best[1])
    profile = _profile(x_unit, y, trend, theta, settings)
    if profile is None:
        raise NumericalError(
            "correlation matrix factorization failed at the optimum",
            code="FACTORIZATION_FAILED",
            details={"theta": theta.tolist()},
        )
    return _Optimum(theta, profile)


def _refactor(train_inputs: np.ndarray, params: KernelParams) -> np.ndarray:
    corr = correlation(train_inputs, train_inputs, params.theta)
    try:
        return cholesky(corr + params.nugget * np.eye(corr.shape[0]), lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalError("stored Kriging model does not factorize", code="FACTORIZATION_FAILED") from exc


def _check_training(inputs: DesignMatrix, outputs: np.ndarray) -> np.ndarray:
    y = np.asarray(outputs, dtype=np.float64).ravel()
    if y.shape[0] != inputs.n:
        raise DataError(
            f"{inputs.n} design columns but {y.shape[0]} outputs",
            code="DIMENSION_MISMATCH",
            details={"designs": inputs.n, "outputs": int(y.shape[0])},
        )
    if inputs.n < 2:
        raise DataError(f"Kriging needs at least 2 samples (got {inputs.n})", code="INSUFFICIENT_SAMPLES")
    if not np.all(np.isfinite(y)):
        raise DataError("Kriging outputs must be finite", code="NON_FINITE")
    return y


def _log_fit(event: str, settings: KrigingSettings, opt: _Optimum, n: int, **extra: Any) -> None:
    if opt.profile.nugget > settings.nugget:
        logger.warning("kriging_nugget_escalated", extra={"nugget": opt.profile.nugget, "n": n})
    logger.debug(
        event,
        extra={"n": n, "theta": opt.theta.tolist(), "log_likelihood": opt.profile.log_likelihood, **extra},
    )


@dataclass(frozen=True)
class KrigingModel:
    """Ordinary Kriging with constant trend `mu`; `weights` = R⁻¹(y − mu)."""

    train_inputs: np.ndarray
    train_outputs: np.ndarray
    params: KernelParams
    mu: float
    weights: np.ndarray
    normalizer: InputNormalizer
    log_likelihood: float
    correlation_factor: np.ndarray

    def __post_init__(self) -> None:
        for name in ("train_inputs", "train_outputs", "weights", "correlation_factor"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n(self) -> int:
        return int(self.train_inputs.shape[1])

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "kriging",
            "normalizer": self.normalizer.to_dict(),
            "params": self.params.to_dict(),
            "mu": float(self.mu),
            "weights": [float(v) for v in self.weights],
            "log_likelihood": float(self.log_likelihood),
            "train_inputs": [[float(v) for v in row] for row in self.train_inputs],
            "train_outputs": [float(v) for v in self.train_outputs],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "KrigingModel":
        params = KernelParams.from_dict(data["params"])
        train_inputs = np.asarray(data["train_inputs"], dtype=np.float64)
        return cls(
            train_inputs=train_inputs,
            train_outputs=np.asarray(data["train_outputs"], dtype=np.float64),
            params=params,
            mu=float(data["mu"]),
            weights=np.asarray(data["weights"], dtype=np.float64),
            normalizer=InputNormalizer.from_dict(data["normalizer"]),
            log_likelihood=float(data["log_likelihood"]),
            correlation_factor=_refactor(train_inputs, params),
        )


def _standardization(y: np.ndarray) -> tuple[float, float, bool]:
    offset = float(y.mean())
    spread = float(y.std())
    constant = spread == 0.0
    return offset, (1.0 if constant else spread), constant


def kriging_log_likelihood(
    inputs: DesignMatrix,
    outputs: np.ndarray,
    theta: np.ndarray,
    config: Optional[KrigingSettings] = None,
    *,
    normalizer: Optional[InputNormalizer] = None,
) -> float:
    """Concentrated log-likelihood of an ordinary Kriging fit at `theta` (-inf if R will not factorize)."""
    settings = config or KrigingSettings()
    y = _check_training(inputs, outputs)
    norm = normalizer or InputNormalizer.from_design(inputs)
    offset, scale, _ = _standardization(y)
    prof = _profile(norm.transform(inputs.values), (y - offset) / scale, np.ones(inputs.n), np.asarray(theta, dtype=np.float64), settings)
    return -np.inf if prof is None else prof.log_likelihood


def fit_kriging(
    inputs: DesignMatrix,
    outputs: np.ndarray,
    config: Optional[KrigingSettings] = None,
    *,
    seed: SeedLike = 0,
    normalizer: Optional[InputNormalizer] = None,
) -> KrigingModel:
    settings = config or KrigingSettings()
    y = _check_training(inputs, outputs)
    norm = normalizer or InputNormalizer.from_design(inputs)
    x_unit = norm.transform(inputs.values)

    offset, scale, constant = _standardization(y)
    y_scaled = (y - offset) / scale
    ones = np.ones(inputs.n)

    opt = _fit_theta(x_unit, y_scaled, ones, settings, seed, constant)
    prof = opt.profile
    mu = offset + scale * prof.beta
    weights = cho_solve((prof.chol, True), y - mu, check_finite=False)
    if constant:
        weights = np.zeros(inputs.n)
    params = KernelParams(opt.theta, scale * scale * prof.sigma2, prof.nugget)
    _log_fit("kriging_fitted", settings, opt, inputs.n, mu=mu)
    return KrigingModel(
        train_inputs=x_unit,
        train_outputs=y,
        params=params,
        mu=mu,
        weights=weights,
        normalizer=norm,
        log_likelihood=prof.log_likelihood,
        correlation_factor=prof.chol,
    )


def _posterior(
    chol: np.ndarray,
    train_inputs: np.ndarray,
    params: KernelParams,
    trend_train: np.ndarray,
    x_unit: np.ndarray,
    trend_new: np.ndarray,
    weights: np.ndarray,
    beta: float,
) -> tuple[np.ndarray, np.ndarray]:
    r = correlation(train_inputs, x_unit, params.theta)
    mean = beta * trend_new + r.T @ weights
    rinv_r = cho_solve((chol, True), r, check_finite=False)
    rinv_f = cho_solve((chol, True), trend_train, check_finite=False)
    gram = float(trend_train @ rinv_f)
    explained = np.sum(r * rinv_r, axis=0)
    gls = (trend_new - trend_train @ rinv_r) ** 2 / gram
    variance = np.maximum(params.sigma2 * (1.0 - explained + gls), 0.0)
    return mean, variance


def _extrapolated(x_unit: np.ndarray) -> np.ndarray:
    return np.any((x_unit < 0.0) | (x_unit > 1.0), axis=0)


def predict_kriging_many(model: KrigingModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior mean, variance and extrapolation flags for b×N raw points."""
    x_unit = model.normalizer.transform(points)
    mean, variance = _posterior(
        model.correlation_factor,
        model.train_inputs,
        model.params,
        np.ones(model.n),
        x_unit,
        np.ones(x_unit.shape[1]),
        model.weights,
        model.mu,
    )
    return mean, variance, _extrapolated(x_unit)


def predict_kriging(model: KrigingModel, p: np.ndarray) -> Prediction:
    point = np.asarray(p, dtype=np.float64).reshape(-1)
    mean, variance, extrapolated = predict_kriging_many(model, point.reshape(-1, 1))
    return Prediction(float(mean[0]), float(variance[0]), bool(extrapolated[0]))


@dataclass(frozen=True)
class HierarchicalKrigingModel:
    """
    Hierarchical Kriging: mean(p) = beta·g_lo(p) + wᵀr(p), with the
    low-fidelity predictor g_lo as a scaled trend and a Matérn residual.
    """

    lo_model: KrigingModel
    beta: float
    weights: np.ndarray
    params: KernelParams
    train_inputs: np.ndarray
    train_outputs: np.ndarray
    trend: np.ndarray
    log_likelihood: float
    correlation_factor: np.ndarray

    def __post_init__(self) -> None:
        for name in ("weights", "train_inputs", "train_outputs", "trend", "correlation_factor"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def normalizer(self) -> InputNormalizer:
        return self.lo_model.normalizer

    @property
    def n(self) -> int:
        return int(self.train_inputs.shape[1])

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "hierarchical_kriging",
            "beta": float(self.beta),
            "weights": [float(v) for v in self.weights],
            "params": self.params.to_dict(),
            "log_likelihood": float(self.log_likelihood),
            "train_inputs": [[float(v) for v in row] for row in self.train_inputs],
            "train_outputs": [float(v) for v in self.train_outputs],
            "trend": [float(v) for v in self.trend],
            "lo_model": self.lo_model.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "HierarchicalKrigingModel":
        params = KernelParams.from_dict(data["params"])
        train_inputs = np.asarray(data["train_inputs"], dtype=np.float64)
        return cls(
            lo_model=KrigingModel.from_dict(data["lo_model"]),
            beta=float(data["beta"]),
            weights=np.asarray(data["weights"], dtype=np.float64),
            params=params,
            train_inputs=train_inputs,
            train_outputs=np.asarray(data["train_outputs"], dtype=np.float64),
            trend=np.asarray(data["trend"], dtype=np.float64),
            log_likelihood=float(data["log_likelihood"]),
            correlation_factor=_refactor(train_inputs, params),
        )


def fit_hk(
    lo_model: KrigingModel,
    hi_inputs: DesignMatrix,
    hi_outputs: np.ndarray,
    config: Optional[KrigingSettings] = None,
    *,
    seed: SeedLike = 0,
) -> HierarchicalKrigingModel:
    settings = config or KrigingSettings()
    y = _check_training(hi_inputs, hi_outputs)
    norm = lo_model.normalizer
    if not norm.matches(InputNormalizer.from_design(hi_inputs)):
        raise DataError(
            "high-fidelity design bounds differ from the low-fidelity model's design space",
            code="BOUNDS_MISMATCH",
        )
    x_unit = norm.transform(hi_inputs.values)
    trend, _, _ = predict_kriging_many(lo_model, hi_inputs.values)

    lo_scale = max(1.0, float(np.max(np.abs(lo_model.train_outputs))))
    if float(np.max(np.abs(trend))) <= TREND_ZERO_RTOL * lo_scale:
        raise NumericalError(
            "low-fidelity trend is numerically zero at the high-fidelity sites; "
            "the low-fidelity model carries no information here, use a single-fidelity model instead",
            code="DEGENERATE_TREND",
        )

    # Scale only: HK has no intercept, so y and the trend share one factor and beta keeps raw units.
    spread = float(np.std(y))
    scale = spread if spread > 0.0 else max(float(np.max(np.abs(y))), 1.0)
    y_scaled = y / scale
    trend_scaled = trend / scale

    opt = _fit_theta(x_unit, y_scaled, trend_scaled, settings, seed, constant=False)
    prof = opt.profile
    beta = prof.beta
    weights = cho_solve((prof.chol, True), y - beta * trend, check_finite=False)
    params = KernelParams(opt.theta, scale * scale * prof.sigma2, prof.nugget)
    _log_fit("hk_fitted", settings, opt, hi_inputs.n, beta=beta)
    return HierarchicalKrigingModel(
        lo_model=lo_model,
        beta=beta,
        weights=weights,
        params=params,
        train_inputs=x_unit,
        train_outputs=y,
        trend=trend,
        log_likelihood=prof.log_likelihood,
        correlation_factor=prof.chol,
    )


def predict_hk_many(
    model: HierarchicalKrigingModel, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo_mean, _, extrapolated = predict_kriging_many(model.lo_model, points)
    x_unit = model.normalizer.transform(points)
    mean, variance = _posterior(
        model.correlation_factor,
        model.train_inputs,
        model.params,
        model.trend,
        x_unit,
        lo_mean,
        model.weights,
        model.beta,
    )
    return mean, variance, extrapolated


def predict_hk(model: HierarchicalKrigingModel, p: np.ndarray) -> Prediction:
    point = np.asarray(p, dtype=np.float64).reshape(-1)
    mean, variance, extrapolated = predict_hk_many(model, point.reshape(-1, 1))
    return Prediction(float(mean[0]), float(variance[0]), bool(extrapolated[0]))


LatentModel = Union[KrigingModel, HierarchicalKrigingModel]


def predict_latent_many(model: LatentModel, points: np.ndarray) -> np.ndarray:
    if isinstance(model, HierarchicalKrigingModel):
        return predict_hk_many(model, points)[0]
    return predict_kriging_many(model, points)[0]


def latent_model_from_dict(data: dict[str, Any]) -> LatentModel:
    if data.get("kind") == "hierarchical_kriging":
        return HierarchicalKrigingModel.from_dict(data)
    return KrigingModel.from_dict(data)
