from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

LatentDimRule = Literal["capped", "padded"]
Scenario = Literal["grid", "topology"]
FieldKind = Literal["displacement", "stress"]


class KrigingSettings(BaseModel):
    """Hyperparameter search and regularization for one Kriging fit."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    theta_bounds: tuple[float, float] = (1e-3, 1e3)
    nugget: float = Field(1e-10, ge=1e-12)
    max_nugget: float = Field(1e-6, ge=1e-12)
    n_starts: int = Field(8, ge=1)
    max_iter: int = Field(200, ge=1)
    fixed_theta: Optional[list[float]] = None

    @field_validator("theta_bounds")
    @classmethod
    def _check_theta_bounds(cls, v: tuple[float, float]) -> tuple[float, float]:
        lo, hi = v
        if not (0.0 < lo < hi):
            raise ValueError(f"theta_bounds must satisfy 0 < lower < upper (got {v})")
        return v

    @model_validator(mode="after")
    def _check_nuggets(self) -> "KrigingSettings":
        if self.max_nugget < self.nugget:
            raise ValueError("max_nugget must be >= nugget")
        if self.fixed_theta is not None:
            lo, hi = self.theta_bounds
            if any(not (lo <= t <= hi) for t in self.fixed_theta):
                raise ValueError(f"fixed_theta must lie within theta_bounds {self.theta_bounds}")
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    ric_threshold: float = Field(0.999999, gt=0.0, le=1.0)
    k_override: Optional[int] = Field(None, ge=1)
    latent_dim_rule: LatentDimRule = "capped"
    kriging: KrigingSettings = Field(default_factory=KrigingSettings)
    seed: int = 0
    jobs: int = Field(1, ge=1)


class LhsConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = Field(..., ge=1)
    bounds: list[tuple[float, float]] = Field(..., min_length=1)
    seed: int = 0
    optimize_iters: int = Field(1000, ge=0)
    names: Optional[list[str]] = None

    @model_validator(mode="after")
    def _check_bounds(self) -> "LhsConfig":
        for i, (lo, hi) in enumerate(self.bounds):
            if not lo < hi:
                raise ValueError(f"bounds[{i}]: lower must be < upper (got {lo}, {hi})")
        if self.names is not None and len(self.names) != len(self.bounds):
            raise ValueError("names must match bounds length")
        return self


class StudyConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario: Scenario = "grid"
    field: FieldKind = "displacement"
    n_values: list[int] = Field(..., min_length=1)
    tau_values: list[float] = Field(default_factory=lambda: [2.0, 4.0, 8.0], min_length=1)
    reps: int = Field(20, ge=1)
    test_size: int = Field(200, ge=1)
    seed: int = 0
    cost_hi: float = Field(5.4402, ge=0.0)
    cost_lo: float = Field(0.5998, ge=0.0)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @field_validator("n_values")
    @classmethod
    def _check_n(cls, v: list[int]) -> list[int]:
        if any(n < 2 for n in v):
            raise ValueError("n_values must all be >= 2")
        return v

    @field_validator("tau_values")
    @classmethod
    def _check_tau(cls, v: list[float]) -> list[float]:
        if any(t < 1.0 for t in v):
            raise ValueError("tau_values must all be >= 1")
        return v
