from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

BUNDLE_FORMAT = "marom-v1"


class DatasetManifest(BaseModel):
    """On-disk description of one Dataset (paths relative to the manifest)."""

    model_config = ConfigDict(extra="forbid")

    designs: str
    snapshots: str
    fidelity: str
    cost_per_sample: float = Field(..., ge=0.0)
    bounds: list[tuple[float, float]] = Field(..., min_length=1)
    names: list[str] = Field(..., min_length=1)
    field_name: str
    node_ids: Optional[list[str]] = None

    @model_validator(mode="after")
    def _check_lengths(self) -> "DatasetManifest":
        if len(self.names) != len(self.bounds):
            raise ValueError(
                f"names has {len(self.names)} entries but bounds has {len(self.bounds)}"
            )
        return self


class ErrorReport(BaseModel):
    e_abs: float = Field(..., ge=0.0)
    e_norm: float = Field(..., ge=0.0)
    n_test: int = Field(..., ge=1)
    per_sample_norms: list[float]
    worst_index: int = Field(..., ge=0)
    denominator: Literal["training", "test", "custom"] = "custom"


class StudyRow(BaseModel):
    n: int
    m: int
    tau: float
    e_norm_mean: float
    e_norm_std: float
    cost_cpusec: float
    reps: int

    @classmethod
    def columns(cls) -> list[str]:
        return list(cls.model_fields)


class ModelBundleManifest(BaseModel):
    format: Literal["marom-v1"] = BUNDLE_FORMAT
    kind: Literal["marom", "sfrom"]
    k: int
    d: int
    b: int
    field_name: str
    design_names: list[str]
    config: dict[str, Any]
    provenance: dict[str, Any]
    latent_models: list[str]
    files: dict[str, str] = Field(default_factory=dict)
