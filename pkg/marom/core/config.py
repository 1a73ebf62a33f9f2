from __future__ import annotations

from pathlib import Path
import os

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

LOG_LEVELS = ("error", "warning", "info", "debug")


def _resolve_env_file() -> str | None:
    repo_dir = Path(__file__).resolve().parents[2]
    override = os.getenv("MAROM_ENV_FILE")
    candidates: list[Path] = []

    if override:
        ov_path = Path(override)
        if not ov_path.is_absolute():
            ov_path = repo_dir / ov_path
        candidates.append(ov_path)

    candidates.extend(
        [
            repo_dir / ".env.local",
            repo_dir / ".env",
        ]
    )

    for candidate in candidates:
        if candidate.is_file():
            return str(candidate)
    return None


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=_resolve_env_file(), extra="ignore", populate_by_name=True
    )

    log_level: str = Field("info", alias="MAROM_LOG")
    jobs: int = Field(1, alias="MAROM_JOBS", ge=1)
    cost_hi: float = Field(5.4402, alias="MAROM_COST_HI", ge=0.0)
    cost_lo: float = Field(0.5998, alias="MAROM_COST_LO", ge=0.0)
    provenance_timestamps: bool = Field(False, alias="MAROM_PROVENANCE_TIMESTAMPS")

    @field_validator("log_level", mode="before")
    @classmethod
    def _normalize_log_level(cls, v: object) -> object:
        """
        Accept any casing and the common `warn` spelling.

        - INFO  -> info
        - warn  -> warning
        """
        if not isinstance(v, str):
            return v
        level = v.strip().lower()
        if level == "warn":
            level = "warning"
        if level not in LOG_LEVELS:
            raise ValueError(
                f"MAROM_LOG must be one of {', '.join(LOG_LEVELS)} (got {v!r})"
            )
        return level


def load_settings() -> Settings:
    return Settings(_env_file=_resolve_env_file())
