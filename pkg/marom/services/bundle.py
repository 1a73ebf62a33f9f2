from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from marom.core.csv_io import PathInput
from marom.core.errors import DataError
from marom.schemas.artifacts import BUNDLE_FORMAT, ModelBundleManifest
from marom.schemas.configs import TrainConfig
from marom.services.align import ProcrustesTransform
from marom.services.kriging import HierarchicalKrigingModel, KrigingModel, latent_model_from_dict
from marom.services.pipeline import MaRomModel, RomModel, SfRomModel
from marom.services.pod import load_basis, save_basis

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TRANSFORM_NAME = "transform.json"


def _dump(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _latent_name(i: int) -> str:
    return f"latent_{i:03d}.json"


def save_model(model: RomModel, directory: PathInput) -> Path:
    """Write a model bundle directory; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}

    if isinstance(model, MaRomModel):
        save_basis(model.hi_basis, out, "hi_basis")
        save_basis(model.lo_basis, out, "lo_basis")
        _dump(out / TRANSFORM_NAME, model.transform.to_dict())
        files.update(basis="hi_basis", lo_basis="lo_basis", transform=TRANSFORM_NAME)
    else:
        save_basis(model.basis, out, "basis")
        files.update(basis="basis")

    latent_names = []
    for i, latent in enumerate(model.latent_models):
        name = _latent_name(i)
        _dump(out / name, latent.to_dict())
        latent_names.append(name)

    manifest = ModelBundleManifest(
        kind=model.kind,
        k=model.basis.k,
        d=model.basis.d,
        b=model.normalizer.b,
        field_name=model.basis.field_name,
        design_names=list(model.design_names),
        config=model.config.model_dump(mode="json"),
        provenance=model.provenance,
        latent_models=latent_names,
        files=files,
    )
    path = out / MANIFEST_NAME
    _dump(path, manifest.model_dump(mode="json"))
    logger.info("model_saved", extra={"path": str(out), "kind": model.kind, "k": model.basis.k})
    return path


def _read_json(path: Path) -> Any:
    if not path.is_file():
        raise DataError(f"bundle file not found: {path}", code="MISSING_FILE", details={"path": str(path)})
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path.name}: invalid JSON ({exc.msg})", code="MALFORMED_BUNDLE") from exc


def load_model(directory: PathInput) -> RomModel:
    base = Path(directory)
    raw = _read_json(base / MANIFEST_NAME)
    if isinstance(raw, dict) and raw.get("format") != BUNDLE_FORMAT:
        raise DataError(
            f"unsupported bundle format {raw.get('format')!r} (expected {BUNDLE_FORMAT!r})",
            code="UNSUPPORTED_FORMAT",
        )
    try:
        manifest = ModelBundleManifest.model_validate(raw)
        config = TrainConfig.model_validate(manifest.config)
    except ValidationError as exc:
        raise DataError(f"invalid bundle manifest: {exc.errors()[0]['msg']}", code="MALFORMED_BUNDLE") from exc

    latents = [latent_model_from_dict(_read_json(base / name)) for name in manifest.latent_models]
    basis = load_basis(base, manifest.files.get("basis", "basis"))
    if manifest.kind == "marom":
        if not all(isinstance(lm, HierarchicalKrigingModel) for lm in latents):
            raise DataError("MA-ROM bundle holds non-hierarchical latent models", code="MALFORMED_BUNDLE")
        model: RomModel = MaRomModel(
            hi_basis=basis,
            lo_basis=load_basis(base, manifest.files.get("lo_basis", "lo_basis")),
            transform=ProcrustesTransform.from_dict(_read_json(base / manifest.files.get("transform", TRANSFORM_NAME))),
            latent_models=tuple(latents),
            config=config,
            design_names=tuple(manifest.design_names),
            provenance=manifest.provenance,
        )
    else:
        if not all(isinstance(lm, KrigingModel) for lm in latents):
            raise DataError("SF-ROM bundle holds hierarchical latent models", code="MALFORMED_BUNDLE")
        model = SfRomModel(
            basis=basis,
            latent_models=tuple(latents),
            config=config,
            design_names=tuple(manifest.design_names),
            provenance=manifest.provenance,
        )
    if model.basis.k != manifest.k or model.basis.d != manifest.d:
        raise DataError(
            f"bundle manifest declares k={manifest.k}, d={manifest.d} but the basis is k={model.basis.k}, d={model.basis.d}",
            code="MALFORMED_BUNDLE",
        )
    logger.debug("model_loaded", extra={"path": str(base), "kind": manifest.kind, "k": manifest.k})
    return model
