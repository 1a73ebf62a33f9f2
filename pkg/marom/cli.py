#!/usr/bin/env python3
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, NoReturn, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ValidationError

from marom.core.config import Settings, load_settings
from marom.core.csv_io import read_matrix, write_matrix
from marom.core.errors import EXIT_NUMERICAL, EXIT_OK, DataError, MaromError, UsageError
from marom.core.logging_utils import configure_logging
from marom.schemas.configs import StudyConfig, TrainConfig
from marom.services.bench import BeamProblem, dump_scenario, generate_scenario, run_study, write_study
from marom.services.bundle import load_model, save_model
from marom.services.fields import load_dataset
from marom.services.metrics import error_field, error_report
from marom.services.pipeline import predict_fields, train_marom, train_sfrom

logger = logging.getLogger("marom.cli")

Handler = Callable[[argparse.Namespace, Settings], dict[str, Any]]


class _Parser(argparse.ArgumentParser):
    """Usage problems become UsageError instead of argparse's exit(2)."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path: Optional[str], model: type[BaseModel]) -> Any:
    if path is None:
        return model()
    file_path = Path(path)
    if not file_path.is_file():
        raise DataError(f"config file not found: {file_path}", code="MISSING_FILE")
    try:
        return model.model_validate_json(file_path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise DataError(f"{file_path.name}: {loc}: {first['msg']}", code="INVALID_CONFIG") from exc


def _train_config(args: argparse.Namespace, settings: Settings) -> TrainConfig:
    base = _load_config(args.config, TrainConfig)
    update: dict[str, Any] = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if args.jobs is not None:
        update["jobs"] = args.jobs
    elif "jobs" not in base.model_fields_set:
        update["jobs"] = settings.jobs
    if args.ric is not None:
        update["ric_threshold"] = args.ric
    if args.k is not None:
        update["k_override"] = args.k
    if args.latent_dim_rule is not None:
        update["latent_dim_rule"] = args.latent_dim_rule
    try:
        return TrainConfig.model_validate({**base.model_dump(), **update})
    except ValidationError as exc:
        first = exc.errors()[0]
        raise UsageError(f"invalid training option {'.'.join(map(str, first['loc']))}: {first['msg']}") from exc


def cmd_train(args: argparse.Namespace, settings: Settings) -> dict[str, Any]:
    if args.lo is None and not args.single_fidelity:
        raise UsageError("train: --lo is required unless --single-fidelity is given")
    config = _train_config(args, settings)
    hi = load_dataset(args.hi)
    if args.single_fidelity:
        model = train_sfrom(hi, config)
    else:
        model = train_marom(hi, load_dataset(args.lo, deduplicate=True), config)
    save_model(model, args.out)
    return {
        "command": "train",
        "kind": model.kind,
        "k": model.basis.k,
        "achieved_ric": model.basis.achieved_ric,
        "out": str(args.out),
    }


def cmd_predict(args: argparse.Namespace, settings: Settings) -> dict[str, Any]:
    model = load_model(args.model)
    designs = read_matrix(args.designs)
    fields = predict_fields(model, designs)
    write_matrix(args.out, fields.values)
    return {"command": "predict", "designs": int(designs.shape[1]), "d": fields.d, "out": str(args.out)}


def cmd_evaluate(args: argparse.Namespace, settings: Settings) -> dict[str, Any]:
    model = load_model(args.model)
    test = load_dataset(args.test)
    if test.snapshots.d != model.basis.d:
        raise DataError(
            f"test fields have d={test.snapshots.d} but the model predicts d={model.basis.d}",
            code="DIMENSION_MISMATCH",
        )
    predictions = predict_fields(model, test.designs)
    mean = model.basis.mean if args.denominator == "training" else test.snapshots.values.mean(axis=1)
    report = error_report(predictions, test.snapshots, mean, denominator=args.denominator)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    if args.error_field:
        write_matrix(args.error_field, error_field(predictions, test.snapshots))
    return {
        "command": "evaluate",
        "e_abs": report.e_abs,
        "e_norm": report.e_norm,
        "n_test": report.n_test,
        "worst_index": report.worst_index,
        "out": str(out),
    }


def cmd_study(args: argparse.Namespace, settings: Settings) -> dict[str, Any]:
    if args.config is None:
        raise UsageError("study: --config is required")
    config = _load_config(args.config, StudyConfig)
    result = run_study(config, jobs=args.jobs or settings.jobs, progress=args.progress)
    paths = write_study(result, args.out)
    return {"command": "study", "rows": len(result.rows), "outputs": paths}


def cmd_generate(args: argparse.Namespace, settings: Settings) -> dict[str, Any]:
    m = args.m if args.m is not None else args.n
    datasets = generate_scenario(
        BeamProblem(),
        args.scenario,
        args.field,
        args.n,
        m,
        args.seed,
        test_size=args.test_size,
        cost_hi=settings.cost_hi,
        cost_lo=settings.cost_lo,
    )
    paths = dump_scenario(datasets, args.out)
    hi, lo, test = datasets
    return {
        "command": "generate",
        "problem": args.problem,
        "scenario": args.scenario,
        "field": args.field,
        "n": hi.n,
        "m": lo.n,
        "test_size": test.n,
        "outputs": paths,
    }


def _positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}") from exc
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="marom", description="Multi-fidelity reduced-order modeling by manifold alignment.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    train = sub.add_parser("train", help="Train an MA-ROM (or SF-ROM) model bundle.")
    train.add_argument("--hi", required=True, help="High-fidelity dataset manifest (JSON).")
    train.add_argument("--lo", help="Low-fidelity dataset manifest (JSON).")
    train.add_argument("--out", required=True, help="Output bundle directory.")
    train.add_argument("--ric", type=float, help="RIC truncation threshold in (0, 1].")
    train.add_argument("--k", type=_positive_int, help="Latent dimension override.")
    train.add_argument("--seed", type=int, help="Root seed (default: the config file's, else 0).")
    train.add_argument("--single-fidelity", action="store_true", help="Train the SF-ROM baseline on --hi only.")
    train.add_argument("--jobs", type=_positive_int, help="Concurrent latent-model fits (default MAROM_JOBS).")
    train.add_argument("--latent-dim-rule", choices=("capped", "padded"))
    train.add_argument("--config", help="TrainConfig JSON; flags override its values.")
    train.set_defaults(handler=cmd_train)

    predict = sub.add_parser("predict", help="Predict fields at new designs.")
    predict.add_argument("--model", required=True)
    predict.add_argument("--designs", required=True, help="Design CSV, b rows × N columns.")
    predict.add_argument("--out", required=True, help="Output CSV, d rows × N columns.")
    predict.set_defaults(handler=cmd_predict)

    evaluate = sub.add_parser("evaluate", help="Score a model on a test dataset.")
    evaluate.add_argument("--model", required=True)
    evaluate.add_argument("--test", required=True, help="Test dataset manifest (JSON).")
    evaluate.add_argument("--out", required=True, help="ErrorReport JSON path.")
    evaluate.add_argument("--error-field", help="Also write per-node errors (d × n_test CSV).")
    evaluate.add_argument(
        "--denominator",
        choices=("training", "test"),
        default="training",
        help="Mean field used to normalize the error.",
    )
    evaluate.set_defaults(handler=cmd_evaluate)

    study = sub.add_parser("study", help="Run the repetition-averaged benchmark study.")
    study.add_argument("--config", help="StudyConfig JSON.")
    study.add_argument("--out", required=True, help="Output directory.")
    study.add_argument("--jobs", type=_positive_int, help="Concurrent replications (default MAROM_JOBS).")
    study.add_argument("--progress", action="store_true", help="Show a progress bar on stderr.")
    study.set_defaults(handler=cmd_study)

    generate = sub.add_parser("generate", help="Dump synthetic benchmark datasets.")
    generate.add_argument("--problem", choices=("beam",), default="beam")
    generate.add_argument("--scenario", choices=("grid", "topology"), default="grid")
    generate.add_argument("--field", choices=("displacement", "stress"), default="displacement")
    generate.add_argument("--n", type=_positive_int, required=True)
    generate.add_argument("--m", type=_positive_int, help="Low-fidelity sample count (default n).")
    generate.add_argument("--test-size", type=_positive_int, default=200)
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--out", required=True, help="Output directory.")
    generate.set_defaults(handler=cmd_generate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        settings = load_settings()
    except ValidationError as exc:
        print(f"error [USAGE_ERROR]: {exc.errors()[0]['msg']}", file=sys.stderr)
        return UsageError.exit_code
    configure_logging(settings.log_level)

    try:
        args = build_parser().parse_args(argv)
        handler: Handler = args.handler
        result = handler(args, settings)
    except MaromError as exc:
        logger.debug("command_failed", extra={"code": exc.code, "details": exc.details})
        print(f"error [{exc.code}]: {exc.message}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"error [NUMERICAL_ERROR]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
