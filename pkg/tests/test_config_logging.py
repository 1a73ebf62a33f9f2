from __future__ import annotations

import io
import json
import logging

import numpy as np
import pytest
from pydantic import ValidationError

from marom.core.build_info import get_code_version, get_git_sha
from marom.core.config import load_settings
from marom.core.csv_io import read_matrix, read_vector, write_matrix, write_vector
from marom.core.errors import (
    EXIT_DATA,
    EXIT_NUMERICAL,
    EXIT_USAGE,
    DataError,
    MaromError,
    NumericalError,
    UsageError,
    exit_code_for,
)
from marom.core.logging_utils import JsonLogFormatter, configure_logging, level_from_name


def test_settings_defaults(monkeypatch):
    monkeypatch.delenv("MAROM_LOG", raising=False)
    monkeypatch.delenv("MAROM_JOBS", raising=False)
    settings = load_settings()
    assert settings.log_level == "info"
    assert settings.jobs == 1
    assert settings.cost_hi == pytest.approx(5.4402)
    assert settings.cost_lo == pytest.approx(0.5998)
    assert settings.provenance_timestamps is False


@pytest.mark.parametrize("raw,expected", [("INFO", "info"), ("warn", "warning"), (" Debug ", "debug"), ("error", "error")])
def test_log_level_normalization(monkeypatch, raw, expected):
    monkeypatch.setenv("MAROM_LOG", raw)
    assert load_settings().log_level == expected


def test_settings_read_environment(monkeypatch):
    monkeypatch.setenv("MAROM_JOBS", "4")
    monkeypatch.setenv("MAROM_COST_HI", "2.5")
    monkeypatch.setenv("MAROM_PROVENANCE_TIMESTAMPS", "1")
    settings = load_settings()
    assert settings.jobs == 4
    assert settings.cost_hi == 2.5
    assert settings.provenance_timestamps is True


@pytest.mark.parametrize("name,value", [("MAROM_LOG", "verbose"), ("MAROM_JOBS", "0"), ("MAROM_COST_LO", "-1")])
def test_invalid_settings(monkeypatch, name, value):
    monkeypatch.setenv(name, value)
    with pytest.raises(ValidationError):
        load_settings()


def test_level_from_name():
    assert level_from_name("debug") == logging.DEBUG
    assert level_from_name("WARNING") == logging.WARNING
    assert level_from_name(None) == logging.INFO
    assert level_from_name("nonsense") == logging.INFO


def test_json_formatter_includes_extra_fields():
    record = logging.LogRecord("marom.pod", logging.INFO, __file__, 1, "pod_fitted", None, None)
    record.k = 3
    record.shape = np.float64  # not JSON serializable
    payload = json.loads(JsonLogFormatter().format(record))
    assert payload["event"] == "pod_fitted"
    assert payload["level"] == "info"
    assert payload["logger"] == "marom.pod"
    assert payload["k"] == 3
    assert isinstance(payload["shape"], str)
    assert "msg" not in payload and "args" not in payload


def test_configure_logging_writes_json_lines():
    stream = io.StringIO()
    configure_logging("warning", stream=stream)
    log = logging.getLogger("marom.services.test")
    log.info("hidden_event")
    log.warning("visible_event", extra={"n": 7})
    lines = [json.loads(line) for line in stream.getvalue().splitlines()]
    assert [line["event"] for line in lines] == ["visible_event"]
    assert lines[0]["n"] == 7


def test_configure_logging_replaces_its_handler():
    configure_logging("info", stream=io.StringIO())
    configure_logging("debug", stream=io.StringIO())
    handlers = [h for h in logging.getLogger("marom").handlers if h.get_name() == "marom-json"]
    assert len(handlers) == 1
    assert logging.getLogger("marom").level == logging.DEBUG


def test_error_payload_and_exit_codes():
    err = DataError("bad column", code="NON_FINITE", details={"row": 2})
    assert err.to_payload() == {"error": {"code": "NON_FINITE", "message": "bad column", "details": {"row": 2}}}
    assert UsageError("x").to_payload() == {"error": {"code": "USAGE_ERROR", "message": "x"}}
    assert exit_code_for(UsageError("x")) == EXIT_USAGE
    assert exit_code_for(DataError("x")) == EXIT_DATA
    assert exit_code_for(NumericalError("x")) == EXIT_NUMERICAL
    assert exit_code_for(np.linalg.LinAlgError("x")) == EXIT_NUMERICAL
    assert isinstance(NumericalError("x"), MaromError)


def test_matrix_csv_keeps_full_precision(tmp_path):
    values = np.array([[1.0 / 3.0, -2.5e-300], [np.pi * 1e12, 0.0]])
    write_matrix(tmp_path / "m.csv", values)
    np.testing.assert_array_equal(read_matrix(tmp_path / "m.csv"), values)


def test_vector_csv(tmp_path):
    write_vector(tmp_path / "v.csv", np.array([1.5, 2.5, 3.5]))
    assert (tmp_path / "v.csv").read_text() == "1.5\n2.5\n3.5\n"
    np.testing.assert_array_equal(read_vector(tmp_path / "v.csv"), [1.5, 2.5, 3.5])
    write_matrix(tmp_path / "m.csv", np.ones((2, 2)))
    with pytest.raises(DataError) as exc:
        read_vector(tmp_path / "m.csv")
    assert exc.value.code == "DIMENSION_MISMATCH"


def test_csv_skips_blank_lines_and_rejects_ragged_rows(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("1,2\n\n3,4\n")
    assert read_matrix(path).shape == (2, 2)
    path.write_text("1,2\n3\n")
    with pytest.raises(DataError) as exc:
        read_matrix(path)
    assert exc.value.code == "MALFORMED_CSV"
    assert exc.value.details["row"] == 2
    path.write_text("")
    with pytest.raises(DataError):
        read_matrix(path)


def test_code_version(monkeypatch):
    assert get_git_sha() == "unknown"
    monkeypatch.setenv("GITHUB_SHA", "abc123")
    assert get_code_version()["git_sha"] == "abc123"
