from __future__ import annotations

from typing import Any

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class MaromError(Exception):
    """
    Base error with a stable code and optional structured details.
    Keep codes stable: scripts branch on them.
    """

    code = "MAROM_ERROR"
    exit_code = EXIT_DATA

    def __init__(
        self,
        message: str,
        *,
        code: str | None = None,
        details: dict[str, Any] | None = None,
    ) -> None:
        super().__init__(message)
        self.message = message
        if code is not None:
            self.code = code
        self.details = details

    def to_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {"error": {"code": self.code, "message": self.message}}
        if self.details is not None:
            payload["error"]["details"] = self.details
        return payload


class UsageError(MaromError):
    code = "USAGE_ERROR"
    exit_code = EXIT_USAGE


class DataError(MaromError):
    code = "DATA_ERROR"
    exit_code = EXIT_DATA


class NumericalError(MaromError):
    code = "NUMERICAL_ERROR"
    exit_code = EXIT_NUMERICAL


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, MaromError):
        return exc.exit_code
    return EXIT_NUMERICAL
