from __future__ import annotations

import os
from typing import Final

from marom import __version__

_GIT_ENV_VARS: Final[tuple[str, ...]] = (
    "GIT_SHA",
    "GITHUB_SHA",
    "CI_COMMIT_SHA",
    "BUILD_ID",
)


def get_git_sha() -> str:
    for var in _GIT_ENV_VARS:
        value = os.getenv(var)
        if value:
            return value
    return "unknown"


def get_code_version() -> dict[str, str]:
    return {"package": __version__, "git_sha": get_git_sha()}
