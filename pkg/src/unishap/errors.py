"""Exception hierarchy for unishap.

Every error carries a stable machine-readable ``code`` and a ``details``
mapping so the CLI can emit the same structured envelope for any failure:

    {"error": {"code": "CAPABILITY_EXCEEDED", "message": "...", "details": {...}}}

Categories map one-to-one onto CLI exit codes (see ``ErrorCategory``).
"""
from __future__ import annotations

import enum
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from unishap.subsets import Subset


class ErrorCategory(enum.Enum):
    """Failure class surfaced by the CLI as a distinct exit code."""

    CONFIG = "config"
    GAME = "game"
    CAPABILITY = "capability"

    @property
    def exit_code(self) -> int:
        return _EXIT_CODES[self]


_EXIT_CODES: dict[ErrorCategory, int] = {
    ErrorCategory.CONFIG: 2,
    ErrorCategory.GAME: 3,
    ErrorCategory.CAPABILITY: 4,
}


class UnishapError(Exception):
    """Base class. Subclasses pin ``code`` and ``category``."""

    code: str = "UNISHAP_ERROR"
    category: ErrorCategory = ErrorCategory.CONFIG

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details: dict[str, Any] = details

    def to_envelope(self) -> dict[str, Any]:
        """Return the structured error envelope used on stderr by the CLI."""
        return {
            "error": {
                "code": self.code,
                "message": self.message,
                "details": {key: _jsonable(value) for key, value in self.details.items()},
            }
        }


class ConfigError(UnishapError, ValueError):
    """Bad flags, spec files, parameter ranges or missing input files."""

    code = "CONFIG_ERROR"
    category = ErrorCategory.CONFIG


class DimensionMismatchError(UnishapError, ValueError):
    """Operands disagree on the player count or vector length."""

    code = "DIMENSION_MISMATCH"
    category = ErrorCategory.CONFIG


class CapabilityError(UnishapError):
    """Request exceeds what an oracle or sampler can do (d too large, m too large)."""

    code = "CAPABILITY_EXCEEDED"
    category = ErrorCategory.CAPABILITY


class GameError(UnishapError):
    """Base class for value-function failures."""

    code = "GAME_ERROR"
    category = ErrorCategory.GAME


class GameEvaluationError(GameError):
    """The model failed (or returned a non-finite value) on a specific subset."""

    code = "GAME_EVALUATION_FAILED"

    def __init__(self, message: str, subset: Subset | None = None, **details: Any) -> None:
        if subset is not None:
            details.setdefault("subset", subset.indices())
        super().__init__(message, **details)
        self.subset = subset


class ProtocolViolationError(GameError):
    """The external model answered with something the wire protocol does not allow."""

    code = "PROTOCOL_VIOLATION"

    def __init__(self, message: str, line_number: int, **details: Any) -> None:
        super().__init__(f"line {line_number}: {message}", line_number=line_number, **details)
        self.line_number = line_number


class SubprocessExitedError(GameError):
    """The external model process terminated while a response was pending."""

    code = "SUBPROCESS_EXITED"

    def __init__(self, returncode: int | None, stderr_tail: str = "") -> None:
        super().__init__(
            f"model process exited with return code {returncode}",
            returncode=returncode,
            stderr_tail=stderr_tail,
        )
        self.returncode = returncode
        self.stderr_tail = stderr_tail


class GameTimeoutError(GameError):
    """The external model did not answer within the configured timeout."""

    code = "GAME_TIMEOUT"

    def __init__(self, timeout: float) -> None:
        super().__init__(f"model did not respond within {timeout:g}s", timeout=timeout)
        self.timeout = timeout


def category_of(error: BaseException) -> ErrorCategory:
    """Map any exception to its CLI category; unknown exceptions count as game failures."""
    if isinstance(error, UnishapError):
        return error.category
    return ErrorCategory.GAME


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    return str(value)
