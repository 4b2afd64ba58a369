"""Environment-driven defaults.

Values are read once from ``UNISHAP_*`` variables with literal fallbacks and
frozen into a ``Settings`` instance. CLI flags override individual fields.
"""
from __future__ import annotations

import os
from collections.abc import Mapping
from dataclasses import dataclass
from typing import TypeVar

from unishap.errors import ConfigError

DEFAULT_THREADS = 1
DEFAULT_BATCH_SIZE = 4096
DEFAULT_MAXVAL = 1e10
DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_LOG_FORMAT = "console"
DEFAULT_EXTERNAL_TIMEOUT = 30.0

LOG_FORMATS = ("console", "json")

_Number = TypeVar("_Number", int, float)


@dataclass(frozen=True)
class Settings:
    threads: int = DEFAULT_THREADS
    batch_size: int = DEFAULT_BATCH_SIZE
    maxval: float = DEFAULT_MAXVAL
    log_level: str = DEFAULT_LOG_LEVEL
    log_format: str = DEFAULT_LOG_FORMAT
    external_timeout: float = DEFAULT_EXTERNAL_TIMEOUT

    def __post_init__(self) -> None:
        if self.threads < 1:
            raise ConfigError("threads must be at least 1", threads=self.threads)
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1", batch_size=self.batch_size)
        if self.maxval < 1:
            raise ConfigError("maxval must be at least 1", maxval=self.maxval)
        if self.log_format not in LOG_FORMATS:
            raise ConfigError(
                f"log format must be one of {LOG_FORMATS}", log_format=self.log_format
            )
        if self.external_timeout <= 0:
            raise ConfigError("external timeout must be positive", timeout=self.external_timeout)

    @classmethod
    def from_env(cls, environ: Mapping[str, str] | None = None) -> Settings:
        env = os.environ if environ is None else environ
        return cls(
            threads=_parse(env, "UNISHAP_THREADS", int, DEFAULT_THREADS),
            batch_size=_parse(env, "UNISHAP_BATCH_SIZE", int, DEFAULT_BATCH_SIZE),
            maxval=_parse(env, "UNISHAP_MAXVAL", float, DEFAULT_MAXVAL),
            log_level=env.get("UNISHAP_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper(),
            log_format=env.get("UNISHAP_LOG_FORMAT", DEFAULT_LOG_FORMAT).lower(),
            external_timeout=_parse(
                env, "UNISHAP_EXTERNAL_TIMEOUT", float, DEFAULT_EXTERNAL_TIMEOUT
            ),
        )


def _parse(
    env: Mapping[str, str], name: str, kind: type[_Number], default: _Number
) -> _Number:
    raw = env.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{name} is not a valid {kind.__name__}: {raw!r}", variable=name) from exc
