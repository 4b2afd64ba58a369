"""Environment settings and log configuration.

Tests:
- Settings fall back to literal defaults and read UNISHAP_* overrides
- Malformed or out-of-range values raise ConfigError
- The CLI turns a bad environment into exit code 2
- configure_logging renders JSON or console lines to stderr and filters by level
"""
from __future__ import annotations

import json
from collections.abc import Iterator
from pathlib import Path

import pytest
import structlog

from unishap.cli import main
from unishap.errors import ConfigError
from unishap.logging_config import configure_logging
from unishap.settings import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EXTERNAL_TIMEOUT,
    DEFAULT_MAXVAL,
    DEFAULT_THREADS,
    Settings,
)

pytestmark = [pytest.mark.unit]


@pytest.fixture()
def reset_structlog() -> Iterator[None]:
    """Loggers configured against a captured stderr must not outlive the test."""
    yield
    structlog.reset_defaults()


class TestSettings:
    """Settings.from_env."""

    def test_defaults(self) -> None:
        settings = Settings.from_env({})
        assert settings.threads == DEFAULT_THREADS
        assert settings.batch_size == DEFAULT_BATCH_SIZE
        assert settings.maxval == DEFAULT_MAXVAL
        assert settings.external_timeout == DEFAULT_EXTERNAL_TIMEOUT
        assert settings.log_level == "INFO"
        assert settings.log_format == "console"

    def test_overrides(self) -> None:
        settings = Settings.from_env(
            {
                "UNISHAP_THREADS": "8",
                "UNISHAP_BATCH_SIZE": "128",
                "UNISHAP_MAXVAL": "1e6",
                "UNISHAP_LOG_LEVEL": "debug",
                "UNISHAP_LOG_FORMAT": "JSON",
                "UNISHAP_EXTERNAL_TIMEOUT": "2.5",
            }
        )
        assert settings == Settings(8, 128, 1e6, "DEBUG", "json", 2.5)

    def test_blank_values_use_defaults(self) -> None:
        assert Settings.from_env({"UNISHAP_THREADS": "  "}).threads == DEFAULT_THREADS

    def test_malformed_number(self) -> None:
        with pytest.raises(ConfigError) as exc_info:
            Settings.from_env({"UNISHAP_BATCH_SIZE": "many"})
        assert exc_info.value.details["variable"] == "UNISHAP_BATCH_SIZE"

    @pytest.mark.parametrize(
        "overrides",
        [
            {"threads": 0},
            {"batch_size": 0},
            {"maxval": 0.5},
            {"log_format": "xml"},
            {"external_timeout": 0.0},
        ],
    )
    def test_out_of_range(self, overrides: dict[str, object]) -> None:
        with pytest.raises(ConfigError):
            Settings(**overrides)  # type: ignore[arg-type]

    def test_cli_rejects_bad_environment(
        self,
        tmp_path: Path,
        monkeypatch: pytest.MonkeyPatch,
        capsys: pytest.CaptureFixture[str],
    ) -> None:
        monkeypatch.setenv("UNISHAP_THREADS", "-3")
        code = main(["estimate", "--game", "additive:w=1;2", "--out", str(tmp_path)])
        assert code == 2
        error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]
        assert error["code"] == "CONFIG_ERROR"
        assert error["details"]["threads"] == -3


@pytest.mark.usefixtures("reset_structlog")
class TestConfigureLogging:
    """configure_logging."""

    def test_json_lines(self, capsys: pytest.CaptureFixture[str]) -> None:
        configure_logging("INFO", "json")
        structlog.get_logger("unishap.test").info("sketch_drawn", rows=12)
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert record["event"] == "sketch_drawn"
        assert record["rows"] == 12
        assert record["level"] == "info"
        assert "timestamp" in record

    def test_console_lines(self, capsys: pytest.CaptureFixture[str]) -> None:
        configure_logging("INFO", "console")
        structlog.get_logger("unishap.test").info("sketch_drawn", rows=12)
        err = capsys.readouterr().err
        assert "sketch_drawn" in err
        assert "rows=12" in err

    def test_level_filter(self, capsys: pytest.CaptureFixture[str]) -> None:
        configure_logging("warning", "json")
        log = structlog.get_logger("unishap.test")
        log.info("hidden")
        log.warning("shown")
        lines = capsys.readouterr().err.strip().splitlines()
        assert [json.loads(line)["event"] for line in lines] == ["shown"]

    def test_unknown_level_falls_back_to_info(self, capsys: pytest.CaptureFixture[str]) -> None:
        configure_logging("chatty", "json")
        log = structlog.get_logger("unishap.test")
        log.debug("hidden")
        log.info("shown")
        lines = capsys.readouterr().err.strip().splitlines()
        assert [json.loads(line)["event"] for line in lines] == ["shown"]
