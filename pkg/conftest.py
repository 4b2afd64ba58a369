"""Root conftest: marker registration and opt-in gating of slow suites.

Monte-Carlo acceptance checks, the d = 3072 smoke run and timing benchmarks
take minutes, so they only run when their environment flag is set.
"""
from __future__ import annotations

import os

import pytest

_GATED_MARKERS: dict[str, str] = {
    "statistical": "UNISHAP_RUN_STATISTICAL",
    "highdim": "UNISHAP_RUN_HIGHDIM",
    "performance": "UNISHAP_RUN_PERFORMANCE",
}


def pytest_configure(config: pytest.Config) -> None:
    """Register custom markers to suppress PytestUnknownMarkWarning."""
    config.addinivalue_line("markers", "unit: Fast deterministic tests")
    config.addinivalue_line("markers", "statistical: Monte-Carlo acceptance checks")
    config.addinivalue_line("markers", "highdim: d = 3072 smoke run")
    config.addinivalue_line("markers", "protocol: External subprocess games")
    config.addinivalue_line("markers", "cli: Command-line entry point")
    config.addinivalue_line("markers", "performance: pytest-benchmark timings")


def pytest_collection_modifyitems(
    config: pytest.Config,
    items: list[pytest.Item],
) -> None:
    """Skip gated suites unless their UNISHAP_RUN_* variable is true."""
    enabled = {
        marker: os.getenv(variable, "false").lower() == "true"
        for marker, variable in _GATED_MARKERS.items()
    }
    for item in items:
        for marker, variable in _GATED_MARKERS.items():
            if marker in item.keywords and not enabled[marker]:
                reason = f"{marker} suite disabled; set {variable}=true"
                item.add_marker(pytest.mark.skip(reason=reason))
