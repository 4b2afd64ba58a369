"""Shared fixtures for the unishap test suite."""
from __future__ import annotations

import logging
import os
import sys
from collections.abc import Callable, Iterator
from pathlib import Path

import pytest
import structlog

from unishap.games import (
    AdditiveGame,
    AdversarialGame,
    GloveGame,
    MajorityGame,
    TabularGame,
    random_tabular_game,
)
from unishap.seeding import game_generator

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURES_DIR = REPO_ROOT / "fixtures"
REFERENCE_MODEL = FIXTURES_DIR / "models" / "reference_model.py"
GLOVE_TABLE = FIXTURES_DIR / "games" / "glove3.csv"
SWEEPS_DIR = FIXTURES_DIR / "sweeps"

# Seconds before an external model is considered hung in protocol tests.
EXTERNAL_TIMEOUT = float(os.getenv("UNISHAP_TEST_EXTERNAL_TIMEOUT", "10"))


@pytest.fixture(autouse=True)
def _quiet_logging() -> Iterator[None]:
    """Keep structlog output at warning level and restore defaults afterwards."""
    structlog.configure(wrapper_class=structlog.make_filtering_bound_logger(logging.WARNING))
    yield
    structlog.reset_defaults()


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    """Root of the checked-in test fixtures."""
    return FIXTURES_DIR


@pytest.fixture
def glove3() -> GloveGame:
    """Three-player glove game; exact values (1/6, 1/6, 2/3)."""
    return GloveGame(3)


@pytest.fixture
def majority3() -> MajorityGame:
    """Three-player simple majority game; every player gets 1/3."""
    return MajorityGame(3)


@pytest.fixture
def additive5() -> AdditiveGame:
    """Additive game whose Shapley values are its weights."""
    return AdditiveGame([1.0, -2.0, 0.5, 3.0, 0.0])


@pytest.fixture
def adversarial16() -> AdversarialGame:
    """Adversarial game at d = 16 with a two-wide plateau."""
    return AdversarialGame(16, 2, 1.0, 0.0)


@pytest.fixture
def random_game() -> Callable[[int, int], TabularGame]:
    """Factory for tables with i.i.d. uniform values, reproducible per (d, seed)."""

    def _make(d: int, seed: int = 0) -> TabularGame:
        return random_tabular_game(d, game_generator(seed))

    return _make


@pytest.fixture(scope="session")
def reference_model_command() -> Callable[..., list[str]]:
    """argv for the reference model subprocess plus any failure switches."""

    def _command(*flags: str) -> list[str]:
        return [sys.executable, str(REFERENCE_MODEL), *flags]

    return _command
