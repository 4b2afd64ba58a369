"""Estimator latency baselines.

Targets are generous upper bounds on a single core; the benchmark stats are
the numbers to watch.
"""
from __future__ import annotations

import pytest

from unishap.estimators import estimate, preset
from unishap.exact import exact_bruteforce
from unishap.games import AdversarialGame, random_tabular_game
from unishap.sampling import bucket_distribution, draw_sketch
from unishap.seeding import RandomStreams, game_generator

pytestmark = [pytest.mark.performance]


def _mean_seconds(benchmark: object) -> float | None:
    # fixture.stats is a Metadata wrapper around the Stats object
    stats = getattr(getattr(benchmark, "stats", None), "stats", None)
    mean = getattr(stats, "mean", None)
    return None if mean is None else float(mean)


class TestEstimatorLatency:
    """Sketching, solving and the exact oracle."""

    @pytest.mark.parametrize("strategy", ["with", "without"])
    def test_sketch_construction(self, benchmark: object, strategy: str) -> None:
        """Drawing 4096 paired rows over 256 players stays under 250ms."""
        dist = bucket_distribution(256, 0.0)

        sketch = benchmark(  # type: ignore[operator]
            lambda: draw_sketch(dist, 4096, RandomStreams(0), strategy)
        )
        assert sketch.subsets.d == 256

        mean_seconds = _mean_seconds(benchmark)
        if mean_seconds is not None:
            assert mean_seconds < 0.250, (
                f"sketch construction mean {mean_seconds * 1000:.1f}ms exceeds 250ms"
            )

    @pytest.mark.parametrize("preset_name", ["leverageshap", "kernelshap", "unbiased_kernelshap"])
    def test_estimate(self, benchmark: object, preset_name: str) -> None:
        """A full estimate at d = 128, m = 2048 stays under one second."""
        game = AdversarialGame(128, 2, 1.0, 0.5)
        config = preset(preset_name, m=2048, seed=0)

        result = benchmark(lambda: estimate(game, config))  # type: ignore[operator]
        assert result.efficiency_gap < 1e-8

        mean_seconds = _mean_seconds(benchmark)
        if mean_seconds is not None:
            assert mean_seconds < 1.0, f"{preset_name} mean {mean_seconds:.2f}s exceeds 1s"

    def test_bruteforce_oracle(self, benchmark: object) -> None:
        """65536 coalitions through the Gray-code enumeration stay under two seconds."""
        game = random_tabular_game(16, game_generator(0))

        result = benchmark.pedantic(  # type: ignore[attr-defined]
            lambda: exact_bruteforce(game), rounds=3, iterations=1
        )
        assert result.efficiency_gap < 1e-10

        mean_seconds = _mean_seconds(benchmark)
        if mean_seconds is not None:
            assert mean_seconds < 2.0, f"brute force mean {mean_seconds:.2f}s exceeds 2s"
