"""Bucket distributions and sketch construction.

Tests:
- Per-coalition probabilities on small cases, for leverage and kernel weights
- Folded (paired) bucket masses and pool sizes
- Paired sketches interleave complements with equal weights
- Without-replacement sketches saturate to every coalition with weight 1
- alpha scales linearly with the budget below saturation
- Distinct-subset draws, determinism and thread-count invariance
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import scipy.stats

from unishap.errors import CapabilityError, ConfigError
from unishap.sampling import (
    Strategy,
    bucket_distribution,
    draw_bucket_count,
    draw_sketch,
    inclusion_log_probs,
    sample_distinct_subsets,
    sample_with_replacement,
    sample_without_replacement,
    saturating_budget,
    solve_alpha,
    solve_log_alpha,
)
from unishap.seeding import RandomStreams

SEEDS = [0, 1, 2]


@pytest.mark.unit
class TestBucketDistribution:
    """P(h) proportional to (h (d - h))^(-tau)."""

    @pytest.mark.parametrize("tau", [0.0, 0.5, 1.0])
    def test_three_players_are_uniform(self, tau: float) -> None:
        """d = 3: every proper coalition has probability 1/6."""
        dist = bucket_distribution(3, tau)
        assert dist.subset_prob(1) == pytest.approx(1 / 6, rel=1e-14)
        assert dist.subset_prob(2) == pytest.approx(1 / 6, rel=1e-14)

    def test_four_players_leverage(self) -> None:
        """d = 4, tau = 0: a size-2 coalition has probability 1/18."""
        assert bucket_distribution(4, 0.0).subset_prob(2) == pytest.approx(1 / 18, rel=1e-14)

    def test_four_players_kernel(self) -> None:
        """d = 4, tau = 1: a size-2 coalition has probability 1/22."""
        assert bucket_distribution(4, 1.0).subset_prob(2) == pytest.approx(1 / 22, rel=1e-14)

    @pytest.mark.parametrize("d", [2, 5, 40, 3072])
    def test_bucket_masses_sum_to_one(self, d: int) -> None:
        """sum_h P(h) = 1 even for huge d."""
        dist = bucket_distribution(d, 0.5)
        assert float(np.sum(np.exp(dist.log_bucket_prob))) == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("d", [2, 3, 4, 9, 10])
    def test_folded_masses_sum_to_one(self, d: int) -> None:
        """Folding doubles sizes below d/2 and keeps the middle bucket."""
        dist = bucket_distribution(d, 1.0)
        assert float(np.sum(np.exp(dist.folded_log_probs()))) == pytest.approx(1.0, rel=1e-12)

    def test_folded_pool_sizes(self) -> None:
        """d = 4 has 4 singleton pairs and 3 canonical middle pairs."""
        dist = bucket_distribution(4, 0.0)
        assert dist.folded_sizes.tolist() == [1, 2]
        assert dist.pool_sizes(folded=True) == [4, 3]
        assert dist.pool_sizes(folded=False) == [4, 6, 4]
        np.testing.assert_allclose(np.exp(dist.folded_log_pool_sizes()), [4.0, 3.0])

    @pytest.mark.parametrize("tau", [-0.1, 1.5])
    def test_tau_range(self, tau: float) -> None:
        """tau outside [0, 1] is a configuration error."""
        with pytest.raises(ConfigError):
            bucket_distribution(5, tau)

    def test_strategy_aliases(self) -> None:
        """Both short and long strategy names parse."""
        assert Strategy.parse("with") is Strategy.WITH_REPLACEMENT
        assert Strategy.parse("without-replacement") is Strategy.WITHOUT_REPLACEMENT
        with pytest.raises(ConfigError):
            Strategy.parse("sometimes")


@pytest.mark.unit
class TestWithReplacement:
    """i.i.d. sketches."""

    @pytest.mark.parametrize("seed", SEEDS)
    def test_paired_rows_are_complements(self, seed: int) -> None:
        """Row 2i+1 is the complement of row 2i and shares its weight."""
        sketch = sample_with_replacement(bucket_distribution(9, 0.0), 40, RandomStreams(seed))
        sketch.validate()
        assert len(sketch) == 40
        member = sketch.subsets.membership()
        np.testing.assert_array_equal(member[1::2], ~member[0::2])

    def test_two_players(self) -> None:
        """d = 2 pairs always draw {0} then {1}, each with weight 1/2 at m = 4."""
        sketch = sample_with_replacement(bucket_distribution(2, 0.0), 4, RandomStreams(0))
        assert sketch.subsets.masks().tolist() == [1, 2, 1, 2]
        np.testing.assert_allclose(sketch.weights, 0.5)

    def test_middle_bucket_draws_contain_player_zero(self) -> None:
        """Even d: the drawn half of each middle-size pair is canonical."""
        sketch = sample_with_replacement(bucket_distribution(6, 0.0), 200, RandomStreams(1))
        member = sketch.subsets.membership()[0::2]
        middle = member.sum(axis=1) == 3
        assert middle.any()
        assert member[middle, 0].all()

    def test_weights_are_inverse_row_probability(self) -> None:
        """w_S = 1 / (rows p_S) for unpaired draws."""
        dist = bucket_distribution(7, 0.5)
        sketch = sample_with_replacement(dist, 50, RandomStreams(3), paired=False)
        expected = [1.0 / (50 * dist.subset_prob(int(h))) for h in sketch.subsets.sizes()]
        np.testing.assert_allclose(sketch.weights, expected, rtol=1e-12)

    def test_same_seed_same_sketch(self) -> None:
        """Draws are a pure function of the seed."""
        dist = bucket_distribution(12, 1.0)
        first = sample_with_replacement(dist, 64, RandomStreams(5))
        second = sample_with_replacement(dist, 64, RandomStreams(5))
        other = sample_with_replacement(dist, 64, RandomStreams(6))
        assert first.subsets == second.subsets
        np.testing.assert_array_equal(first.log_weights, second.log_weights)
        assert first.subsets != other.subsets

    def test_worker_count_does_not_change_the_sketch(self) -> None:
        """Buckets have their own streams, so threading is invisible."""
        dist = bucket_distribution(14, 0.0)
        serial = sample_with_replacement(dist, 256, RandomStreams(2), workers=1)
        threaded = sample_with_replacement(dist, 256, RandomStreams(2), workers=4)
        assert serial.subsets == threaded.subsets

    @pytest.mark.parametrize("m", [0, 3])
    def test_paired_budget_must_be_even_and_positive(self, m: int) -> None:
        """Pairs need an even m >= 2."""
        with pytest.raises(ConfigError):
            sample_with_replacement(bucket_distribution(5, 0.0), m, RandomStreams(0))


@pytest.mark.unit
class TestWithoutReplacement:
    """Coin-flip inclusion sketches."""

    @pytest.mark.parametrize("d", [2, 3, 4, 7])
    def test_saturated_sketch_covers_every_coalition(self, d: int) -> None:
        """m = 2^d - 2 includes each proper coalition once with weight 1."""
        sketch = sample_without_replacement(
            bucket_distribution(d, 0.0), saturating_budget(d), RandomStreams(0)
        )
        sketch.validate()
        masks = sorted(sketch.subsets.masks().tolist())
        assert masks == list(range(1, 2**d - 1))
        np.testing.assert_allclose(sketch.weights, 1.0)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_rows_are_distinct(self, seed: int) -> None:
        """No coalition appears twice."""
        sketch = sample_without_replacement(bucket_distribution(10, 1.0), 200, RandomStreams(seed))
        masks = sketch.subsets.masks()
        assert np.unique(masks).size == masks.size
        assert len(sketch) % 2 == 0

    def test_unpaired_saturation(self) -> None:
        """Unpaired sketches saturate as well."""
        sketch = sample_without_replacement(
            bucket_distribution(5, 1.0), 30, RandomStreams(0), paired=False
        )
        assert sorted(sketch.subsets.masks().tolist()) == list(range(1, 31))

    def test_budget_beyond_pool_is_a_capability_error(self) -> None:
        """More pairs than exist cannot be drawn."""
        with pytest.raises(CapabilityError):
            sample_without_replacement(bucket_distribution(4, 0.0), 16, RandomStreams(0))

    def test_alpha_doubles_with_the_budget(self) -> None:
        """Below saturation sum alpha P_i = m, so alpha is linear in m."""
        dist = bucket_distribution(30, 0.0)
        assert solve_alpha(dist, 200) == pytest.approx(2 * solve_alpha(dist, 100), rel=1e-9)

    @pytest.mark.parametrize(("d", "m"), [(8, 40), (12, 300), (20, 5000)])
    def test_expected_pairs_match_the_budget(self, d: int, m: int) -> None:
        """sum_i pool_i q_i = m for the solved alpha."""
        dist = bucket_distribution(d, 1.0)
        log_alpha = solve_log_alpha(dist, m)
        q = np.exp(inclusion_log_probs(dist, log_alpha))
        assert float(np.sum(q * np.array(dist.pool_sizes(folded=True), dtype=float))) == (
            pytest.approx(m, rel=1e-9)
        )

    def test_draw_dispatch(self) -> None:
        """draw_sketch routes on the strategy."""
        dist = bucket_distribution(6, 0.0)
        sketch = draw_sketch(dist, 10, RandomStreams(0), "without")
        assert sketch.strategy is Strategy.WITHOUT_REPLACEMENT
        assert sketch.alpha is not None and math.isfinite(sketch.alpha)

    def test_sketch_csv(self, tmp_path: Path) -> None:
        """One row per coalition with base64 mask, weight and log weight."""
        sketch = sample_without_replacement(bucket_distribution(3, 0.0), 6, RandomStreams(0))
        path = tmp_path / "sketch.csv"
        sketch.to_csv(path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["mask_base64", "weight", "log_weight"]
        assert len(frame) == 6
        expected = ["AQ==", "Ag==", "Aw==", "BA==", "BQ==", "Bg=="]
        assert sorted(frame["mask_base64"]) == sorted(expected)
        np.testing.assert_allclose(frame["weight"], 1.0)
        np.testing.assert_allclose(frame["log_weight"], 0.0, atol=1e-12)


@pytest.mark.unit
class TestDistinctSubsets:
    """Uniform distinct coalitions of one size."""

    @pytest.mark.parametrize("count", [1, 50, 110, 120])
    def test_distinct_and_correct_size(self, count: int) -> None:
        """Sparse (rejection) and dense (enumeration) paths both give distinct draws."""
        batch = sample_distinct_subsets(10, 3, count, np.random.default_rng(0))
        assert len(batch) == count
        assert np.unique(batch.masks()).size == count
        assert set(batch.sizes().tolist()) == {3}

    @pytest.mark.parametrize("anchored", [False, True])
    def test_dense_draws_on_large_pools_reject_the_complement(self, anchored: bool) -> None:
        """Above the enumeration limit, all but two coalitions are drawn, each once."""
        pool = 84 if anchored else 120
        count = pool - 2
        batch = sample_distinct_subsets(
            10,
            4 if anchored else 3,
            count,
            np.random.default_rng(2),
            anchored=anchored,
            enumeration_limit=16,
        )
        assert len(batch) == count
        assert np.unique(batch.masks()).size == count
        assert set(batch.sizes().tolist()) == {4 if anchored else 3}
        if anchored:
            assert batch.membership()[:, 0].all()

    def test_complement_path_is_uniform(self) -> None:
        """Each of the 20 size-3 coalitions of 6 players is left out equally often."""
        rng = np.random.default_rng(5)
        every = np.arange(64)[[bin(mask).count("1") == 3 for mask in range(64)]]
        left_out = np.concatenate(
            [
                np.setdiff1d(
                    every, sample_distinct_subsets(6, 3, 19, rng, enumeration_limit=1).masks()
                )
                for _ in range(4000)
            ]
        )
        _, counts = np.unique(left_out, return_counts=True)
        assert counts.size == 20
        assert scipy.stats.chisquare(counts).pvalue > 0.001

    def test_draw_order_is_shuffled(self) -> None:
        """Dense draws are not returned in enumeration order."""
        batch = sample_distinct_subsets(10, 3, 120, np.random.default_rng(3), enumeration_limit=16)
        masks = batch.masks()
        assert not np.array_equal(masks, np.sort(masks))

    def test_anchored_draws_contain_player_zero(self) -> None:
        """Anchored coalitions always include player 0."""
        batch = sample_distinct_subsets(8, 4, 20, np.random.default_rng(1), anchored=True)
        assert batch.membership()[:, 0].all()
        assert np.unique(batch.masks()).size == 20

    def test_count_above_pool_is_rejected(self) -> None:
        """There are only C(5, 2) = 10 pairs."""
        with pytest.raises(ConfigError):
            sample_distinct_subsets(5, 2, 11, np.random.default_rng(0))

    def test_bucket_count_saturates(self) -> None:
        """Mass at or above the pool includes everything; huge pools stay capped."""
        rng = np.random.default_rng(0)
        assert draw_bucket_count(rng, 10, math.log(50.0)) == 10
        assert draw_bucket_count(rng, 10**12, math.log(5.0), maxval=1e6) <= 10**12
