"""Insertion/deletion curves and rank correlation.

Tests:
- Curves start and end at the normalized endpoints
- Insertion and deletion AUCs are complementary on additive games
- The exact ordering beats every other ordering on insertion AUC
- Rank correlation handles reversals, ties and constant vectors
"""
from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from unishap.diagnostics import (
    deletion_auc,
    deletion_curve,
    faithfulness_report,
    importance_order,
    insertion_auc,
    insertion_curve,
    rank_correlation,
)
from unishap.errors import ConfigError, DimensionMismatchError
from unishap.games import AdditiveGame, GloveGame

POSITIVE_WEIGHTS = [4.0, 1.0, 3.0, 0.5, 2.0]


@pytest.mark.unit
class TestCurves:
    """Insertion and deletion paths."""

    def test_insertion_endpoints(self) -> None:
        """Insertion runs from 0 to 1 over d + 1 points."""
        game = AdditiveGame(POSITIVE_WEIGHTS)
        curve = insertion_curve(game, POSITIVE_WEIGHTS)
        assert curve.normalized
        assert curve.values[0] == pytest.approx(0.0)
        assert curve.values[-1] == pytest.approx(1.0)
        assert curve.fractions.tolist() == pytest.approx([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
        assert curve.order.tolist() == [0, 2, 4, 1, 3]

    def test_deletion_mirrors_insertion_on_additive_games(self) -> None:
        """v(N minus T) = total - v(T), so the two AUCs sum to one."""
        game = AdditiveGame(POSITIVE_WEIGHTS)
        phi = np.array(POSITIVE_WEIGHTS)
        total = insertion_auc(game, phi) + deletion_auc(game, phi)
        assert total == pytest.approx(1.0)

    def test_exact_order_maximizes_insertion_auc(self) -> None:
        """Sorting by true contribution dominates every permutation."""
        game = AdditiveGame(POSITIVE_WEIGHTS)
        best = insertion_auc(game, POSITIVE_WEIGHTS)
        worst = deletion_auc(game, POSITIVE_WEIGHTS)
        for perm in itertools.permutations(range(5)):
            scores = np.empty(5)
            scores[list(perm)] = np.arange(5, 0, -1)
            assert insertion_auc(game, scores) <= best + 1e-12
            assert deletion_auc(game, scores) >= worst - 1e-12

    def test_top_k_truncates(self) -> None:
        """top_k = 2 evaluates three points."""
        curve = deletion_curve(AdditiveGame(POSITIVE_WEIGHTS), POSITIVE_WEIGHTS, top_k=2)
        assert curve.values.size == 3
        assert curve.order.tolist() == [0, 2]
        assert curve.values[0] == pytest.approx(1.0)

    def test_flat_game_is_not_normalized(self) -> None:
        """v(full) = v(empty) keeps raw values and says so."""
        curve = insertion_curve(AdditiveGame([1.0, -1.0]), [1.0, -1.0])
        assert not curve.normalized
        np.testing.assert_allclose(curve.values, [0.0, 1.0, 0.0])

    def test_top_k_range(self, glove3: GloveGame) -> None:
        """top_k must lie in [1, d]."""
        with pytest.raises(ConfigError):
            insertion_curve(glove3, [1.0, 1.0, 1.0], top_k=4)

    def test_length_mismatch(self, glove3: GloveGame) -> None:
        """phi must have one entry per player."""
        with pytest.raises(DimensionMismatchError):
            insertion_curve(glove3, [1.0, 1.0])

    def test_order_uses_magnitude_and_stable_ties(self) -> None:
        """|phi| decides; equal magnitudes keep index order."""
        assert importance_order([0.1, -3.0, 3.0, 0.0]).tolist() == [1, 2, 0, 3]


@pytest.mark.unit
class TestRankCorrelation:
    """Spearman correlation of attribution magnitudes."""

    def test_identical_ranking(self) -> None:
        """Monotone rescaling keeps correlation 1."""
        assert rank_correlation([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) == pytest.approx(1.0)

    def test_reversed_ranking(self) -> None:
        """A reversed ranking gives -1."""
        assert rank_correlation([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == pytest.approx(-1.0)

    def test_signs_are_ignored(self) -> None:
        """Only magnitudes are ranked."""
        assert rank_correlation([-1.0, 2.0, -3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0)

    def test_constant_vectors(self) -> None:
        """Two constant vectors agree; one constant vector is undefined."""
        assert rank_correlation([1.0, 1.0], [2.0, 2.0]) == 1.0
        assert math.isnan(rank_correlation([1.0, 1.0], [1.0, 2.0]))

    def test_multi_output_attributions_are_summed(self) -> None:
        """A (classes, d) array ranks by summed magnitude."""
        phi = np.array([[1.0, 0.0, 3.0], [0.0, 2.5, 0.0]])
        assert rank_correlation(phi, [1.0, 2.0, 3.0]) == pytest.approx(1.0)

    def test_length_mismatch(self) -> None:
        """Vectors must have equal length."""
        with pytest.raises(DimensionMismatchError):
            rank_correlation([1.0, 2.0], [1.0, 2.0, 3.0])


@pytest.mark.unit
class TestReport:
    """Combined faithfulness record."""

    def test_report_record(self, glove3: GloveGame) -> None:
        """All four fields are present; no reference gives NaN correlation."""
        phi = [1 / 6, 1 / 6, 2 / 3]
        record = faithfulness_report(glove3, phi).as_record()
        assert set(record) == {"insertion_auc", "deletion_auc", "rank_corr", "auc_normalized"}
        assert math.isnan(record["rank_corr"])
        assert faithfulness_report(glove3, phi, phi_reference=phi).rank_corr == pytest.approx(1.0)
