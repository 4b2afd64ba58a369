"""Packed coalitions.

Tests:
- Subset masks, indices, complements and sizes agree
- Base64 wire encoding is little-endian over ceil(d/8) bytes
- SubsetBatch membership, sizes and masks agree across constructors
- Batches wider than one 64-bit word
"""
from __future__ import annotations

import numpy as np
import pytest

from unishap.errors import DimensionMismatchError
from unishap.subsets import Subset, SubsetBatch, byte_count, word_count


@pytest.mark.unit
class TestSubset:
    """Single-coalition value type."""

    def test_from_indices_sets_bits(self) -> None:
        """Players 0 and 2 give mask 0b101."""
        subset = Subset.from_indices([0, 2], 4)
        assert subset.mask == 0b101
        assert subset.size == 2
        assert subset.indices() == [0, 2]
        assert 2 in subset and 1 not in subset

    def test_complement(self) -> None:
        """The complement holds exactly the other players."""
        subset = Subset.from_indices([1, 3], 5)
        assert subset.complement().indices() == [0, 2, 4]
        assert subset.complement().complement() == subset

    def test_empty_and_full(self) -> None:
        """Empty has size 0; full has size d."""
        assert Subset.empty(70).size == 0
        assert Subset.full(70).size == 70
        assert Subset.full(70).indices() == list(range(70))

    def test_bits_beyond_d_are_rejected(self) -> None:
        """A mask naming player d is invalid."""
        with pytest.raises(ValueError):
            Subset.from_mask(1 << 4, 4)

    def test_player_outside_range_is_rejected(self) -> None:
        """Indices must lie in [0, d)."""
        with pytest.raises(ValueError):
            Subset.from_indices([5], 5)

    def test_base64_is_little_endian(self) -> None:
        """Player 0 is bit 0 of byte 0; d = 10 uses two bytes."""
        subset = Subset.from_indices([0, 9], 10)
        assert subset.to_bytes() == bytes([0b00000001, 0b00000010])
        assert Subset.from_base64(subset.to_base64(), 10) == subset

    def test_wrong_byte_count_is_rejected(self) -> None:
        """Decoding checks the payload length against d."""
        with pytest.raises(ValueError):
            Subset.from_bytes(b"\x01", 10)

    def test_sizes(self) -> None:
        """Word and byte counts round up."""
        assert word_count(64) == 1
        assert word_count(65) == 2
        assert byte_count(9) == 2


@pytest.mark.unit
class TestSubsetBatch:
    """Batches of coalitions."""

    def test_membership_round_trip(self) -> None:
        """Packing and unpacking a membership matrix is lossless."""
        member = np.random.default_rng(0).random((20, 7)) < 0.5
        batch = SubsetBatch.from_membership(member)
        np.testing.assert_array_equal(batch.membership(), member)
        np.testing.assert_array_equal(batch.sizes(), member.sum(axis=1))

    def test_masks_and_subsets_agree(self) -> None:
        """from_masks and from_subsets build the same batch."""
        masks = np.array([0, 1, 6, 15], dtype=np.int64)
        by_mask = SubsetBatch.from_masks(masks, 4)
        by_subset = SubsetBatch.from_subsets([Subset.from_mask(int(m), 4) for m in masks])
        assert by_mask == by_subset
        np.testing.assert_array_equal(by_mask.masks(), masks)

    def test_wide_batch(self) -> None:
        """d = 130 spans three words and still round-trips."""
        member = np.zeros((2, 130), dtype=bool)
        member[0, [0, 64, 129]] = True
        member[1] = ~member[0]
        batch = SubsetBatch.from_membership(member)
        assert batch.words.shape == (2, 3)
        assert batch[0].indices() == [0, 64, 129]
        assert batch.sizes().tolist() == [3, 127]
        assert batch.complement() == SubsetBatch.from_membership(member[::-1])

    def test_base64_rows_match_subsets(self) -> None:
        """Batch encoding agrees with per-subset encoding."""
        batch = SubsetBatch.from_masks([3, 512, 1023], 10)
        assert batch.to_base64() == [subset.to_base64() for subset in batch]

    def test_slice_take_and_concat(self) -> None:
        """Row selection keeps order."""
        batch = SubsetBatch.from_masks(np.arange(8), 3)
        assert batch.slice(2, 5).masks().tolist() == [2, 3, 4]
        assert batch.take([7, 0]).masks().tolist() == [7, 0]
        joined = SubsetBatch.concat([batch.slice(0, 2), batch.slice(6, 8)], 3)
        assert joined.masks().tolist() == [0, 1, 6, 7]

    @pytest.mark.parametrize("d", [3, 70])
    def test_empty_batch_views(self, d: int) -> None:
        """Zero rows still have a membership matrix, sizes and encodings."""
        batch = SubsetBatch.from_subsets([], d)
        assert batch.membership().shape == (0, d)
        assert batch.sizes().shape == (0,)
        assert batch.row_bytes() == []
        assert batch.to_base64() == []
        assert len(batch.complement()) == 0

    def test_mixed_d_is_rejected(self) -> None:
        """Subsets over different player counts cannot share a batch."""
        with pytest.raises(DimensionMismatchError):
            SubsetBatch.from_subsets([Subset.empty(3), Subset.empty(4)])
