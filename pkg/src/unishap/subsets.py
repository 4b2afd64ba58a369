"""Coalitions packed into 64-bit words.

Bit j of word j // 64 is player j (0-based, little-endian). ``Subset`` is the
hashable single-coalition value; ``SubsetBatch`` holds an (n, ceil(d/64))
uint64 array and is what games evaluate.
"""
from __future__ import annotations

import base64
import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from unishap.errors import DimensionMismatchError

WORD_BITS = 64
_WORD_MASK = (1 << WORD_BITS) - 1


def word_count(d: int) -> int:
    return max(1, math.ceil(d / WORD_BITS))


def byte_count(d: int) -> int:
    return max(1, math.ceil(d / 8))


@dataclass(frozen=True)
class Subset:
    words: tuple[int, ...]
    d: int
    size: int = field(init=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.words) != word_count(self.d):
            raise DimensionMismatchError(
                f"{len(self.words)} words cannot hold d={self.d}", d=self.d
            )
        spill = self.mask >> self.d
        if spill:
            raise ValueError(f"bits set beyond player {self.d - 1}")
        object.__setattr__(self, "size", self.mask.bit_count())

    @property
    def mask(self) -> int:
        return sum(word << (WORD_BITS * i) for i, word in enumerate(self.words))

    @classmethod
    def from_mask(cls, mask: int, d: int) -> Subset:
        if mask < 0:
            raise ValueError("mask must be non-negative")
        words = tuple((mask >> (WORD_BITS * i)) & _WORD_MASK for i in range(word_count(d)))
        return cls(words, d)

    @classmethod
    def from_indices(cls, indices: Iterable[int], d: int) -> Subset:
        mask = 0
        for j in indices:
            if not 0 <= j < d:
                raise ValueError(f"player {j} outside [0, {d})")
            mask |= 1 << j
        return cls.from_mask(mask, d)

    @classmethod
    def empty(cls, d: int) -> Subset:
        return cls.from_mask(0, d)

    @classmethod
    def full(cls, d: int) -> Subset:
        return cls.from_mask((1 << d) - 1, d)

    def complement(self) -> Subset:
        return Subset.from_mask(((1 << self.d) - 1) ^ self.mask, self.d)

    def indices(self) -> list[int]:
        mask = self.mask
        return [j for j in range(self.d) if (mask >> j) & 1]

    def __contains__(self, player: object) -> bool:
        return isinstance(player, int) and 0 <= player < self.d and bool((self.mask >> player) & 1)

    def to_bytes(self) -> bytes:
        return self.mask.to_bytes(byte_count(self.d), "little")

    @classmethod
    def from_bytes(cls, raw: bytes, d: int) -> Subset:
        if len(raw) != byte_count(d):
            raise ValueError(f"expected {byte_count(d)} bytes for d={d}, got {len(raw)}")
        return cls.from_mask(int.from_bytes(raw, "little"), d)

    def to_base64(self) -> str:
        return base64.b64encode(self.to_bytes()).decode("ascii")

    @classmethod
    def from_base64(cls, text: str, d: int) -> Subset:
        return cls.from_bytes(base64.b64decode(text, validate=True), d)


class SubsetBatch:
    """An ordered batch of coalitions over the same d players."""

    __slots__ = ("d", "words")

    def __init__(self, words: npt.NDArray[np.uint64], d: int) -> None:
        arr = np.ascontiguousarray(words, dtype=np.uint64)
        if arr.ndim != 2 or arr.shape[1] != word_count(d):
            raise DimensionMismatchError(
                f"packed array of shape {arr.shape} does not match d={d}", d=d
            )
        self.words = arr
        self.d = d

    # -- construction --------------------------------------------------------

    @classmethod
    def from_membership(cls, member: npt.ArrayLike, d: int | None = None) -> SubsetBatch:
        arr = np.asarray(member, dtype=bool)
        if arr.ndim != 2:
            raise ValueError("membership must be a 2-D boolean array")
        n_players = arr.shape[1] if d is None else d
        if arr.shape[1] != n_players:
            raise DimensionMismatchError(
                f"membership has {arr.shape[1]} columns, expected {n_players}", d=n_players
            )
        packed = np.packbits(arr, axis=1, bitorder="little")
        padded = np.zeros((arr.shape[0], word_count(n_players) * 8), dtype=np.uint8)
        padded[:, : packed.shape[1]] = packed
        return cls(padded.view("<u8").astype(np.uint64), n_players)

    @classmethod
    def from_masks(cls, masks: npt.ArrayLike, d: int) -> SubsetBatch:
        if d > WORD_BITS - 1:
            raise ValueError(f"integer masks support d <= {WORD_BITS - 1}, got {d}")
        arr = np.asarray(masks, dtype=np.int64).reshape(-1, 1)
        return cls(arr.astype(np.uint64), d)

    @classmethod
    def from_subsets(cls, subsets: Sequence[Subset], d: int | None = None) -> SubsetBatch:
        if not subsets:
            if d is None:
                raise ValueError("cannot infer d from an empty subset list")
            return cls(np.zeros((0, word_count(d)), dtype=np.uint64), d)
        n_players = subsets[0].d if d is None else d
        if any(s.d != n_players for s in subsets):
            raise DimensionMismatchError("subsets disagree on d", d=n_players)
        return cls(np.array([s.words for s in subsets], dtype=np.uint64), n_players)

    @classmethod
    def concat(cls, batches: Sequence[SubsetBatch], d: int) -> SubsetBatch:
        if not batches:
            return cls(np.zeros((0, word_count(d)), dtype=np.uint64), d)
        if any(b.d != d for b in batches):
            raise DimensionMismatchError("batches disagree on d", d=d)
        return cls(np.concatenate([b.words for b in batches], axis=0), d)

    # -- views ---------------------------------------------------------------

    def __len__(self) -> int:
        return int(self.words.shape[0])

    def __getitem__(self, index: int) -> Subset:
        return Subset(tuple(int(w) for w in self.words[index]), self.d)

    def __iter__(self) -> Iterator[Subset]:
        for i in range(len(self)):
            yield self[i]

    def take(self, rows: npt.ArrayLike) -> SubsetBatch:
        return SubsetBatch(self.words[np.asarray(rows)], self.d)

    def slice(self, start: int, stop: int) -> SubsetBatch:
        return SubsetBatch(self.words[start:stop], self.d)

    def _raw_bytes(self) -> npt.NDArray[np.uint8]:
        # Explicit width keeps zero-row batches reshapeable.
        width = word_count(self.d) * 8
        return self.words.astype("<u8").view(np.uint8).reshape(len(self), width)

    def membership(self) -> npt.NDArray[np.bool_]:
        raw = self._raw_bytes()
        bits = np.unpackbits(raw, axis=1, bitorder="little")[:, : self.d]
        return bits.astype(bool)

    def sizes(self) -> npt.NDArray[np.int64]:
        raw = self._raw_bytes()
        return np.unpackbits(raw, axis=1).sum(axis=1).astype(np.int64)

    def masks(self) -> npt.NDArray[np.int64]:
        if self.d > WORD_BITS - 1:
            raise ValueError(f"integer masks support d <= {WORD_BITS - 1}, got {self.d}")
        return self.words[:, 0].astype(np.int64)

    def complement(self) -> SubsetBatch:
        return SubsetBatch.from_membership(~self.membership(), self.d)

    def row_bytes(self) -> list[bytes]:
        raw = self._raw_bytes()
        width = byte_count(self.d)
        return [bytes(row[:width]) for row in raw]

    def to_base64(self) -> list[str]:
        return [base64.b64encode(row).decode("ascii") for row in self.row_bytes()]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SubsetBatch):
            return NotImplemented
        return self.d == other.d and np.array_equal(self.words, other.words)

    def __repr__(self) -> str:
        return f"SubsetBatch(n={len(self)}, d={self.d})"
