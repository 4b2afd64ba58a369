"""Overflow-safe combinatorial primitives and the implicit orthonormal basis Q.

Every quantity that involves C(d, h) is carried as a logarithm and only
exponentiated inside ratios, so C(3072, 1536) never appears as a raw float.
Small arguments go through ``math.comb`` and are exact up to the final
rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import numpy.typing as npt
from scipy.special import gammaln

from unishap.errors import DimensionMismatchError

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

# Above this the big-integer path costs more than it is worth.
_EXACT_BINOMIAL_LIMIT = 1024


def _check_size(d: int, h: int) -> None:
    if d < 2:
        raise ValueError(f"need at least two players, got d={d}")
    if not 1 <= h <= d - 1:
        raise ValueError(f"subset size must lie in [1, {d - 1}], got h={h}")


def log_binomial(d: int, h: int) -> float:
    """ln C(d, h) via big integers for small d, log-gamma otherwise."""
    if not 0 <= h <= d:
        raise ValueError(f"need 0 <= h <= d, got d={d}, h={h}")
    if d <= _EXACT_BINOMIAL_LIMIT:
        return math.log(math.comb(d, h))
    return float(gammaln(d + 1) - gammaln(h + 1) - gammaln(d - h + 1))


def log_binomial_array(d: int, h: npt.ArrayLike) -> FloatArray:
    sizes = np.asarray(h, dtype=np.float64)
    return np.asarray(gammaln(d + 1.0) - gammaln(sizes + 1.0) - gammaln(d - sizes + 1.0))


def log_kernel_weight(d: int, h: npt.ArrayLike) -> FloatArray:
    """ln k(h) = ln(d-1) - ln C(d,h) - ln h - ln(d-h), elementwise."""
    sizes = np.asarray(h, dtype=np.float64)
    return np.log(d - 1.0) - log_binomial_array(d, sizes) - np.log(sizes) - np.log(d - sizes)


def kernel_weight(d: int, h: int) -> float:
    """k(S) = (d-1) / (C(d,h) h (d-h)) for any S of size h."""
    _check_size(d, h)
    return math.exp(math.log(d - 1) - log_binomial(d, h) - math.log(h) - math.log(d - h))


def leverage_norm_sq(d: int, h: int) -> float:
    """Squared row norm of U for a size-h row: 1 / C(d, h)."""
    _check_size(d, h)
    return math.exp(-log_binomial(d, h))


def log_shapley_weight(d: int, s: npt.ArrayLike) -> FloatArray:
    """ln(s! (d-s-1)! / d!) = -ln d - ln C(d-1, s)."""
    return -np.log(float(d)) - log_binomial_array(d - 1, s)


def harmonic(n: int) -> float:
    if n < 0:
        raise ValueError(f"harmonic number undefined for n={n}")
    return float(harmonic_exact(n)) if n <= 64 else float(np.sum(1.0 / np.arange(1, n + 1)))


def harmonic_exact(n: int) -> Fraction:
    return sum((Fraction(1, j) for j in range(1, n + 1)), Fraction(0))


def c_d(d: int) -> float:
    """Off-diagonal constant of (Z')^T Z' = ((d-1)/d) I + c_d 11^T."""
    if d < 2:
        raise ValueError(f"need d >= 2, got {d}")
    if d <= 64:
        return float(c_d_exact(d))
    return ((d - 1) * harmonic(d - 2) - (d - 2)) / d


def c_d_exact(d: int) -> Fraction:
    return ((d - 1) * harmonic_exact(d - 2) - (d - 2)) / Fraction(d)


def inverse_sqrt_sum(d: int) -> float:
    """sum_{h=1}^{d-1} 1/sqrt(h(d-h))."""
    h = np.arange(1, d, dtype=np.float64)
    return float(np.sum(1.0 / np.sqrt(h * (d - h))))


def inverse_sqrt_sum_bound(d: int) -> float:
    root = math.sqrt(d - 1)
    return 2.0 * (1.0 / root + 2.0 * math.atan(root) - math.pi / 2.0)


def popcount(masks: npt.ArrayLike) -> IntArray:
    """Number of set bits of each non-negative 64-bit mask."""
    words = np.ascontiguousarray(np.asarray(masks, dtype=np.uint64).astype("<u8"))
    bits = np.unpackbits(words.view(np.uint8).reshape(-1, 8), axis=1)
    return np.asarray(bits.sum(axis=1), dtype=np.int64).reshape(np.shape(masks))


# ---------------------------------------------------------------------------
# Bucket indexing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BucketIndex:
    """Position (h, l) of a proper subset: size h, 1-based rank l within its size."""

    h: int
    l: int  # noqa: E741

    def flat(self, d: int) -> int:
        """Flat index sum_{j=1}^{h-1} C(d, j) + l, a bijection onto [1, 2^d - 2]."""
        _check_size(d, self.h)
        if not 1 <= self.l <= math.comb(d, self.h):
            raise ValueError(f"rank {self.l} outside bucket of size {math.comb(d, self.h)}")
        return sum(math.comb(d, j) for j in range(1, self.h)) + self.l

    @classmethod
    def from_flat(cls, i: int, d: int) -> BucketIndex:
        if not 1 <= i <= 2**d - 2:
            raise ValueError(f"flat index {i} outside [1, {2**d - 2}]")
        h = 1
        while i > math.comb(d, h):
            i -= math.comb(d, h)
            h += 1
        return cls(h, i)


def proper_masks(d: int) -> IntArray:
    """Masks of all 2^d - 2 proper non-empty subsets, in flat (h, l) order.

    Within a size class, rank follows increasing mask value.
    """
    if not 2 <= d <= 30:
        raise ValueError(f"enumeration supports 2 <= d <= 30, got {d}")
    masks = np.arange(1, 2**d - 1, dtype=np.int64)
    return masks[np.lexsort((masks, popcount(masks)))]


# ---------------------------------------------------------------------------
# Implicit orthonormal basis of the complement of 1
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImplicitQ:
    """d x (d-1) matrix with orthonormal columns spanning {x : 1^T x = 0}.

    Realized as the first d-1 columns of the Householder reflector
    H = I - 2 v v^T / (v^T v) with v = 1/sqrt(d) - e_d, so H maps 1/sqrt(d) to
    e_d and back. Both products cost O(d) per vector.
    """

    d: int
    _v: FloatArray = field(init=False, repr=False, compare=False)
    _scale: float = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.d < 2:
            raise ValueError(f"need d >= 2, got {self.d}")
        v = np.full(self.d, 1.0 / math.sqrt(self.d))
        v[-1] -= 1.0
        object.__setattr__(self, "_v", v)
        object.__setattr__(self, "_scale", 2.0 / float(v @ v))

    def _reflect(self, y: FloatArray) -> FloatArray:
        # Works along axis 0, so matrices are reflected column by column.
        coeff = self._scale * np.tensordot(self._v, y, axes=(0, 0))
        return y - np.multiply.outer(self._v, coeff)

    def apply(self, x: npt.ArrayLike) -> FloatArray:
        """Q x for x of length d-1 (or a (d-1) x k matrix)."""
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape[0] != self.d - 1:
            raise DimensionMismatchError(
                f"expected leading dimension {self.d - 1}, got {arr.shape[0]}",
                expected=self.d - 1,
                actual=arr.shape[0],
            )
        padded = np.concatenate([arr, np.zeros((1, *arr.shape[1:]))], axis=0)
        return self._reflect(padded)

    def transpose_apply(self, y: npt.ArrayLike) -> FloatArray:
        """Q^T y for y of length d (or a d x k matrix)."""
        arr = np.asarray(y, dtype=np.float64)
        if arr.shape[0] != self.d:
            raise DimensionMismatchError(
                f"expected leading dimension {self.d}, got {arr.shape[0]}",
                expected=self.d,
                actual=arr.shape[0],
            )
        return self._reflect(arr)[: self.d - 1]

    def sandwich(self, a: npt.ArrayLike) -> FloatArray:
        """Q^T A Q for a symmetric d x d matrix A."""
        left = self.transpose_apply(a)
        return self.transpose_apply(left.T).T

    def dense(self) -> FloatArray:
        return self.apply(np.eye(self.d - 1))


def q_apply(q: ImplicitQ, x: npt.ArrayLike) -> FloatArray:
    return q.apply(x)


def q_transpose_apply(q: ImplicitQ, y: npt.ArrayLike) -> FloatArray:
    return q.transpose_apply(y)
