"""Bucket distributions and sketch construction.

A sampling distribution is constant on each bucket (coalitions of one size h):

    p(S) = P(h) / C(d, h),   P(h) = (h (d - h))^(-tau) / N_tau

tau = 0 gives leverage scores, tau = 1 kernel weights, tau = 1/2 the modified
l2 weights. All of it is stored as logarithms.

Paired sketches fold the distribution onto sizes i <= ceil((d-1)/2): sizes
below d/2 take P(i) + P(d-i) = 2 P(i), the middle bucket of even d keeps P(d/2)
and only samples canonical members (those containing player 0). Every drawn
coalition is emitted immediately followed by its complement.

Row weights: 1 / (m p(S)) with replacement, 1 / q(S) without replacement,
where q(S) = min(1, alpha p_folded(S)) is the inclusion probability.
"""
from __future__ import annotations

import enum
import itertools
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd
import structlog
from scipy.optimize import brentq
from scipy.special import logsumexp

from unishap.combinatorics import log_binomial_array
from unishap.errors import CapabilityError, ConfigError, UnishapError
from unishap.seeding import RandomStreams
from unishap.settings import DEFAULT_MAXVAL
from unishap.subsets import Subset, SubsetBatch

log = structlog.get_logger(__name__)

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]

ENUMERATION_LIMIT = 1 << 20
_LOG_ALPHA_XTOL = 1e-13
# Rows of random keys generated at once per bucket, scaled by 1/d.
_KEY_BUDGET = 1 << 22


class Strategy(enum.Enum):
    WITH_REPLACEMENT = "with"
    WITHOUT_REPLACEMENT = "without"

    @classmethod
    def parse(cls, text: str | Strategy) -> Strategy:
        if isinstance(text, Strategy):
            return text
        key = text.strip().lower().replace("-", "_")
        aliases = {
            "with": cls.WITH_REPLACEMENT,
            "with_replacement": cls.WITH_REPLACEMENT,
            "without": cls.WITHOUT_REPLACEMENT,
            "without_replacement": cls.WITHOUT_REPLACEMENT,
        }
        if key not in aliases:
            raise ConfigError(f"unknown sampling strategy {text!r}", strategy=text)
        return aliases[key]


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BucketDistribution:
    d: int
    tau: float
    log_bucket_prob: FloatArray = field(repr=False)
    log_normalizer: float = field(repr=False)

    @property
    def sizes(self) -> npt.NDArray[np.int64]:
        return np.arange(1, self.d, dtype=np.int64)

    def bucket_prob(self, h: int) -> float:
        return math.exp(float(self.log_bucket_prob[h - 1]))

    def log_subset_prob(self, h: npt.ArrayLike) -> FloatArray:
        sizes = np.asarray(h, dtype=np.int64)
        return np.asarray(self.log_bucket_prob[sizes - 1] - log_binomial_array(self.d, sizes))

    def subset_prob(self, h: int) -> float:
        return math.exp(float(self.log_subset_prob(h)))

    # -- folded view used by paired sampling ----------------------------------

    @property
    def folded_sizes(self) -> npt.NDArray[np.int64]:
        return np.arange(1, math.ceil((self.d - 1) / 2) + 1, dtype=np.int64)

    def folded_log_probs(self) -> FloatArray:
        sizes = self.folded_sizes
        doubled = np.where(2 * sizes < self.d, math.log(2.0), 0.0)
        return np.asarray(self.log_bucket_prob[sizes - 1] + doubled)

    def folded_log_pool_sizes(self) -> FloatArray:
        """ln of the number of sampleable pairs per folded bucket."""
        sizes = self.folded_sizes
        halved = np.where(2 * sizes == self.d, math.log(2.0), 0.0)
        return np.asarray(log_binomial_array(self.d, sizes) - halved)

    def pool_sizes(self, *, folded: bool) -> list[int]:
        """Exact pool sizes as Python integers."""
        if not folded:
            return [math.comb(self.d, int(h)) for h in self.sizes]
        return [
            math.comb(self.d, int(i)) // (2 if 2 * i == self.d else 1) for i in self.folded_sizes
        ]


def bucket_distribution(d: int, tau: float) -> BucketDistribution:
    if d < 2:
        raise ConfigError(f"need d >= 2, got {d}", d=d)
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}", tau=tau)
    sizes = np.arange(1, d, dtype=np.float64)
    log_w = -tau * np.log(sizes * (d - sizes))
    log_norm = float(logsumexp(log_w))
    return BucketDistribution(d, float(tau), log_w - log_norm, log_norm)


def _bucket_table(dist: BucketDistribution, *, folded: bool) -> tuple[
    npt.NDArray[np.int64], FloatArray, FloatArray
]:
    if folded:
        return dist.folded_sizes, dist.folded_log_probs(), dist.folded_log_pool_sizes()
    return dist.sizes, dist.log_bucket_prob, log_binomial_array(dist.d, dist.sizes)


# ---------------------------------------------------------------------------
# Sketch
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sketch:
    """Ordered (coalition, weight) rows. Weights are kept as logarithms."""

    subsets: SubsetBatch
    log_weights: FloatArray
    strategy: Strategy
    paired: bool
    m_nominal: int
    seed: int | None
    tau: float
    alpha: float | None = None

    @property
    def d(self) -> int:
        return self.subsets.d

    @property
    def weights(self) -> FloatArray:
        return np.exp(self.log_weights)

    @property
    def rows(self) -> list[tuple[Subset, float]]:
        return list(zip(self.subsets, self.weights.tolist(), strict=True))

    def __len__(self) -> int:
        return len(self.subsets)

    def validate(self) -> None:
        if len(self.log_weights) != len(self.subsets):
            raise UnishapError("sketch has a different number of weights and rows")
        if not np.all(np.isfinite(self.log_weights)):
            raise UnishapError("sketch weights must be finite and positive")
        if not self.paired:
            return
        if len(self) % 2:
            raise UnishapError("paired sketch has an odd number of rows")
        member = self.subsets.membership()
        if not np.array_equal(member[0::2], ~member[1::2]):
            raise UnishapError("paired sketch rows are not complement pairs")
        if not np.array_equal(self.log_weights[0::2], self.log_weights[1::2]):
            raise UnishapError("paired sketch rows carry different weights")

    def to_csv(self, path: str | Path) -> None:
        frame = pd.DataFrame(
            {
                "mask_base64": self.subsets.to_base64(),
                "weight": self.weights,
                "log_weight": self.log_weights,
            }
        )
        frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


# ---------------------------------------------------------------------------
# Uniform coalitions of a fixed size
# ---------------------------------------------------------------------------


def _uniform_membership(
    d: int, h: int, count: int, rng: np.random.Generator, *, anchored: bool = False
) -> BoolArray:
    """``count`` independent uniform size-h coalitions as a membership matrix.

    Anchored draws always contain player 0 and pick the other h-1 members
    from players 1..d-1.
    """
    member = np.zeros((count, d), dtype=bool)
    offset, free, picks = (1, d - 1, h - 1) if anchored else (0, d, h)
    if anchored:
        member[:, 0] = True
    if picks == 0 or count == 0:
        return member
    step = max(1, _KEY_BUDGET // max(free, 1))
    for start in range(0, count, step):
        stop = min(count, start + step)
        keys = rng.random((stop - start, free))
        if picks == free:
            member[start:stop, offset:] = True
            continue
        threshold = np.partition(keys, picks - 1, axis=1)[:, picks - 1 : picks]
        member[start:stop, offset:] = keys <= threshold
    return member


def _enumerate_pool(d: int, h: int, pool: int, anchored: bool) -> BoolArray:
    """Every size-h coalition (containing player 0 when anchored), in lexicographic order."""
    offset, picks = (1, h - 1) if anchored else (0, h)
    member = np.zeros((pool, d), dtype=bool)
    if anchored:
        member[:, 0] = True
    if picks:
        combos = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations(range(offset, d), picks)),
            dtype=np.int64,
            count=pool * picks,
        ).reshape(pool, picks)
        member[np.arange(pool)[:, None], combos] = True
    return member


def _reject_distinct(
    d: int, h: int, count: int, rng: np.random.Generator, anchored: bool
) -> BoolArray:
    seen: set[bytes] = set()
    accepted: list[BoolArray] = []
    while len(accepted) < count:
        need = count - len(accepted)
        draws = _uniform_membership(d, h, need, rng, anchored=anchored)
        keys = np.packbits(draws, axis=1)
        for row in range(need):
            key = keys[row].tobytes()
            if key not in seen:
                seen.add(key)
                accepted.append(draws[row])
    return np.array(accepted).reshape(count, d)


def sample_distinct_subsets(
    d: int,
    h: int,
    count: int,
    rng: np.random.Generator,
    *,
    anchored: bool = False,
    enumeration_limit: int = ENUMERATION_LIMIT,
) -> SubsetBatch:
    """``count`` distinct uniform size-h coalitions in draw order.

    Sparse requests use rejection against a set of packed masks. Dense requests
    on small pools shuffle the enumerated pool; on large pools they reject the
    complement (the pool - count coalitions left out) and shuffle what remains.
    """
    if not 1 <= h <= d:
        raise ConfigError(f"subset size must lie in [1, {d}], got {h}", h=h)
    pool = math.comb(d - 1, h - 1) if anchored else math.comb(d, h)
    if count < 0 or count > pool:
        raise ConfigError(
            f"cannot draw {count} distinct coalitions of size {h} from {pool}", count=count
        )
    if count == 0:
        return SubsetBatch.from_subsets([], d)
    if 2 * count <= pool:
        return SubsetBatch.from_membership(_reject_distinct(d, h, count, rng, anchored), d)

    member = _enumerate_pool(d, h, pool, anchored)
    if pool > enumeration_limit:
        left_out = _reject_distinct(d, h, pool - count, rng, anchored)
        excluded = {row.tobytes() for row in np.packbits(left_out, axis=1)}
        keys = np.packbits(member, axis=1)
        keep = np.array([keys[row].tobytes() not in excluded for row in range(pool)])
        return SubsetBatch.from_membership(member[keep][rng.permutation(count)], d)
    return SubsetBatch.from_membership(member[rng.permutation(pool)[:count]], d)


# ---------------------------------------------------------------------------
# Shared emission
# ---------------------------------------------------------------------------


def _run_buckets(
    task: Callable[[int, int], BoolArray], plan: Sequence[tuple[int, int]], workers: int
) -> list[BoolArray]:
    """Run ``task(h, count)`` per bucket; results stay in plan order."""
    if workers <= 1 or len(plan) <= 1:
        return [task(h, count) for h, count in plan]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda item: task(*item), plan))


def _assemble(
    d: int, blocks: Sequence[BoolArray], log_weights: Sequence[float], paired: bool
) -> tuple[SubsetBatch, FloatArray]:
    if not blocks:
        return SubsetBatch.from_subsets([], d), np.zeros(0)
    member = np.concatenate(blocks, axis=0)
    weights = np.concatenate(
        [np.full(len(block), w) for block, w in zip(blocks, log_weights, strict=True)]
    )
    if paired:
        interleaved = np.empty((2 * len(member), d), dtype=bool)
        interleaved[0::2] = member
        interleaved[1::2] = ~member
        member = interleaved
        weights = np.repeat(weights, 2)
    return SubsetBatch.from_membership(member, d), weights


def _check_budget(m: int, paired: bool) -> None:
    if m < 1:
        raise ConfigError(f"sample budget must be positive, got m={m}", m=m)
    if paired and (m < 2 or m % 2):
        raise ConfigError(f"paired sampling needs an even budget m >= 2, got m={m}", m=m)


# ---------------------------------------------------------------------------
# With replacement
# ---------------------------------------------------------------------------


def sample_with_replacement(
    dist: BucketDistribution,
    m: int,
    streams: RandomStreams,
    paired: bool = True,
    *,
    workers: int = 1,
) -> Sketch:
    """i.i.d. rows; paired mode draws m/2 coalitions from the folded distribution."""
    _check_budget(m, paired)
    d = dist.d
    sizes, log_probs, _ = _bucket_table(dist, folded=paired)
    draws = m // 2 if paired else m
    probs = np.exp(log_probs - logsumexp(log_probs))
    counts = streams.counts().multinomial(draws, probs)
    plan = [(int(h), int(c)) for h, c in zip(sizes, counts, strict=True) if c > 0]

    def draw(h: int, count: int) -> BoolArray:
        anchored = paired and 2 * h == d
        return _uniform_membership(d, h, count, streams.bucket(h), anchored=anchored)

    blocks = _run_buckets(draw, plan, workers)
    rows = 2 * draws if paired else draws
    log_weights = [
        -math.log(rows) - float(dist.log_subset_prob(h)) for h, _ in plan
    ]
    subsets, weights = _assemble(d, blocks, log_weights, paired)
    log.debug("sketch_drawn", strategy="with", d=d, rows=len(subsets), buckets=len(plan))
    return Sketch(
        subsets, weights, Strategy.WITH_REPLACEMENT, paired, m, streams.seed, dist.tau
    )


# ---------------------------------------------------------------------------
# Without replacement
# ---------------------------------------------------------------------------


def solve_log_alpha(dist: BucketDistribution, m_units: float, *, folded: bool = True) -> float:
    """ln alpha with sum_i min(pool_i, alpha P_i) = m_units."""
    _, log_probs, log_pool = _bucket_table(dist, folded=folded)
    log_total = float(logsumexp(log_pool))
    if m_units < 1:
        raise ConfigError(f"need at least one sample, got {m_units}", m=m_units)
    log_target = math.log(m_units)
    if log_target > log_total + 1e-12:
        raise CapabilityError(
            f"requested {m_units} draws but only {math.exp(log_total):.6g} are available",
            requested=m_units,
        )
    if log_target >= log_total - 1e-12:
        return float(np.max(log_pool - log_probs))

    def objective(log_alpha: float) -> float:
        return float(logsumexp(np.minimum(log_pool, log_alpha + log_probs))) - log_target

    lo = log_target
    if objective(lo) >= 0.0:
        return lo
    hi = lo + math.log(2.0)
    while objective(hi) < 0.0:
        hi += math.log(2.0)
    return float(brentq(objective, lo, hi, xtol=_LOG_ALPHA_XTOL, rtol=4 * np.finfo(float).eps))


def solve_alpha(dist: BucketDistribution, m_pairs: float, *, folded: bool = True) -> float:
    """alpha with sum_{i <= ceil((d-1)/2)} min(pairs_i, alpha P_folded(i)) = m_pairs.

    With ``folded=False`` the sum runs over all sizes with pools C(d, h).
    """
    return math.exp(solve_log_alpha(dist, m_pairs, folded=folded))


def inclusion_log_probs(
    dist: BucketDistribution, log_alpha: float, *, folded: bool = True
) -> FloatArray:
    """Per-bucket ln q = min(0, ln alpha + ln P_i - ln pool_i)."""
    _, log_probs, log_pool = _bucket_table(dist, folded=folded)
    return np.minimum(0.0, log_alpha + log_probs - log_pool)


def draw_bucket_count(
    rng: np.random.Generator, pool: int, log_mass: float, maxval: float = DEFAULT_MAXVAL
) -> int:
    """Number of pool members included, each with probability min(1, mass/pool).

    Binomial up to ``maxval`` members, Poisson(mass) beyond it.
    """
    if pool <= maxval:
        q = min(1.0, math.exp(log_mass - math.log(pool)))
        return int(rng.binomial(pool, q))
    return int(min(rng.poisson(math.exp(log_mass)), pool))


def sample_without_replacement(
    dist: BucketDistribution,
    m: int,
    streams: RandomStreams,
    paired: bool = True,
    *,
    maxval: float = DEFAULT_MAXVAL,
    workers: int = 1,
) -> Sketch:
    """Coin-flip inclusion per coalition (per complement pair when paired).

    Expected row count is m; at saturation every coalition appears once with
    weight 1.
    """
    _check_budget(m, paired)
    d = dist.d
    sizes, log_probs, _ = _bucket_table(dist, folded=paired)
    units = m // 2 if paired else m
    log_alpha = solve_log_alpha(dist, units, folded=paired)
    log_q = inclusion_log_probs(dist, log_alpha, folded=paired)
    pools = dist.pool_sizes(folded=paired)

    counter = streams.counts()
    counts = [
        draw_bucket_count(counter, pool, log_alpha + float(lp), maxval)
        for pool, lp in zip(pools, log_probs, strict=True)
    ]
    plan = [(int(h), c) for h, c in zip(sizes, counts, strict=True) if c > 0]
    log_q_by_size = {int(h): float(q) for h, q in zip(sizes, log_q, strict=True)}

    def draw(h: int, count: int) -> BoolArray:
        anchored = paired and 2 * h == d
        batch = sample_distinct_subsets(d, h, count, streams.bucket(h), anchored=anchored)
        return batch.membership()

    blocks = _run_buckets(draw, plan, workers)
    subsets, weights = _assemble(d, blocks, [-log_q_by_size[h] for h, _ in plan], paired)
    alpha = math.exp(log_alpha) if log_alpha < 700 else math.inf
    log.debug(
        "sketch_drawn", strategy="without", d=d, rows=len(subsets), nominal=m, log_alpha=log_alpha
    )
    return Sketch(
        subsets, weights, Strategy.WITHOUT_REPLACEMENT, paired, m, streams.seed, dist.tau, alpha
    )


def draw_sketch(
    dist: BucketDistribution,
    m: int,
    streams: RandomStreams,
    strategy: Strategy | str,
    paired: bool = True,
    *,
    maxval: float = DEFAULT_MAXVAL,
    workers: int = 1,
) -> Sketch:
    if Strategy.parse(strategy) is Strategy.WITH_REPLACEMENT:
        return sample_with_replacement(dist, m, streams, paired, workers=workers)
    return sample_without_replacement(dist, m, streams, paired, maxval=maxval, workers=workers)


def saturating_budget(d: int) -> int:
    """Budget that makes a without-replacement sketch cover every proper coalition."""
    return 2**d - 2
