"""Error-predicting quantities and faithfulness metrics.

For a sampling distribution p and a vector z indexed by proper coalitions,

    gamma(z) = sum_S ||u_S||^2 / p_S * z_S^2,    eta = max_S ||u_S||^2 / p_S

with ||u_S||^2 = 1 / C(d, |S|). On a bucket distribution the ratio is
1 / P(h) = N_tau (h (d - h))^tau, which gives the closed forms used here
for any d. The brute-force versions enumerate all 2^d - 2 coalitions and are
kept as cross-checks (d <= 20).

Sample-complexity bounds are reported with every hidden constant set to 1;
read them as orders of magnitude.
"""
from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, TypeVar

import numpy as np
import numpy.typing as npt
import scipy.integrate
import scipy.stats
import structlog
from scipy.special import logsumexp

from unishap.combinatorics import log_binomial_array, log_kernel_weight, proper_masks
from unishap.errors import CapabilityError, ConfigError, DimensionMismatchError
from unishap.estimators import (
    EstimatorConfig,
    EstimatorKind,
    LambdaMode,
    estimate,
)
from unishap.exact import exact_shapley
from unishap.games import Game
from unishap.sampling import (
    BucketDistribution,
    Strategy,
    inclusion_log_probs,
    solve_log_alpha,
)
from unishap.seeding import RandomStreams
from unishap.subsets import SubsetBatch

log = structlog.get_logger(__name__)

FloatArray = npt.NDArray[np.float64]
_T = TypeVar("_T")

FULL_RHS_MAX_D = 20
MSE_PREDICTION_MAX_D = 16


# ---------------------------------------------------------------------------
# The full right-hand side
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FullRhs:
    """b_lambda over all proper coalitions in flat (h, l) order."""

    d: int
    lam: float
    alpha: float
    masks: npt.NDArray[np.int64] = field(repr=False)
    sizes: npt.NDArray[np.int64] = field(repr=False)
    values: FloatArray = field(repr=False)
    projected: FloatArray = field(repr=False)
    centered_phi: FloatArray = field(repr=False)

    def bucket_sums(self, z: FloatArray | None = None) -> FloatArray:
        """sum of z_S^2 per size h = 1..d-1 (z defaults to b_lambda)."""
        entries = self.values if z is None else z
        return np.bincount(self.sizes - 1, weights=entries**2, minlength=self.d - 1)


def full_rhs(game: Game, lam: float | None = None) -> FullRhs:
    """b_lambda and P_U b_lambda for a game with d <= 20.

    (P_U b)_S = b_S - sqrt(d/(d-1)) sqrt(k(S)) sum_{j in S} (phi*_j - alpha), since
    Q U^T b_lambda = phi* - alpha 1 for every lambda.
    """
    d = game.d
    if d > FULL_RHS_MAX_D:
        raise CapabilityError(
            f"full right-hand side supports d <= {FULL_RHS_MAX_D}, got d={d}",
            d=d,
            limit=FULL_RHS_MAX_D,
        )
    shift = game.alpha if lam is None else float(lam)
    masks = proper_masks(d)
    batch = SubsetBatch.from_masks(masks, d)
    member = batch.membership()
    sizes = member.sum(axis=1).astype(np.int64)
    residual = game.evaluate_batch(batch) - game.v_empty - shift * sizes
    log_scale = 0.5 * (math.log(d / (d - 1)) + log_kernel_weight(d, sizes))
    scale = np.exp(log_scale)
    values = scale * residual

    coef = scale**2 * residual
    centered = member.T @ coef - float(np.sum(coef * sizes)) / d
    projected = values - scale * (member @ centered)
    return FullRhs(d, shift, game.alpha, masks, sizes, values, projected, centered)


# ---------------------------------------------------------------------------
# gamma and eta
# ---------------------------------------------------------------------------


def _leverage_over_probability(dist: BucketDistribution, sizes: npt.ArrayLike) -> FloatArray:
    """||u_S||^2 / p_S per coalition, from the per-subset quantities themselves."""
    h = np.asarray(sizes, dtype=np.int64)
    return np.exp(-log_binomial_array(dist.d, h) - dist.log_subset_prob(h))


def _proper_sizes(d: int) -> npt.NDArray[np.int64]:
    if d > FULL_RHS_MAX_D:
        raise CapabilityError(
            f"brute-force sums support d <= {FULL_RHS_MAX_D}, got d={d}",
            d=d,
            limit=FULL_RHS_MAX_D,
        )
    return np.repeat(np.arange(1, d, dtype=np.int64), [math.comb(d, h) for h in range(1, d)])


def gamma_bruteforce(dist: BucketDistribution, z: npt.ArrayLike) -> float:
    """gamma(z) summed coalition by coalition; z in flat (h, l) order."""
    sizes = _proper_sizes(dist.d)
    entries = np.asarray(z, dtype=np.float64).reshape(-1)
    if entries.size != sizes.size:
        raise DimensionMismatchError(
            f"z must have 2^d - 2 = {sizes.size} entries, got {entries.size}",
            expected=int(sizes.size),
            actual=int(entries.size),
        )
    return float(np.sum(_leverage_over_probability(dist, sizes) * entries**2))


def eta_bruteforce(dist: BucketDistribution) -> float:
    sizes = _proper_sizes(dist.d)
    return float(np.max(_leverage_over_probability(dist, sizes)))


def log_normalizer(tau: float, d: int) -> float:
    """ln N_tau, N_tau = sum_{j=1}^{d-1} (j (d - j))^(-tau)."""
    j = np.arange(1, d, dtype=np.float64)
    return float(logsumexp(-tau * np.log(j * (d - j))))


def _bucket_vector(d: int, bucket_sums: Mapping[int, float] | npt.ArrayLike) -> FloatArray:
    if isinstance(bucket_sums, Mapping):
        sums = np.zeros(d - 1)
        for h, value in bucket_sums.items():
            if not 1 <= h <= d - 1:
                raise ConfigError(f"bucket size {h} outside [1, {d - 1}]", h=h)
            sums[h - 1] = value
        return sums
    sums = np.asarray(bucket_sums, dtype=np.float64).reshape(-1)
    if sums.size != d - 1:
        raise DimensionMismatchError(
            f"need one bucket sum per size 1..{d - 1}", expected=d - 1, actual=int(sums.size)
        )
    return sums


def gamma_closed_form(
    tau: float, d: int, bucket_sums: Mapping[int, float] | npt.ArrayLike
) -> float:
    """N_tau sum_h (h (d - h))^tau sum_{|S| = h} z_S^2."""
    sums = _bucket_vector(d, bucket_sums)
    h = np.arange(1, d, dtype=np.float64)
    log_factor = log_normalizer(tau, d) + tau * np.log(h * (d - h))
    return float(np.sum(np.exp(log_factor) * sums))


def eta_closed_form(tau: float, d: int) -> float:
    """N_tau max_h (h (d - h))^tau; the maximum sits at h = floor(d/2)."""
    h = d // 2
    return math.exp(log_normalizer(tau, d) + tau * math.log(h * (d - h)))


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TheoryReport:
    d: int
    tau: float
    lam: float
    gamma_b: float
    gamma_proj: float
    eta: float
    eps: float
    delta: float
    bound_matvec: float
    bound_regression: float

    def as_record(self) -> dict[str, Any]:
        return {
            "d": self.d,
            "tau": self.tau,
            "lambda": self.lam,
            "gamma_b": self.gamma_b,
            "gamma_proj": self.gamma_proj,
            "eta": self.eta,
            "eps": self.eps,
            "delta": self.delta,
            "bound_matvec": self.bound_matvec,
            "bound_regression": self.bound_regression,
        }


def theorem_bounds(
    *,
    d: int,
    tau: float,
    lam: float,
    gamma_b: float,
    gamma_proj: float,
    eta: float,
    eps: float,
    delta: float,
) -> TheoryReport:
    """Sample counts for eps-accuracy with probability 1 - delta, constants set to 1.

    matvec:     gamma(b) / (delta eps^2)
    regression: gamma(P_U b) / (delta eps^2) + eta ln(d / delta)
    """
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}", eps=eps)
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}", delta=delta)
    scale = delta * eps**2
    return TheoryReport(
        d=d,
        tau=tau,
        lam=lam,
        gamma_b=gamma_b,
        gamma_proj=gamma_proj,
        eta=eta,
        eps=eps,
        delta=delta,
        bound_matvec=gamma_b / scale,
        bound_regression=gamma_proj / scale + eta * math.log(d / delta),
    )


def theory_report(
    game: Game,
    dist: BucketDistribution,
    lam: float | None = None,
    *,
    eps: float = 0.1,
    delta: float = 0.1,
) -> TheoryReport:
    if dist.d != game.d:
        raise DimensionMismatchError(
            "distribution and game disagree on d", expected=game.d, actual=dist.d
        )
    rhs = full_rhs(game, lam)
    report = theorem_bounds(
        d=game.d,
        tau=dist.tau,
        lam=rhs.lam,
        gamma_b=gamma_bruteforce(dist, rhs.values),
        gamma_proj=gamma_bruteforce(dist, rhs.projected),
        eta=eta_bruteforce(dist),
        eps=eps,
        delta=delta,
    )
    log.debug("theory_report", d=game.d, tau=dist.tau, gamma_b=report.gamma_b, eta=report.eta)
    return report


# ---------------------------------------------------------------------------
# Adversarial game closed forms
# ---------------------------------------------------------------------------


def h_diagonal(d: int) -> FloatArray:
    """Per-bucket diagonal sqrt(h (d - h)) / d, h = 1..d-1."""
    h = np.arange(1, d, dtype=np.float64)
    return np.sqrt(h * (d - h)) / d


def _plateau(d: int, n: int) -> FloatArray:
    if not 1 <= n < d / 2:
        raise ConfigError(f"plateau width must satisfy 1 <= n < d/2, got n={n}, d={d}", n=n)
    return np.concatenate([np.arange(1, n + 1), np.arange(d - n, d)]).astype(np.float64)


def adversarial_bucket_sums(d: int, n: int, xi: float) -> FloatArray:
    """sum_{|S| = h} (b_alpha)_S^2 = xi^2 h^3 / (d^3 (d - h)) on the plateau, 0 elsewhere."""
    sums = np.zeros(d - 1)
    h = _plateau(d, n)
    sums[h.astype(np.int64) - 1] = xi**2 * h**3 / (float(d) ** 3 * (d - h))
    return sums


@dataclass(frozen=True)
class AdversarialNorms:
    b: float
    hb: float
    sqrt_hb: float


def adversarial_norms(d: int, n: int, xi: float) -> AdversarialNorms:
    """||b_alpha||^2, ||H b_alpha||^2 and ||sqrt(H) b_alpha||^2 by their finite sums."""
    h = _plateau(d, n)
    df = float(d)
    return AdversarialNorms(
        b=float(xi**2 / df**3 * np.sum(h**3 / (df - h))),
        hb=float(xi**2 / df**5 * np.sum(h**4)),
        sqrt_hb=float(xi**2 / df**4 * np.sum(h**3.5 / np.sqrt(df - h))),
    )


def adversarial_gamma_analytic(d: int, n: int, xi: float, chi: float, tau: float) -> float:
    """gamma_tau(b_alpha) for the adversarial game.

    The game is linear in |S| off the plateau, so P_U b_alpha = b_alpha and this is
    also the projected gamma. ``chi`` cancels from b_alpha.
    """
    del chi
    return gamma_closed_form(tau, d, adversarial_bucket_sums(d, n, xi))


def adversarial_gamma_from_norms(d: int, n: int, xi: float, tau: float) -> float:
    """Same value through the norms.

    (d-1)||b||^2, (N_{1/2} d)||sqrt(H) b||^2 and (N_1 d^2)||H b||^2 for tau = 0, 1/2, 1.
    """
    norms = adversarial_norms(d, n, xi)
    if tau == 0.0:
        return (d - 1) * norms.b
    if tau == 0.5:
        return math.exp(log_normalizer(0.5, d)) * d * norms.sqrt_hb
    if tau == 1.0:
        return math.exp(log_normalizer(1.0, d)) * d**2 * norms.hb
    raise ConfigError(f"norm form exists for tau in {{0, 1/2, 1}}, got {tau}", tau=tau)


# ---------------------------------------------------------------------------
# Mean squared error
# ---------------------------------------------------------------------------


def mse_ratio_prediction(
    dist1: BucketDistribution, dist2: BucketDistribution, game: Game, lam: float | None = None
) -> float:
    """Predicted MSE(dist1) / MSE(dist2) of the unpaired with-replacement matvec estimator.

    (gamma_1(b) - ||phi* - alpha 1||^2) / (gamma_2(b) - ||phi* - alpha 1||^2); 0/0 counts as 1.
    """
    d = game.d
    if d > MSE_PREDICTION_MAX_D:
        raise CapabilityError(
            f"MSE prediction supports d <= {MSE_PREDICTION_MAX_D}, got d={d}",
            d=d,
            limit=MSE_PREDICTION_MAX_D,
        )
    if dist1.d != d or dist2.d != d:
        raise DimensionMismatchError("distributions and game disagree on d", expected=d)
    rhs = full_rhs(game, lam)
    sums = rhs.bucket_sums()
    offset = float(np.sum(rhs.centered_phi**2))
    numerator = gamma_closed_form(dist1.tau, d, sums) - offset
    denominator = gamma_closed_form(dist2.tau, d, sums) - offset
    scale = max(abs(numerator), abs(denominator), offset, 1e-300)
    if abs(numerator) <= 1e-12 * scale and abs(denominator) <= 1e-12 * scale:
        return 1.0
    return numerator / denominator


def expected_matvec_mse(
    dist: BucketDistribution,
    game: Game,
    m: int,
    strategy: Strategy | str = Strategy.WITH_REPLACEMENT,
    lam: float | None = None,
) -> float:
    """Exact E||phi_M - phi*||^2 for the unpaired matvec estimator with budget m."""
    rhs = full_rhs(game, lam)
    if Strategy.parse(strategy) is Strategy.WITH_REPLACEMENT:
        gamma = gamma_closed_form(dist.tau, game.d, rhs.bucket_sums())
        return (gamma - float(np.sum(rhs.centered_phi**2))) / m
    log_alpha = solve_log_alpha(dist, m, folded=False)
    log_q = inclusion_log_probs(dist, log_alpha, folded=False)[rhs.sizes - 1]
    leverage = np.exp(-log_binomial_array(game.d, rhs.sizes))
    return float(np.sum(np.expm1(-log_q) * leverage * rhs.values**2))


def _replicate(task: Callable[[int], _T], replicates: int, workers: int) -> list[_T]:
    """Run ``task(i)`` for i < replicates; results stay in replicate order."""
    if workers <= 1:
        return [task(i) for i in range(replicates)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, range(replicates)))


def replicate_estimates(
    game: Game, config: EstimatorConfig, replicates: int, *, workers: int = 1
) -> FloatArray:
    """(replicates, d) estimates from child streams 0..replicates-1 of ``config.seed``."""
    if replicates < 1:
        raise ConfigError(f"need at least one replicate, got {replicates}", replicates=replicates)
    root = RandomStreams(config.seed)

    def run(i: int) -> FloatArray:
        return estimate(game, config, streams=root.child(i)).phi

    return np.vstack(_replicate(run, replicates, workers))


@dataclass(frozen=True)
class MonteCarloMse:
    mean: float
    std_error: float
    replicates: int


def empirical_mse(
    config: EstimatorConfig,
    game: Game,
    phi_star: npt.ArrayLike,
    replicates: int,
    *,
    seed: int | None = None,
    workers: int = 1,
) -> MonteCarloMse:
    run_config = config if seed is None else config.with_budget(seed=seed)
    estimates = replicate_estimates(game, run_config, replicates, workers=workers)
    errors = np.sum((estimates - np.asarray(phi_star, dtype=np.float64)) ** 2, axis=1)
    std_error = float(np.std(errors, ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0
    return MonteCarloMse(float(np.mean(errors)), std_error, replicates)


def empirical_mse_ratio(
    dist1: BucketDistribution,
    dist2: BucketDistribution,
    game: Game,
    m: int,
    replicates: int,
    *,
    lam: float | None = None,
    seed: int = 0,
    workers: int = 1,
) -> float:
    """Realized MSE(dist1) / MSE(dist2) for the unpaired with-replacement matvec estimator."""
    phi_star = exact_shapley(game).phi
    lam_mode = LambdaMode("alpha") if lam is None else LambdaMode("custom", float(lam))

    def config_for(dist: BucketDistribution) -> EstimatorConfig:
        return EstimatorConfig(
            EstimatorKind.MATVEC, dist.tau, Strategy.WITH_REPLACEMENT, False, lam_mode, m, seed
        )

    first = empirical_mse(config_for(dist1), game, phi_star, replicates, workers=workers)
    second = empirical_mse(config_for(dist2), game, phi_star, replicates, workers=workers)
    return first.mean / second.mean


# ---------------------------------------------------------------------------
# Faithfulness
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FaithfulnessCurve:
    """Game values along an insertion or deletion path.

    ``fractions`` runs from 0 to 1 over the top_k steps; ``values`` are rescaled
    so v(empty) maps to 0 and v(full) to 1 unless the two coincide, in which case
    the raw values are kept and ``normalized`` is False.
    """

    order: npt.NDArray[np.int64]
    fractions: FloatArray
    values: FloatArray
    normalized: bool

    @property
    def auc(self) -> float:
        return float(scipy.integrate.trapezoid(self.values, self.fractions))


def importance_order(phi: npt.ArrayLike) -> npt.NDArray[np.int64]:
    """Players by decreasing |phi|; ties keep index order."""
    magnitude = np.abs(np.asarray(phi, dtype=np.float64).reshape(-1))
    return np.argsort(-magnitude, kind="stable").astype(np.int64)


def _curve(game: Game, phi: npt.ArrayLike, top_k: int | None, *, insert: bool) -> FaithfulnessCurve:
    order = importance_order(phi)
    d = game.d
    if order.size != d:
        raise DimensionMismatchError(
            "attribution length differs from the game", expected=d, actual=int(order.size)
        )
    k = d if top_k is None else top_k
    if not 1 <= k <= d:
        raise ConfigError(f"top_k must lie in [1, {d}], got {k}", top_k=k)
    member = np.zeros((k + 1, d), dtype=bool)
    for step in range(1, k + 1):
        member[step] = member[step - 1]
        member[step, order[step - 1]] = True
    if not insert:
        member = ~member
    values = game.evaluate_batch(SubsetBatch.from_membership(member, d))
    span = game.v_full - game.v_empty
    normalized = span != 0.0
    if normalized:
        values = (values - game.v_empty) / span
    return FaithfulnessCurve(order[:k], np.linspace(0.0, 1.0, k + 1), values, normalized)


def insertion_curve(game: Game, phi: npt.ArrayLike, top_k: int | None = None) -> FaithfulnessCurve:
    """Start at the baseline and add players by decreasing |phi|."""
    return _curve(game, phi, top_k, insert=True)


def deletion_curve(game: Game, phi: npt.ArrayLike, top_k: int | None = None) -> FaithfulnessCurve:
    """Start at the query and remove players by decreasing |phi|."""
    return _curve(game, phi, top_k, insert=False)


def insertion_auc(game: Game, phi: npt.ArrayLike, top_k: int | None = None) -> float:
    return insertion_curve(game, phi, top_k).auc


def deletion_auc(game: Game, phi: npt.ArrayLike, top_k: int | None = None) -> float:
    return deletion_curve(game, phi, top_k).auc


def _magnitudes(phi: npt.ArrayLike) -> FloatArray:
    arr = np.abs(np.asarray(phi, dtype=np.float64))
    if arr.ndim == 2:
        # one row per output class
        return arr.sum(axis=0)
    return arr.reshape(-1)


def rank_correlation(phi_a: npt.ArrayLike, phi_b: npt.ArrayLike) -> float:
    """Spearman correlation of |phi_a| and |phi_b| with average-rank ties.

    Two constant vectors count as perfectly correlated; one constant vector
    gives NaN.
    """
    a = _magnitudes(phi_a)
    b = _magnitudes(phi_b)
    if a.shape != b.shape:
        raise DimensionMismatchError(
            "attributions differ in length", expected=int(a.size), actual=int(b.size)
        )
    flat_a = bool(np.all(a == a[0]))
    flat_b = bool(np.all(b == b[0]))
    if flat_a and flat_b:
        return 1.0
    if flat_a or flat_b:
        return math.nan
    return float(scipy.stats.spearmanr(a, b).statistic)


@dataclass(frozen=True)
class FaithfulnessReport:
    insertion_auc: float
    deletion_auc: float
    rank_corr: float
    normalized: bool

    def as_record(self) -> dict[str, Any]:
        return {
            "insertion_auc": self.insertion_auc,
            "deletion_auc": self.deletion_auc,
            "rank_corr": self.rank_corr,
            "auc_normalized": self.normalized,
        }


def faithfulness_report(
    game: Game,
    phi: npt.ArrayLike,
    top_k: int | None = None,
    phi_reference: npt.ArrayLike | None = None,
) -> FaithfulnessReport:
    insertion = insertion_curve(game, phi, top_k)
    deletion = deletion_curve(game, phi, top_k)
    corr = math.nan if phi_reference is None else rank_correlation(phi, phi_reference)
    return FaithfulnessReport(insertion.auc, deletion.auc, corr, insertion.normalized)


__all__ = [
    "AdversarialNorms",
    "FaithfulnessCurve",
    "FaithfulnessReport",
    "FullRhs",
    "MonteCarloMse",
    "TheoryReport",
    "adversarial_bucket_sums",
    "adversarial_gamma_analytic",
    "adversarial_gamma_from_norms",
    "adversarial_norms",
    "deletion_auc",
    "deletion_curve",
    "empirical_mse",
    "empirical_mse_ratio",
    "eta_bruteforce",
    "eta_closed_form",
    "expected_matvec_mse",
    "faithfulness_report",
    "full_rhs",
    "gamma_bruteforce",
    "gamma_closed_form",
    "h_diagonal",
    "insertion_auc",
    "insertion_curve",
    "log_normalizer",
    "mse_ratio_prediction",
    "rank_correlation",
    "replicate_estimates",
    "theorem_bounds",
    "theory_report",
]
