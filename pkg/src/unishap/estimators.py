"""Randomized Shapley estimators over a sketch.

Both estimators share the right-hand side

    (b_lambda)_S = sqrt(d/(d-1)) sqrt(k(S)) (v(S) - v(empty) - lambda |S|)

and return Q x + alpha 1, so every estimate is efficient by construction.

- regression: x solves the sketched normal equations U^T S^T S U x = U^T S^T S b
- matvec:     x = U^T S^T S b directly (unbiased)

Row scales are carried as logarithms; for d in the thousands k(S) alone
underflows while the product w_S k(S) stays moderate.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.linalg
import structlog

from unishap.combinatorics import ImplicitQ, log_kernel_weight
from unishap.errors import ConfigError, DimensionMismatchError
from unishap.exact import lagrangian_solve
from unishap.games import Game
from unishap.sampling import Sketch, Strategy, bucket_distribution, draw_sketch
from unishap.seeding import DEFAULT_SEED, RandomStreams
from unishap.settings import DEFAULT_MAXVAL

log = structlog.get_logger(__name__)

FloatArray = npt.NDArray[np.float64]

BLOCK_ROWS = 1024
RANK_RTOL = 1e-10
ERROR_RATIO_MIN = 10.0
DEFAULT_M = 1024

SOLVER_CHOLESKY = "cholesky"
SOLVER_PSEUDO_INVERSE = "pseudo_inverse"


class EstimatorKind(enum.Enum):
    REGRESSION = "regression"
    MATVEC = "matvec"

    @classmethod
    def parse(cls, text: str | EstimatorKind) -> EstimatorKind:
        if isinstance(text, EstimatorKind):
            return text
        try:
            return cls(text.strip().lower())
        except ValueError as exc:
            raise ConfigError(f"unknown estimator kind {text!r}", kind=text) from exc


@dataclass(frozen=True)
class LambdaMode:
    mode: Literal["alpha", "zero", "custom"]
    value: float = 0.0

    @classmethod
    def parse(cls, text: str | float | LambdaMode) -> LambdaMode:
        if isinstance(text, LambdaMode):
            return text
        if isinstance(text, (int, float)):
            return cls("custom", float(text))
        key = text.strip().lower()
        if key == "alpha":
            return cls("alpha")
        if key == "zero":
            return cls("zero")
        try:
            value = float(key)
        except ValueError as exc:
            raise ConfigError(
                f"lambda must be 'alpha', 'zero' or a number, got {text!r}", lam=text
            ) from exc
        if not math.isfinite(value):
            raise ConfigError(f"lambda must be finite, got {text!r}", lam=text)
        return cls("custom", value)

    def resolve(self, alpha: float) -> float:
        if self.mode == "alpha":
            return alpha
        if self.mode == "zero":
            return 0.0
        return self.value

    def __str__(self) -> str:
        return self.mode if self.mode != "custom" else repr(self.value)


@dataclass(frozen=True)
class EstimatorConfig:
    kind: EstimatorKind
    tau: float
    strategy: Strategy
    paired: bool
    lambda_mode: LambdaMode
    m: int = DEFAULT_M
    seed: int = DEFAULT_SEED
    maxval: float = DEFAULT_MAXVAL

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}", tau=self.tau)
        if self.m < 1:
            raise ConfigError(f"sample budget must be positive, got m={self.m}", m=self.m)
        if self.paired and self.m % 2:
            raise ConfigError(f"paired sampling needs an even budget, got m={self.m}", m=self.m)
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}", seed=self.seed)

    def with_budget(self, m: int | None = None, seed: int | None = None) -> EstimatorConfig:
        return replace(
            self, m=self.m if m is None else m, seed=self.seed if seed is None else seed
        )

    def as_record(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "tau": self.tau,
            "strategy": self.strategy.value,
            "paired": self.paired,
            "lambda": str(self.lambda_mode),
            "m": self.m,
            "seed": self.seed,
            "maxval": self.maxval,
        }


_PRESETS: dict[str, tuple[EstimatorKind, float, Strategy, bool, LambdaMode]] = {
    "kernelshap": (
        EstimatorKind.REGRESSION, 1.0, Strategy.WITH_REPLACEMENT, True, LambdaMode("alpha")
    ),
    "unbiased_kernelshap": (
        EstimatorKind.MATVEC, 1.0, Strategy.WITH_REPLACEMENT, True, LambdaMode("zero")
    ),
    "leverageshap": (
        EstimatorKind.REGRESSION, 0.0, Strategy.WITHOUT_REPLACEMENT, True, LambdaMode("alpha")
    ),
}

PRESET_NAMES: tuple[str, ...] = tuple(_PRESETS)


def preset(
    name: str, *, m: int = DEFAULT_M, seed: int = DEFAULT_SEED, maxval: float = DEFAULT_MAXVAL
) -> EstimatorConfig:
    key = name.strip().lower().replace("-", "_")
    if key not in _PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; expected one of {', '.join(PRESET_NAMES)}", preset=name
        )
    kind, tau, strategy, paired, lam = _PRESETS[key]
    return EstimatorConfig(kind, tau, strategy, paired, lam, m=m, seed=seed, maxval=maxval)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShapleyEstimate:
    phi: FloatArray
    total: float
    kind: EstimatorKind
    lam: float
    rows: int
    m: int
    seed: int | None
    tau: float
    strategy: Strategy
    paired: bool
    evaluations: int
    solver_path: str | None = None
    config: EstimatorConfig | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return int(self.phi.size)

    @property
    def efficiency_gap(self) -> float:
        return abs(float(np.sum(self.phi)) - self.total)

    def metadata(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "d": self.d,
            "estimator": self.kind.value,
            "lambda": self.lam,
            "m": self.m,
            "rows": self.rows,
            "seed": self.seed,
            "tau": self.tau,
            "strategy": self.strategy.value,
            "paired": self.paired,
            "evaluations": self.evaluations,
            "efficiency_gap": self.efficiency_gap,
            "solver_path": self.solver_path,
        }
        if self.config is not None:
            record["config"] = self.config.as_record()
        return record

    def to_csv(self, path: str | Path) -> None:
        frame = pd.DataFrame({"feature": np.arange(self.d), "phi": self.phi})
        frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")

    def write_metadata(self, path: str | Path, **extra: Any) -> None:
        payload = {**self.metadata(), **extra}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class ErrorEstimate:
    value: float
    ratio: float

    def __float__(self) -> float:
        return self.value


# ---------------------------------------------------------------------------
# Right-hand side
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SketchedRhs:
    """b_lambda on the sketch rows, split into a residual and a log scale."""

    residual: FloatArray
    log_scale: FloatArray
    sizes: npt.NDArray[np.int64]
    lam: float
    alpha: float
    v_empty: float
    v_full: float

    @property
    def values(self) -> FloatArray:
        return np.exp(self.log_scale) * self.residual


def build_rhs(sketch: Sketch, game: Game, lam: float) -> SketchedRhs:
    d = game.d
    if sketch.d != d:
        raise DimensionMismatchError(
            f"sketch has d={sketch.d}, game has d={d}", expected=d, actual=sketch.d
        )
    sizes = sketch.subsets.sizes()
    values = game.evaluate_batch(sketch.subsets)
    residual = values - game.v_empty - lam * sizes
    if len(sizes):
        log_scale = 0.5 * (math.log(d / (d - 1)) + log_kernel_weight(d, sizes))
    else:
        log_scale = np.zeros(0)
    return SketchedRhs(
        residual, np.asarray(log_scale), sizes, float(lam), game.alpha, game.v_empty, game.v_full
    )


def _row_coefficients(sketch: Sketch, rhs: SketchedRhs) -> FloatArray:
    """w_S (d/(d-1)) k(S), combined in log space."""
    return np.exp(sketch.log_weights + 2.0 * rhs.log_scale)


def _estimate(
    phi: FloatArray,
    game: Game,
    sketch: Sketch,
    kind: EstimatorKind,
    lam: float,
    solver_path: str | None = None,
) -> ShapleyEstimate:
    return ShapleyEstimate(
        phi=phi,
        total=game.total,
        kind=kind,
        lam=lam,
        rows=len(sketch),
        m=sketch.m_nominal,
        seed=sketch.seed,
        tau=sketch.tau,
        strategy=sketch.strategy,
        paired=sketch.paired,
        evaluations=len(sketch),
        solver_path=solver_path,
    )


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def matvec_estimate(sketch: Sketch, game: Game, lam: float) -> ShapleyEstimate:
    """Q U^T S^T S b_lambda + alpha 1.

    Row S adds w_S (d/(d-1)) k(S) r_S (z_S - |S|/d 1), r_S = v(S) - v(empty) - lam |S|.
    """
    d = game.d
    rhs = build_rhs(sketch, game, lam)
    coef = _row_coefficients(sketch, rhs) * rhs.residual
    t = np.zeros(d)
    for start in range(0, len(sketch), BLOCK_ROWS):
        block = sketch.subsets.slice(start, start + BLOCK_ROWS)
        c = coef[start : start + BLOCK_ROWS]
        t += block.membership().T @ c - float(np.sum(c * rhs.sizes[start : start + BLOCK_ROWS])) / d
    return _estimate(t + game.alpha, game, sketch, EstimatorKind.MATVEC, lam)


def _accumulate_normal_equations(
    sketch: Sketch, coef: FloatArray, residual: FloatArray, d: int
) -> tuple[FloatArray, FloatArray]:
    """A = sum c_S z_S z_S^T and y = sum c_S r_S z_S, before projection by Q.

    Rows larger than d/2 enter as their complement with a negated residual:
    Q^T(1 - z) = -Q^T z, so the projected sums are unchanged and the blocks
    stay at most half dense.
    """
    a = np.zeros((d, d))
    y = np.zeros(d)
    for start in range(0, len(sketch), BLOCK_ROWS):
        member = sketch.subsets.slice(start, start + BLOCK_ROWS).membership()
        flip = 2 * member.sum(axis=1) > d
        member[flip] = ~member[flip]
        dense = member.astype(np.float64)
        c = coef[start : start + BLOCK_ROWS]
        signed = np.where(flip, -1.0, 1.0) * c * residual[start : start + BLOCK_ROWS]
        a += dense.T @ (dense * c[:, None])
        y += dense.T @ signed
    return a, y


def solve_normal_equations(
    gram: FloatArray, rhs: FloatArray, rows: int
) -> tuple[FloatArray, str]:
    """Cholesky when the sketch can have full rank, minimum-norm solve otherwise."""
    n = gram.shape[0]
    if rows >= n:
        try:
            factor, lower = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
            diag = np.abs(np.diag(factor))
            if diag.min() ** 2 > RANK_RTOL * diag.max() ** 2:
                return scipy.linalg.cho_solve((factor, lower), rhs), SOLVER_CHOLESKY
        except np.linalg.LinAlgError:
            pass
    log.warning("regression_solver_fallback", rows=rows, unknowns=n)
    return scipy.linalg.pinvh(gram, rtol=RANK_RTOL) @ rhs, SOLVER_PSEUDO_INVERSE


def regression_estimate(sketch: Sketch, game: Game, lam: float) -> ShapleyEstimate:
    """Q argmin ||S(U x - b_lambda)||^2 + alpha 1 via the (d-1) x (d-1) normal equations."""
    if len(sketch) == 0:
        raise ConfigError("regression needs a non-empty sketch")
    d = game.d
    rhs = build_rhs(sketch, game, lam)
    coef = _row_coefficients(sketch, rhs)
    a, y = _accumulate_normal_equations(sketch, coef, rhs.residual, d)
    q = ImplicitQ(d)
    gram = q.sandwich(a)
    gram = 0.5 * (gram + gram.T)
    x, path = solve_normal_equations(gram, q.transpose_apply(y), len(sketch))
    return _estimate(q.apply(x) + game.alpha, game, sketch, EstimatorKind.REGRESSION, lam, path)


def lagrangian_estimate(sketch: Sketch, game: Game) -> ShapleyEstimate:
    """Constrained sketched least squares solved through its Lagrangian.

    min ||S(Z' phi - b)||^2 subject to 1^T phi = v(full) - v(empty); this is the
    regression estimator with lambda = alpha reached by a different route.
    """
    if len(sketch) == 0:
        raise ConfigError("the constrained solve needs a non-empty sketch")
    d = game.d
    rhs = build_rhs(sketch, game, 0.0)
    log_k = 2.0 * rhs.log_scale - math.log(d / (d - 1))
    coef = np.exp(sketch.log_weights + log_k)
    member = sketch.subsets.membership().astype(np.float64)
    gram = member.T @ (member * coef[:, None])
    g = member.T @ (coef * rhs.residual)
    phi = lagrangian_solve(gram, g, game.total)
    return _estimate(phi, game, sketch, EstimatorKind.REGRESSION, game.alpha, "lagrangian")


def run_sketch(sketch: Sketch, game: Game, kind: EstimatorKind, lam: float) -> ShapleyEstimate:
    if kind is EstimatorKind.REGRESSION:
        return regression_estimate(sketch, game, lam)
    return matvec_estimate(sketch, game, lam)


def estimate(
    game: Game,
    config: EstimatorConfig,
    *,
    streams: RandomStreams | None = None,
    workers: int = 1,
) -> ShapleyEstimate:
    """Draw the sketch ``config`` describes and run its estimator.

    ``streams`` overrides the streams derived from ``config.seed``; replicate
    loops pass child streams here.
    """
    dist = bucket_distribution(game.d, config.tau)
    sketch = draw_sketch(
        dist,
        config.m,
        streams if streams is not None else RandomStreams(config.seed),
        config.strategy,
        config.paired,
        maxval=config.maxval,
        workers=workers,
    )
    lam = config.lambda_mode.resolve(game.alpha)
    result = run_sketch(sketch, game, config.kind, lam)
    log.debug(
        "estimate_finished",
        kind=config.kind.value,
        d=game.d,
        rows=result.rows,
        seed=config.seed,
        solver=result.solver_path,
    )
    return replace(result, config=config)


# ---------------------------------------------------------------------------
# Error measures
# ---------------------------------------------------------------------------


def error_estimate(phi_m0: ShapleyEstimate, phi_ref: ShapleyEstimate) -> ErrorEstimate:
    """||phi_ref - phi_m0|| as a stand-in for the error at m0.

    The reference must use at least ten times the budget.
    """
    if phi_m0.d != phi_ref.d:
        raise DimensionMismatchError(
            "estimates disagree on d", expected=phi_m0.d, actual=phi_ref.d
        )
    ratio = phi_ref.m / phi_m0.m
    if ratio < ERROR_RATIO_MIN:
        raise ConfigError(
            f"reference budget must be at least {ERROR_RATIO_MIN:g}x the estimate's, "
            f"got {ratio:g}x",
            ratio=ratio,
        )
    return ErrorEstimate(float(np.linalg.norm(phi_ref.phi - phi_m0.phi)), ratio)


def normalized_mse(phi_hat: npt.ArrayLike, phi_star: npt.ArrayLike) -> tuple[float, bool]:
    """||phi_hat - phi*||^2 / ||phi*||^2, or the raw squared error (flagged) when phi* = 0."""
    estimate_ = np.asarray(phi_hat, dtype=np.float64)
    exact = np.asarray(phi_star, dtype=np.float64)
    if estimate_.shape != exact.shape:
        raise DimensionMismatchError(
            "estimate and exact vector differ in length",
            expected=exact.size,
            actual=estimate_.size,
        )
    squared_error = float(np.sum((estimate_ - exact) ** 2))
    denominator = float(np.sum(exact**2))
    if denominator == 0.0:
        return squared_error, True
    return squared_error / denominator, False


def config_from_record(record: dict[str, Any]) -> EstimatorConfig:
    return EstimatorConfig(
        kind=EstimatorKind.parse(record["kind"]),
        tau=float(record["tau"]),
        strategy=Strategy.parse(record["strategy"]),
        paired=bool(record["paired"]),
        lambda_mode=LambdaMode.parse(record["lambda"]),
        m=int(record["m"]),
        seed=int(record["seed"]),
        maxval=float(record.get("maxval", DEFAULT_MAXVAL)),
    )


__all__ = [
    "EstimatorConfig",
    "EstimatorKind",
    "ErrorEstimate",
    "LambdaMode",
    "PRESET_NAMES",
    "ShapleyEstimate",
    "SketchedRhs",
    "build_rhs",
    "error_estimate",
    "estimate",
    "lagrangian_estimate",
    "matvec_estimate",
    "normalized_mse",
    "preset",
    "regression_estimate",
]
