"""Shapley value estimation by sketched regression and matrix-vector products.

Provides:
- Exact oracles (brute force, full regression, constrained Lagrangian solve)
- Bucket sampling distributions interpolating leverage scores and kernel weights
- Paired sketches with and without replacement
- Regression and matrix-vector estimators, with KernelSHAP, unbiased KernelSHAP
  and LeverageSHAP presets
- Error diagnostics (gamma, eta, bounds, MSE predictions) and faithfulness metrics

Usage:
    # From Python:
    from unishap import adversarial_game, estimate, preset
    game = adversarial_game(d=64, n=2, xi=1.0, chi=0.0)
    result = estimate(game, preset("leverageshap", m=1024, seed=7))

    # From shell:
    unishap estimate --game adversarial:d=64,n=2,xi=1,chi=0 --preset leverageshap --m 1024
"""
from __future__ import annotations

from unishap.errors import (
    CapabilityError,
    ConfigError,
    DimensionMismatchError,
    GameError,
    GameEvaluationError,
    UnishapError,
)
from unishap.estimators import (
    EstimatorConfig,
    EstimatorKind,
    LambdaMode,
    ShapleyEstimate,
    estimate,
    matvec_estimate,
    preset,
    regression_estimate,
)
from unishap.exact import exact_bruteforce, exact_regression, exact_shapley
from unishap.external import ExternalGame, external_game
from unishap.games import (
    Game,
    additive_game,
    adversarial_game,
    masked_game,
    tabular_game,
)
from unishap.sampling import BucketDistribution, Sketch, Strategy, bucket_distribution, draw_sketch
from unishap.subsets import Subset, SubsetBatch

__version__ = "0.1.0"

__all__ = [
    "BucketDistribution",
    "CapabilityError",
    "ConfigError",
    "DimensionMismatchError",
    "EstimatorConfig",
    "EstimatorKind",
    "ExternalGame",
    "Game",
    "GameError",
    "GameEvaluationError",
    "LambdaMode",
    "ShapleyEstimate",
    "Sketch",
    "Strategy",
    "Subset",
    "SubsetBatch",
    "UnishapError",
    "additive_game",
    "adversarial_game",
    "bucket_distribution",
    "draw_sketch",
    "estimate",
    "exact_bruteforce",
    "exact_regression",
    "exact_shapley",
    "external_game",
    "masked_game",
    "matvec_estimate",
    "preset",
    "regression_estimate",
    "tabular_game",
]
