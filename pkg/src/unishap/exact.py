"""Ground-truth Shapley oracles.

- ``exact_bruteforce``: the marginal-contribution sum over all 2^d coalitions
- ``exact_regression``: Q U^T b_lambda + alpha 1 over all 2^d - 2 proper coalitions
- ``lagrangian_solve``: the equality-constrained quadratic program, as a cross-check

Both enumerating oracles stream coalitions in chunks so memory stays
O(chunk * d) regardless of 2^d.
"""
from __future__ import annotations

import math
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.linalg

from unishap.combinatorics import log_kernel_weight, log_shapley_weight
from unishap.errors import CapabilityError, ConfigError, DimensionMismatchError, UnishapError
from unishap.games import Game
from unishap.subsets import SubsetBatch

FloatArray = npt.NDArray[np.float64]

BRUTEFORCE_MAX_D = 25
REGRESSION_MAX_D = 20
PINV_RTOL = 1e-12

_ENUMERATION_CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class ShapleyVector:
    phi: FloatArray
    total: float

    @property
    def efficiency_gap(self) -> float:
        return abs(float(np.sum(self.phi)) - self.total)

    def __len__(self) -> int:
        return int(self.phi.size)


def shapley_weight(d: int, s: int) -> float:
    """s! (d - s - 1)! / d!, the weight of a size-s coalition in the marginal sum."""
    if not 0 <= s <= d - 1:
        raise ConfigError(f"coalition size must lie in [0, {d - 1}], got {s}", d=d, s=s)
    return math.exp(float(log_shapley_weight(d, s)))


def _require_d(game: Game, d: int | None, limit: int, oracle: str) -> int:
    n_players = game.d if d is None else d
    if n_players != game.d:
        raise DimensionMismatchError(
            f"oracle asked for d={n_players} but the game has d={game.d}",
            expected=game.d,
            actual=n_players,
        )
    if n_players > limit:
        raise CapabilityError(
            f"{oracle} supports d <= {limit}, got d={n_players}", d=n_players, limit=limit
        )
    return n_players


def _gray_chunks(d: int, *, include_endpoints: bool) -> Iterator[npt.NDArray[np.int64]]:
    """Masks in reflected Gray-code order, chunked."""
    total = 2**d
    for start in range(0, total, _ENUMERATION_CHUNK):
        codes = np.arange(start, min(start + _ENUMERATION_CHUNK, total), dtype=np.int64)
        masks = codes ^ (codes >> 1)
        if not include_endpoints:
            masks = masks[(masks != 0) & (masks != total - 1)]
        yield masks


def exact_bruteforce(game: Game, d: int | None = None) -> ShapleyVector:
    """phi_j = sum_{S not containing j} w(|S|) (v(S + j) - v(S)).

    Regrouped by coalition: v(S) enters phi_j with +w(|S|-1) when j is in S
    and with -w(|S|) otherwise, so each value is used once as it streams by.
    """
    n_players = _require_d(game, d, BRUTEFORCE_MAX_D, "exact_bruteforce")
    sizes_all = np.arange(n_players + 1)
    weight = np.exp(log_shapley_weight(n_players, np.minimum(sizes_all, n_players - 1)))
    gain = np.concatenate([[0.0], weight[:-1]])  # w(h - 1), zero for h = 0
    loss = np.where(sizes_all < n_players, weight, 0.0)  # w(h), zero for h = d

    phi = np.zeros(n_players)
    for masks in _gray_chunks(n_players, include_endpoints=True):
        batch = SubsetBatch.from_masks(masks, n_players)
        values = game.evaluate_batch(batch)
        member = batch.membership()
        sizes = member.sum(axis=1)
        phi += member.T @ (values * gain[sizes]) - (~member).T @ (values * loss[sizes])
    return ShapleyVector(phi, game.total)


def exact_regression(game: Game, d: int | None = None, lam: float | None = None) -> ShapleyVector:
    """Q U^T b_lambda + alpha 1 accumulated row by row.

    Each row contributes (d/(d-1)) k(S) (v(S) - v(empty) - lam |S|) (z_S - |S|/d 1);
    ``lam`` defaults to alpha.
    """
    n_players = _require_d(game, d, REGRESSION_MAX_D, "exact_regression")
    shift = game.alpha if lam is None else float(lam)
    log_scale = log_kernel_weight(n_players, np.arange(1, n_players)) + np.log(
        n_players / (n_players - 1)
    )
    scale = np.concatenate([[0.0], np.exp(log_scale)])

    t = np.zeros(n_players)
    for masks in _gray_chunks(n_players, include_endpoints=False):
        if masks.size == 0:
            continue
        batch = SubsetBatch.from_masks(masks, n_players)
        values = game.evaluate_batch(batch)
        member = batch.membership()
        sizes = member.sum(axis=1)
        coef = scale[sizes] * (values - game.v_empty - shift * sizes)
        t += member.T @ coef - np.sum(coef * sizes) / n_players
    return ShapleyVector(t + game.alpha, game.total)


def normal_equations(game: Game, d: int | None = None) -> tuple[FloatArray, FloatArray]:
    """M = sum k(S) z_S z_S^T and g = sum k(S) z_S (v(S) - v(empty)) over proper S."""
    n_players = _require_d(game, d, REGRESSION_MAX_D, "normal_equations")
    weight = np.concatenate([[0.0], np.exp(log_kernel_weight(n_players, np.arange(1, n_players)))])
    m = np.zeros((n_players, n_players))
    g = np.zeros(n_players)
    for masks in _gray_chunks(n_players, include_endpoints=False):
        if masks.size == 0:
            continue
        batch = SubsetBatch.from_masks(masks, n_players)
        values = game.evaluate_batch(batch) - game.v_empty
        member = batch.membership().astype(np.float64)
        k = weight[batch.sizes()]
        m += member.T @ (member * k[:, None])
        g += member.T @ (k * values)
    return m, g


def lagrangian_solve(m: npt.ArrayLike, g: npt.ArrayLike, target: float) -> FloatArray:
    """argmin phi^T M phi - 2 g^T phi subject to 1^T phi = target.

    phi = phi_u - M^+ 1 (1^T phi_u - target) / (1^T M^+ 1) with phi_u = M^+ g.
    """
    matrix = np.asarray(m, dtype=np.float64)
    rhs = np.asarray(g, dtype=np.float64).reshape(-1)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] != rhs.size:
        raise DimensionMismatchError(
            f"M of shape {matrix.shape} does not match g of length {rhs.size}",
            expected=rhs.size,
        )
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(matrix).max())):
        raise UnishapError("M must be symmetric")
    pinv = scipy.linalg.pinvh(matrix, rtol=PINV_RTOL)
    ones = np.ones(rhs.size)
    phi_u = pinv @ rhs
    direction = pinv @ ones
    denominator = float(ones @ direction)
    if abs(denominator) <= PINV_RTOL * max(1.0, float(np.abs(direction).max())):
        raise UnishapError("1^T M^+ 1 vanishes; the constraint direction is outside range(M)")
    return phi_u - direction * (float(ones @ phi_u) - target) / denominator


def exact_shapley(game: Game) -> ShapleyVector:
    """Analytic values when the game knows them, brute force up to d = 25."""
    analytic = game.analytic_shapley()
    if analytic is not None:
        return ShapleyVector(np.asarray(analytic, dtype=np.float64), game.total)
    return exact_bruteforce(game)
