"""Value functions v: 2^[d] -> R.

A game is evaluated in batches only. Subclasses implement ``_evaluate`` on a
chunk of at most ``batch_size`` coalitions; ``Game.evaluate_batch`` does the
chunking, the shape and finiteness checks, and the evaluation count.

Subclasses finish their own setup before calling ``Game.__init__``, which
evaluates and memoizes v(empty) and v(full).
"""
from __future__ import annotations

import math
import threading
from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, ClassVar

import numpy as np
import numpy.typing as npt
import pandas as pd
import structlog

from unishap.errors import (
    ConfigError,
    DimensionMismatchError,
    GameError,
    GameEvaluationError,
)
from unishap.settings import DEFAULT_BATCH_SIZE
from unishap.subsets import Subset, SubsetBatch

log = structlog.get_logger(__name__)

FloatArray = npt.NDArray[np.float64]
Model = Callable[[FloatArray], npt.ArrayLike]

TABULAR_MAX_D = 25


class Game(ABC):
    concurrent: ClassVar[bool] = True
    name: ClassVar[str] = "game"

    def __init__(self, d: int, *, batch_size: int = DEFAULT_BATCH_SIZE) -> None:
        if d < 2:
            raise ConfigError(f"a game needs at least two players, got d={d}", d=d)
        if batch_size < 1:
            raise ConfigError("batch size must be at least 1", batch_size=batch_size)
        self.d = d
        self.batch_size = batch_size
        self._evaluations = 0
        self._count_lock = threading.Lock()
        self._call_lock = threading.Lock()
        endpoints = self.evaluate_batch([Subset.empty(d), Subset.full(d)])
        self.v_empty = float(endpoints[0])
        self.v_full = float(endpoints[1])

    @abstractmethod
    def _evaluate(self, batch: SubsetBatch) -> npt.ArrayLike:
        """Values of one chunk, in order."""

    def evaluate_batch(self, subsets: SubsetBatch | Sequence[Subset]) -> FloatArray:
        batch = (
            subsets
            if isinstance(subsets, SubsetBatch)
            else SubsetBatch.from_subsets(subsets, self.d)
        )
        if batch.d != self.d:
            raise DimensionMismatchError(
                f"batch has d={batch.d}, game has d={self.d}", expected=self.d, actual=batch.d
            )
        if len(batch) == 0:
            return np.zeros(0)

        parts: list[FloatArray] = []
        for start in range(0, len(batch), self.batch_size):
            chunk = batch.slice(start, start + self.batch_size)
            if self.concurrent:
                raw = self._evaluate(chunk)
            else:
                with self._call_lock:
                    raw = self._evaluate(chunk)
            values = np.asarray(raw, dtype=np.float64).reshape(-1)
            if values.shape[0] != len(chunk):
                raise GameError(
                    f"game returned {values.shape[0]} values for {len(chunk)} subsets",
                    expected=len(chunk),
                    actual=int(values.shape[0]),
                )
            bad = np.flatnonzero(~np.isfinite(values))
            if bad.size:
                raise GameEvaluationError("game returned a non-finite value", subset=chunk[bad[0]])
            parts.append(values)

        with self._count_lock:
            self._evaluations += len(batch)
        return np.concatenate(parts)

    @property
    def evaluations(self) -> int:
        return self._evaluations

    @property
    def total(self) -> float:
        """v([d]) - v(empty), the amount the Shapley values distribute."""
        return self.v_full - self.v_empty

    @property
    def alpha(self) -> float:
        return self.total / self.d

    def analytic_shapley(self) -> FloatArray | None:
        return None

    def describe(self) -> dict[str, Any]:
        return {"game": self.name, "d": self.d}

    def close(self) -> None:
        """Release external resources. Built-in games hold none."""


class MaskedGame(Game):
    """v(S) = model(x) with x_j = query_j for j in S and baseline_j otherwise.

    ``model`` maps an (n, d) array to n values.
    """

    name = "masked"

    def __init__(
        self,
        model: Model,
        query: npt.ArrayLike,
        baseline: npt.ArrayLike,
        *,
        batch_size: int = DEFAULT_BATCH_SIZE,
    ) -> None:
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        b = np.asarray(baseline, dtype=np.float64).reshape(-1)
        if q.shape != b.shape:
            raise DimensionMismatchError(
                f"query has length {q.size}, baseline has length {b.size}",
                expected=q.size,
                actual=b.size,
            )
        self.model = model
        self.query = q
        self.baseline = b
        super().__init__(q.size, batch_size=batch_size)

    def _evaluate(self, batch: SubsetBatch) -> npt.ArrayLike:
        inputs = np.where(batch.membership(), self.query, self.baseline)
        try:
            return self.model(inputs)
        except Exception as exc:
            raise self._locate_failure(batch, inputs, exc) from exc

    def _locate_failure(
        self, batch: SubsetBatch, inputs: FloatArray, exc: Exception
    ) -> GameEvaluationError:
        for row in range(len(batch)):
            try:
                self.model(inputs[row : row + 1])
            except Exception:
                return GameEvaluationError(
                    f"model evaluation failed: {exc}", subset=batch[row], cause=type(exc).__name__
                )
        return GameEvaluationError(
            f"model evaluation failed on the batch but on no single row: {exc}",
            cause=type(exc).__name__,
        )


def masked_game(
    model: Callable[..., Any],
    query: npt.ArrayLike,
    baseline: npt.ArrayLike,
    *,
    vectorized: bool = True,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> MaskedGame:
    """Masked-input game. With ``vectorized=False`` the model takes one d-vector."""
    if vectorized:
        return MaskedGame(model, query, baseline, batch_size=batch_size)

    def rowwise(inputs: FloatArray) -> FloatArray:
        return np.array([float(model(row)) for row in inputs], dtype=np.float64)

    return MaskedGame(rowwise, query, baseline, batch_size=batch_size)


class AdversarialGame(MaskedGame):
    """f(x) = g(sum_i [x_i > eps0]) explained at query 1 against baseline 0.

    v(S) = g(|S|) with g(x) = xi (x/d)^2 + chi x on [1, n] and [d-n, d-1],
    chi x elsewhere. Every player receives chi.
    """

    name = "adversarial"

    def __init__(
        self,
        d: int,
        n: int,
        xi: float,
        chi: float,
        eps0: float = 0.5,
        *,
        batch_size: int = DEFAULT_BATCH_SIZE,
    ) -> None:
        if not 1 <= n < d / 2:
            raise ConfigError(f"plateau width must satisfy 1 <= n < d/2, got n={n}, d={d}", n=n)
        if not 0.0 < eps0 < 1.0:
            raise ConfigError(f"eps0 must lie in (0, 1), got {eps0}", eps0=eps0)
        self.n = n
        self.xi = float(xi)
        self.chi = float(chi)
        self.eps0 = float(eps0)
        self._d = d
        super().__init__(self._model, np.ones(d), np.zeros(d), batch_size=batch_size)

    def g(self, x: npt.ArrayLike) -> FloatArray:
        sizes = np.asarray(x, dtype=np.float64)
        d = self._d
        plateau = ((sizes >= 1) & (sizes <= self.n)) | ((sizes >= d - self.n) & (sizes <= d - 1))
        return np.where(plateau, self.xi * (sizes / d) ** 2, 0.0) + self.chi * sizes

    def _model(self, inputs: FloatArray) -> FloatArray:
        return self.g(np.sum(inputs > self.eps0, axis=1))

    def analytic_shapley(self) -> FloatArray:
        return np.full(self.d, self.chi)

    def describe(self) -> dict[str, Any]:
        return {
            "game": self.name,
            "d": self.d,
            "n": self.n,
            "xi": self.xi,
            "chi": self.chi,
            "eps0": self.eps0,
        }


def adversarial_game(
    d: int,
    n: int,
    xi: float,
    chi: float,
    eps0: float = 0.5,
    *,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> AdversarialGame:
    return AdversarialGame(d, n, xi, chi, eps0, batch_size=batch_size)


class TabularGame(Game):
    """v(S) = table[mask(S)] for d <= 25."""

    name = "table"

    def __init__(
        self, d: int, table: npt.ArrayLike, *, batch_size: int = DEFAULT_BATCH_SIZE
    ) -> None:
        if d > TABULAR_MAX_D:
            raise ConfigError(f"tabular games support d <= {TABULAR_MAX_D}, got {d}", d=d)
        values = np.asarray(table, dtype=np.float64).reshape(-1)
        if values.size != 2**d:
            raise ConfigError(
                f"table for d={d} needs {2**d} entries, got {values.size}", d=d, entries=values.size
            )
        if not np.all(np.isfinite(values)):
            raise ConfigError("table contains non-finite values", d=d)
        self.table = values
        super().__init__(d, batch_size=batch_size)

    def _evaluate(self, batch: SubsetBatch) -> FloatArray:
        return self.table[batch.masks()]

    @classmethod
    def from_csv(cls, path: str | Path, *, batch_size: int = DEFAULT_BATCH_SIZE) -> TabularGame:
        source = Path(path)
        if not source.is_file():
            raise ConfigError(f"game table not found: {source}", path=str(source))
        frame = pd.read_csv(source, float_precision="round_trip")
        if list(frame.columns) != ["mask", "value"]:
            raise ConfigError(
                "game table must have header 'mask,value', got "
                f"{','.join(map(str, frame.columns))}",
                path=str(source),
            )
        entries = len(frame)
        d = int(round(math.log2(entries))) if entries > 0 else 0
        if entries == 0 or 2**d != entries:
            raise ConfigError(
                f"game table has {entries} rows, which is not a power of two", path=str(source)
            )
        if not pd.api.types.is_integer_dtype(frame["mask"]):
            raise ConfigError(
                f"game table masks must be integers, got dtype {frame['mask'].dtype}",
                path=str(source),
            )
        if not pd.api.types.is_numeric_dtype(frame["value"]):
            raise ConfigError("game table values must be numbers", path=str(source))
        masks = frame["mask"].to_numpy(dtype=np.int64)
        if masks.min() < 0 or masks.max() >= entries or np.unique(masks).size != entries:
            missing = np.setdiff1d(np.arange(entries), masks)
            raise ConfigError(
                f"game table is missing {missing.size} masks or has duplicates",
                path=str(source),
                first_missing=int(missing[0]) if missing.size else None,
            )
        table = np.empty(entries)
        table[masks] = frame["value"].to_numpy(dtype=np.float64)
        return cls(d, table, batch_size=batch_size)

    def to_csv(self, path: str | Path) -> None:
        frame = pd.DataFrame({"mask": np.arange(2**self.d), "value": self.table})
        frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


def tabular_game(
    d: int, table: npt.ArrayLike, *, batch_size: int = DEFAULT_BATCH_SIZE
) -> TabularGame:
    return TabularGame(d, table, batch_size=batch_size)


def random_tabular_game(
    d: int, rng: np.random.Generator, *, batch_size: int = DEFAULT_BATCH_SIZE
) -> TabularGame:
    """Values i.i.d. uniform on [-1, 1], including v(empty)."""
    return TabularGame(d, rng.uniform(-1.0, 1.0, size=2**d), batch_size=batch_size)


class AdditiveGame(Game):
    """v(S) = sum_{i in S} w_i; the Shapley values are the weights."""

    name = "additive"

    def __init__(self, weights: npt.ArrayLike, *, batch_size: int = DEFAULT_BATCH_SIZE) -> None:
        self.weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        super().__init__(self.weights.size, batch_size=batch_size)

    def _evaluate(self, batch: SubsetBatch) -> FloatArray:
        return np.asarray(batch.membership() @ self.weights)

    def analytic_shapley(self) -> FloatArray:
        return self.weights.copy()

    def describe(self) -> dict[str, Any]:
        return {"game": self.name, "d": self.d, "weights": self.weights.tolist()}


def additive_game(weights: npt.ArrayLike, *, batch_size: int = DEFAULT_BATCH_SIZE) -> AdditiveGame:
    return AdditiveGame(weights, batch_size=batch_size)


class GloveGame(Game):
    """The last player holds the only right glove; everyone else holds a left one.

    v(S) = 1 iff S contains the last player and at least one other.
    """

    name = "glove"

    def _evaluate(self, batch: SubsetBatch) -> FloatArray:
        member = batch.membership()
        return (member[:, -1] & member[:, :-1].any(axis=1)).astype(np.float64)


def glove_game(d: int = 3, *, batch_size: int = DEFAULT_BATCH_SIZE) -> GloveGame:
    return GloveGame(d, batch_size=batch_size)


class MajorityGame(Game):
    """v(S) = 1 iff |S| >= quota."""

    name = "majority"

    def __init__(
        self, d: int, quota: int | None = None, *, batch_size: int = DEFAULT_BATCH_SIZE
    ) -> None:
        self.quota = math.ceil((d + 1) / 2) if quota is None else quota
        if not 1 <= self.quota <= d:
            raise ConfigError(f"quota must lie in [1, {d}], got {self.quota}", quota=self.quota)
        super().__init__(d, batch_size=batch_size)

    def _evaluate(self, batch: SubsetBatch) -> FloatArray:
        return (batch.sizes() >= self.quota).astype(np.float64)

    def analytic_shapley(self) -> FloatArray:
        return np.full(self.d, self.total / self.d)

    def describe(self) -> dict[str, Any]:
        return {"game": self.name, "d": self.d, "quota": self.quota}


def majority_game(
    d: int = 3, quota: int | None = None, *, batch_size: int = DEFAULT_BATCH_SIZE
) -> MajorityGame:
    return MajorityGame(d, quota, batch_size=batch_size)


def permuted_game(game: TabularGame, permutation: npt.ArrayLike) -> TabularGame:
    """Relabel players: player j of the result plays the role of permutation[j]."""
    perm = np.asarray(permutation, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(game.d)):
        raise ConfigError("not a permutation of the players", d=game.d)
    masks = np.arange(2**game.d, dtype=np.int64)
    source = np.zeros_like(masks)
    for j, target in enumerate(perm):
        source |= ((masks >> j) & 1) << target
    return TabularGame(game.d, game.table[source], batch_size=game.batch_size)
