"""Text forms for games and experiments.

Game specs (one string, as passed to ``--game`` or the ``game`` key):

    adversarial:d=64,n=2,xi=1,chi=0[,eps0=0.5]
    random:d=12,seed=3
    additive:w=1;2;3
    glove:d=3
    majority:d=5[,quota=3]
    table:<path to mask,value CSV>
    external:d=16:<command line>

Experiment spec files are flat ``key = value`` lines. Repeating a key makes a
list, ``#`` starts a comment, and ``seeds`` also accepts an inclusive range
``a..b``. Every combination of the listed estimator settings becomes one grid
point; each grid point runs once per seed.
"""
from __future__ import annotations

import itertools
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from unishap.errors import ConfigError
from unishap.estimators import (
    DEFAULT_M,
    EstimatorConfig,
    EstimatorKind,
    LambdaMode,
    preset,
)
from unishap.external import ExternalGame
from unishap.games import (
    AdditiveGame,
    AdversarialGame,
    Game,
    GloveGame,
    MajorityGame,
    TabularGame,
    random_tabular_game,
)
from unishap.sampling import Strategy
from unishap.seeding import game_generator
from unishap.settings import Settings

METRICS = ("mse", "insertion_auc", "deletion_auc", "rank_corr", "theory_report")
# Metrics that compare against the exact attribution vector.
EXACT_METRICS = frozenset({"mse", "rank_corr"})

_GAME_KINDS = ("adversarial", "random", "additive", "glove", "majority", "table", "external")


# ---------------------------------------------------------------------------
# Games
# ---------------------------------------------------------------------------


def _params(text: str, spec: str) -> dict[str, str]:
    params: dict[str, str] = {}
    if not text.strip():
        return params
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"expected key=value in game spec, got {item!r}", game=spec)
        params[key.strip()] = value.strip()
    return params


_MISSING: Any = object()


def _take(
    params: dict[str, str],
    key: str,
    kind: type[int] | type[float],
    spec: str,
    default: Any = _MISSING,
) -> Any:
    if key not in params:
        if default is _MISSING:
            raise ConfigError(f"game spec is missing '{key}'", game=spec)
        return default
    raw = params.pop(key)
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"'{key}' must be a {kind.__name__}, got {raw!r}", game=spec) from exc


def _no_leftovers(params: Mapping[str, str], spec: str) -> None:
    if params:
        raise ConfigError(f"unknown game parameters: {', '.join(sorted(params))}", game=spec)


def parse_game_spec(text: str, settings: Settings | None = None) -> Game:
    """Build the game a spec string describes."""
    cfg = settings or Settings()
    kind, _, rest = text.strip().partition(":")
    kind = kind.strip().lower()
    batch_size = cfg.batch_size

    if kind == "table":
        if not rest.strip():
            raise ConfigError("table game needs a path", game=text)
        return TabularGame.from_csv(Path(rest.strip()), batch_size=batch_size)

    if kind == "external":
        head, sep, command = rest.partition(":")
        params = _params(head, text)
        d = _take(params, "d", int, text)
        _no_leftovers(params, text)
        if not sep or not command.strip():
            raise ConfigError("external game needs a command after 'd=<int>:'", game=text)
        return ExternalGame(command, d, batch_size=batch_size, timeout=cfg.external_timeout)

    params = _params(rest, text)
    game: Game
    if kind == "adversarial":
        game = AdversarialGame(
            _take(params, "d", int, text),
            _take(params, "n", int, text),
            _take(params, "xi", float, text),
            _take(params, "chi", float, text),
            _take(params, "eps0", float, text, 0.5),
            batch_size=batch_size,
        )
    elif kind == "random":
        d = _take(params, "d", int, text)
        seed = _take(params, "seed", int, text, 0)
        game = random_tabular_game(d, game_generator(seed), batch_size=batch_size)
    elif kind == "additive":
        raw = params.pop("w", "")
        try:
            weights = [float(w) for w in raw.split(";") if w.strip()]
        except ValueError as exc:
            raise ConfigError(f"additive weights must be numbers, got {raw!r}", game=text) from exc
        if len(weights) < 2:
            raise ConfigError("additive game needs at least two weights, e.g. w=1;2", game=text)
        game = AdditiveGame(weights, batch_size=batch_size)
    elif kind == "glove":
        game = GloveGame(_take(params, "d", int, text, 3), batch_size=batch_size)
    elif kind == "majority":
        d = _take(params, "d", int, text, 3)
        quota = _take(params, "quota", int, text, None)
        game = MajorityGame(d, quota, batch_size=batch_size)
    else:
        raise ConfigError(
            f"unknown game kind {kind!r}; expected one of {', '.join(_GAME_KINDS)}", game=text
        )
    _no_leftovers(params, text)
    return game


# ---------------------------------------------------------------------------
# Experiment specs
# ---------------------------------------------------------------------------

_LIST_KEYS = frozenset(
    {"preset", "kind", "tau", "strategy", "paired", "lambda", "m", "seed", "seeds", "metrics"}
)
_SCALAR_KEYS = frozenset(
    {"game", "eps", "delta", "top_k", "maxval", "batch_size", "threads", "out"}
)


@dataclass(frozen=True)
class ExperimentSpec:
    game: str
    configs: tuple[EstimatorConfig, ...]
    seeds: tuple[int, ...]
    metrics: tuple[str, ...] = ("mse",)
    out: Path = Path("results")
    eps: float = 0.1
    delta: float = 0.1
    top_k: int | None = None
    batch_size: int | None = None
    threads: int | None = None
    source: Path | None = field(default=None, compare=False)

    @property
    def needs_exact(self) -> bool:
        return any(metric in EXACT_METRICS for metric in self.metrics)


def read_spec_lines(text: str, source: str = "<spec>") -> dict[str, list[str]]:
    """``key = value`` lines into key -> values in file order."""
    entries: dict[str, list[str]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lower().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"{source}:{number}: expected 'key = value'", line=number)
        if key not in _LIST_KEYS and key not in _SCALAR_KEYS:
            raise ConfigError(f"{source}:{number}: unknown key {key!r}", line=number, key=key)
        if key in _SCALAR_KEYS and key in entries:
            raise ConfigError(f"{source}:{number}: {key!r} may appear only once", line=number)
        entries.setdefault(key, []).append(value.strip())
    return entries


def parse_seeds(values: Sequence[str]) -> tuple[int, ...]:
    seeds: list[int] = []
    for value in values:
        lo, sep, hi = value.partition("..")
        try:
            if sep:
                start, stop = int(lo), int(hi)
                if stop < start:
                    raise ConfigError(f"empty seed range {value!r}", seeds=value)
                seeds.extend(range(start, stop + 1))
            else:
                seeds.append(int(value))
        except ValueError as exc:
            raise ConfigError(f"seeds must be integers or a..b ranges, got {value!r}") from exc
    if any(seed < 0 for seed in seeds):
        raise ConfigError("seeds must be non-negative", seeds=seeds)
    return tuple(seeds)


def _parse_bool(value: str) -> bool:
    key = value.strip().lower()
    if key in {"true", "yes", "1", "on"}:
        return True
    if key in {"false", "no", "0", "off"}:
        return False
    raise ConfigError(f"expected a boolean, got {value!r}", value=value)


def _floats(values: Sequence[str], key: str) -> list[float]:
    try:
        return [float(v) for v in values]
    except ValueError as exc:
        raise ConfigError(f"'{key}' values must be numbers, got {list(values)}", key=key) from exc


def _ints(values: Sequence[str], key: str) -> list[int]:
    try:
        return [int(v) for v in values]
    except ValueError as exc:
        raise ConfigError(f"'{key}' values must be integers, got {list(values)}", key=key) from exc


def expand_grid(entries: Mapping[str, Sequence[str]], maxval: float) -> tuple[EstimatorConfig, ...]:
    """Presets first (each at every m), then the product of the explicit settings."""
    budgets = _ints(entries.get("m", [str(DEFAULT_M)]), "m")
    configs: list[EstimatorConfig] = []
    for name in entries.get("preset", []):
        for m in budgets:
            configs.append(preset(name, m=m, maxval=maxval))

    explicit = {"kind", "tau", "strategy", "paired", "lambda"} & set(entries)
    if explicit or not configs:
        kinds = [EstimatorKind.parse(v) for v in entries.get("kind", ["regression"])]
        taus = _floats(entries.get("tau", ["0"]), "tau")
        strategies = [Strategy.parse(v) for v in entries.get("strategy", ["with"])]
        paired = [_parse_bool(v) for v in entries.get("paired", ["true"])]
        lambdas = [LambdaMode.parse(v) for v in entries.get("lambda", ["alpha"])]
        for kind, tau, strategy, pair, lam, m in itertools.product(
            kinds, taus, strategies, paired, lambdas, budgets
        ):
            configs.append(EstimatorConfig(kind, tau, strategy, pair, lam, m=m, maxval=maxval))
    return tuple(configs)


def parse_experiment_spec(
    text: str, source: str = "<spec>", settings: Settings | None = None
) -> ExperimentSpec:
    """Without a ``maxval`` key the grid takes it from ``settings``, else the environment."""
    entries = read_spec_lines(text, source)
    if "game" not in entries:
        raise ConfigError(f"{source}: spec must name a game", source=source)

    seed_values = entries.get("seeds", []) + entries.get("seed", [])
    seeds = parse_seeds(seed_values) if seed_values else (0,)
    metrics = tuple(
        metric.strip().lower()
        for value in entries.get("metrics", ["mse"])
        for metric in value.split(",")
        if metric.strip()
    )
    unknown = sorted(set(metrics) - set(METRICS))
    if unknown:
        raise ConfigError(
            f"unknown metrics {unknown}; expected a subset of {', '.join(METRICS)}", metrics=unknown
        )

    def number(key: str, kind: type[int] | type[float]) -> Any:
        values = entries.get(key)
        if not values:
            return None
        return (_ints if kind is int else _floats)(values, key)[0]

    maxval = number("maxval", float)
    if maxval is None:
        maxval = (settings or Settings.from_env()).maxval
    eps = number("eps", float)
    delta = number("delta", float)
    out = entries.get("out", ["results"])[0]
    return ExperimentSpec(
        game=entries["game"][0],
        configs=expand_grid(entries, maxval),
        seeds=seeds,
        metrics=metrics,
        out=Path(out),
        eps=0.1 if eps is None else eps,
        delta=0.1 if delta is None else delta,
        top_k=number("top_k", int),
        batch_size=number("batch_size", int),
        threads=number("threads", int),
    )


def load_experiment_spec(path: str | Path, settings: Settings | None = None) -> ExperimentSpec:
    source = Path(path)
    if not source.is_file():
        raise ConfigError(f"spec file not found: {source}", path=str(source))
    spec = parse_experiment_spec(source.read_text(), str(source), settings)
    return replace(spec, source=source)
