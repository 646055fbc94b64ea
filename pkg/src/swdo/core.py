"""Search-space machinery shared by every optimizer.

Positions are plain numpy arrays; a population is an ``(n, dims)`` array.
Fitness is always minimized.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]

# Magnitude cap for intermediate quantities inside update rules.
GUARD_LIMIT = 1e12


class ContractError(ValueError):
    """An operation was called outside its precondition."""


class ConfigurationError(ValueError):
    """Invalid optimizer or budget configuration."""


@dataclass(frozen=True)
class SearchSpace:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.shape != upper.shape or lower.ndim != 1 or lower.size == 0:
            raise ContractError("lower and upper must be equal-length 1-D arrays")
        if not np.all(lower < upper):
            raise ContractError("every lower bound must be strictly below its upper bound")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def box(cls, dims: int, low: float, high: float) -> "SearchSpace":
        return cls(np.full(dims, float(low)), np.full(dims, float(high)))

    @property
    def dims(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class Budget:
    population_size: int
    max_iterations: int

    def __post_init__(self):
        if int(self.population_size) < 2:
            raise ConfigurationError("population_size must be at least 2")
        if int(self.max_iterations) < 1:
            raise ConfigurationError("max_iterations must be at least 1")


@dataclass(frozen=True)
class Agent:
    """One search agent. ``fitness`` is None until evaluated."""

    position: np.ndarray
    fitness: float | None = None

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None


@dataclass(frozen=True)
class RngStream:
    """Independent random stream derived from ``(master_seed, stream_id)``.

    The derivation goes through :class:`numpy.random.SeedSequence`, whose
    spawn keys hash into statistically independent PCG64 states.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.master_seed) & 0xFFFFFFFFFFFFFFFF,
                                     spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(seq))


def iteration_stream(seed: int, iteration: int) -> np.random.Generator:
    """Generator for one iteration's sequential update phase."""
    return RngStream(seed, iteration).generator()


class ScriptedDraws:
    """Stand-in generator that replays fixed uniform draws, cycling when exhausted.

    Lets closed-form checks pin the random numbers an update consumes.
    """

    def __init__(self, values):
        self.values = [float(v) for v in np.ravel(values)]
        if not self.values:
            raise ValueError("need at least one scripted value")
        self._i = 0

    def _take(self, size):
        n = 1 if size is None else int(np.prod(size))
        out = np.array([self.values[(self._i + j) % len(self.values)] for j in range(n)])
        self._i += n
        return float(out[0]) if size is None else out.reshape(size)

    def random(self, size=None):
        return self._take(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return low + (high - low) * self._take(size)

    def integers(self, low, high=None, size=None):
        if high is None:
            low, high = 0, low
        u = self._take(size)
        return (low + np.floor(np.asarray(u) * (high - low))).astype(int) if size is not None \
            else int(low + math.floor(u * (high - low)))


@dataclass
class HistoryRecord:
    best: float
    mean: float


@dataclass
class OptResult:
    best_position: np.ndarray
    best_fitness: float
    history: list[HistoryRecord]
    evaluations: int
    seed: int
    algorithm: str = ""
    nonfinite_evaluations: int = 0
    guard_clamps: int = 0
    extra_evaluations: int = 0

    def history_array(self) -> np.ndarray:
        return np.array([[h.best, h.mean] for h in self.history], dtype=float)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "best_position": [float(v) for v in self.best_position],
            "best_fitness": float(self.best_fitness),
            "evaluations": self.evaluations,
            "extra_evaluations": self.extra_evaluations,
            "nonfinite_evaluations": self.nonfinite_evaluations,
            "guard_clamps": self.guard_clamps,
            "seed": self.seed,
            "history": [[h.best, h.mean] for h in self.history],
        }


def clamp_to_bounds(p: np.ndarray, s: SearchSpace) -> np.ndarray:
    """Project ``p`` (a position or a stack of positions) onto the box."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != s.dims:
        raise ContractError(f"position has {p.shape[-1]} dims, space has {s.dims}")
    return np.clip(p, s.lower, s.upper)


def init_population(s: SearchSpace, b: Budget, rng: RngStream | np.random.Generator) -> list[Agent]:
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    X = uniform_positions(s, b.population_size, gen)
    return [Agent(x) for x in X]


def uniform_positions(s: SearchSpace, n: int, gen: np.random.Generator) -> np.ndarray:
    X = s.lower + gen.random((n, s.dims)) * s.width
    # lower + u*width can round past upper for tiny boxes
    return np.clip(X, s.lower, s.upper)


class GuardCounter:
    """Clips runaway intermediates and counts how often it had to."""

    def __init__(self, limit: float = GUARD_LIMIT):
        self.limit = limit
        self.count = 0

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        bad = ~np.isfinite(values) | (np.abs(values) > self.limit)
        n_bad = int(np.count_nonzero(bad))
        if n_bad:
            self.count += n_bad
            values = np.nan_to_num(values, nan=0.0, posinf=self.limit, neginf=-self.limit)
            values = np.clip(values, -self.limit, self.limit)
        return values


def _safe_call(objective: Objective, x: np.ndarray) -> float:
    try:
        return float(objective(x))
    except (ArithmeticError, ValueError) as exc:
        logger.warning("objective raised %r; recording +inf", exc)
        return math.inf


def evaluate_positions(X: np.ndarray, objective, workers: int = 1) -> tuple[np.ndarray, int]:
    """Evaluate every row of ``X``; returns ``(fitness, n_nonfinite)``.

    ``objective`` is either a callable on a single position or an object with
    an ``evaluate_batch(X)`` method. Non-finite results become ``+inf``.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        return np.empty(0), 0
    batch = getattr(objective, "evaluate_batch", None)
    if batch is not None:
        f = np.asarray(batch(X, workers=workers), dtype=float)
    elif workers > 1:
        rows = [X[i].copy() for i in range(X.shape[0])]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            f = np.array(list(pool.map(lambda r: _safe_call(objective, r), rows)), dtype=float)
    else:
        f = np.array([_safe_call(objective, X[i].copy()) for i in range(X.shape[0])], dtype=float)
    bad = ~np.isfinite(f)
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        logger.warning("%d non-finite fitness value(s) mapped to +inf", n_bad)
        f[bad] = math.inf
    return f, n_bad


def evaluate_population(agents: Sequence[Agent], objective, workers: int = 1) -> tuple[list[Agent], int]:
    """Evaluate agents in order; returns the evaluated agents and the non-finite count."""
    if not agents:
        return [], 0
    X = np.stack([a.position for a in agents])
    f, n_bad = evaluate_positions(X, objective, workers)
    return [Agent(a.position, float(v)) for a, v in zip(agents, f)], n_bad


# --- benchmark objectives -------------------------------------------------

def sphere(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(x * x))


def rastrigin(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(10.0 * x.size + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x)))


def rosenbrock(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ContractError("rosenbrock needs at least 2 dimensions")
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def ackley(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    n = x.size
    s1 = np.sum(x * x) / n
    s2 = np.sum(np.cos(2.0 * np.pi * x)) / n
    return float(-20.0 * np.exp(-0.2 * np.sqrt(s1)) - np.exp(s2) + 20.0 + np.e)


@dataclass(frozen=True)
class BenchmarkInfo:
    func: Objective
    default_bounds: tuple[float, float]
    optimum: Callable[[int], np.ndarray] = field(default=lambda d: np.zeros(d))


BENCHMARKS: dict[str, BenchmarkInfo] = {
    "sphere": BenchmarkInfo(sphere, (-100.0, 100.0)),
    "rastrigin": BenchmarkInfo(rastrigin, (-5.12, 5.12)),
    "rosenbrock": BenchmarkInfo(rosenbrock, (-30.0, 30.0), lambda d: np.ones(d)),
    "ackley": BenchmarkInfo(ackley, (-32.768, 32.768)),
}


def benchmark(name: str, x: np.ndarray) -> float:
    try:
        info = BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
    return info.func(x)


def benchmark_space(name: str, dims: int) -> SearchSpace:
    lo, hi = BENCHMARKS[name].default_bounds
    return SearchSpace.box(dims, lo, hi)
