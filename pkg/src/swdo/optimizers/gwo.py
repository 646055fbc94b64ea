"""Grey wolf optimizer and its improved variant with exponential control schedules.

Both share the encircling update and the alpha/beta/delta leadership; they
differ only in how the control value ``a`` decays for each leader.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..core import Budget, ConfigurationError, ContractError, OptResult, RngStream, SearchSpace, \
    clamp_to_bounds, iteration_stream, uniform_positions
from ._tracking import RunTracker


@dataclass(frozen=True)
class IgwoParams:
    a_min: float = 0.02
    a_max: float = 2.2
    eta_alpha: float = 1.0
    eta_delta: float = 0.5

    def __post_init__(self):
        if not 0 < self.a_min < self.a_max:
            raise ContractError("need 0 < a_min < a_max")
        if self.eta_alpha <= 0 or self.eta_delta <= 0:
            raise ContractError("growth factors must be positive")


@dataclass
class IgwoLeaders:
    """Alpha, beta and delta, best first."""

    positions: np.ndarray  # (3, dims)
    fitness: np.ndarray  # (3,)

    @property
    def alpha(self) -> np.ndarray:
        return self.positions[0]

    @property
    def beta(self) -> np.ndarray:
        return self.positions[1]

    @property
    def delta(self) -> np.ndarray:
        return self.positions[2]


def rank_leaders(X: np.ndarray, fitness: np.ndarray, previous: IgwoLeaders | None = None) -> IgwoLeaders:
    """Three best of the population, merged with the previous leaders."""
    if previous is not None:
        X = np.vstack([previous.positions, X])
        fitness = np.concatenate([previous.fitness, fitness])
    order = np.argsort(fitness, kind="stable")[:3]
    return IgwoLeaders(X[order].copy(), fitness[order].copy())


def igwo_a_schedule(i: float, i_max: float, params: IgwoParams = IgwoParams()) -> tuple[float, float, float]:
    if not 0 <= i <= i_max:
        raise ContractError(f"iteration {i} outside [0, {i_max}]")
    log_ratio = math.log(params.a_min / params.a_max)
    frac = i / i_max
    a_alpha = params.a_max * math.exp(frac * params.eta_alpha * log_ratio)
    a_delta = params.a_max * math.exp(frac * params.eta_delta * log_ratio)
    return a_alpha, (a_alpha + a_delta) / 2.0, a_delta


def gwo_a_schedule(i: float, i_max: float) -> tuple[float, float, float]:
    if not 0 <= i <= i_max:
        raise ContractError(f"iteration {i} outside [0, {i_max}]")
    a = 2.0 * (1.0 - i / i_max)
    return a, a, a


def gwo_encircle(leader, x, a: float, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    leader = np.asarray(leader, dtype=float)
    shape = np.broadcast_shapes(leader.shape, x.shape)
    r1 = rng.random(shape)
    r2 = rng.random(shape)
    D = np.abs(2.0 * r2 * leader - x)
    A = 2.0 * a * r1 - a
    return leader - A * D


def _wolf_pack(objective, space: SearchSpace, budget: Budget, seed: int, workers: int,
               schedule: Callable[[int, int], tuple[float, float, float]], name: str) -> OptResult:
    n, T = budget.population_size, budget.max_iterations
    if n < 3:
        raise ConfigurationError(f"{name} needs population_size >= 3 for alpha, beta and delta")
    run = RunTracker(objective, space, seed, name, workers)

    X = uniform_positions(space, n, RngStream(seed, 0).generator())
    fitness = run.evaluate(X)
    leaders = rank_leaders(X, fitness)

    for i in range(1, T + 1):
        gen = iteration_stream(seed, i)
        a_alpha, a_beta, a_delta = schedule(i, T)
        x1 = gwo_encircle(leaders.alpha, X, a_alpha, gen)
        x2 = gwo_encircle(leaders.beta, X, a_beta, gen)
        x3 = gwo_encircle(leaders.delta, X, a_delta, gen)
        X = clamp_to_bounds(run.guard((x1 + x2 + x3) / 3.0), space)
        fitness = run.evaluate(X)
        leaders = rank_leaders(X, fitness, leaders)
        run.record(fitness)

    return run.result()


def igwo_optimize(objective, space: SearchSpace, params: IgwoParams | None = None,
                  budget: Budget = Budget(30, 500), seed: int = 0, workers: int = 1) -> OptResult:
    params = params or IgwoParams()
    return _wolf_pack(objective, space, budget, seed, workers,
                      lambda i, T: igwo_a_schedule(i, T, params), "igwo")


def gwo_optimize(objective, space: SearchSpace, budget: Budget = Budget(30, 500),
                 seed: int = 0, workers: int = 1) -> OptResult:
    return _wolf_pack(objective, space, budget, seed, workers, gwo_a_schedule, "gwo")
