"""Modified gorilla troops optimizer.

The gorilla troop skeleton (migration, following the silverback, competing
for females) extended with elite opposition-based learning inside dynamic
population bounds and Cauchy-distributed tangent steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import Budget, ContractError, OptResult, RngStream, SearchSpace, clamp_to_bounds, \
    iteration_stream, uniform_positions
from ._tracking import RunTracker


@dataclass(frozen=True)
class MgtoParams:
    pp: float = 0.03
    W: float = 0.8
    cauchy_location: float = 0.0
    cauchy_scale: float = 1.0
    tan_clamp: float = 1e3

    def __post_init__(self):
        if not (0 <= self.pp <= 1 and 0 <= self.W <= 1):
            raise ContractError("pp and W must lie in [0, 1]")
        if self.cauchy_scale <= 0 or self.tan_clamp <= 0:
            raise ContractError("cauchy_scale and tan_clamp must be positive")


def _clamped_tan(angle, limit: float) -> np.ndarray:
    return np.clip(np.tan(angle), -limit, limit)


def cauchy_sample(a: float, b: float, rng: np.random.Generator, size=None, tan_clamp: float = 1e3):
    """Cauchy(a, b) draw through the inverse CDF, tangent magnitude capped at ``tan_clamp``."""
    if b <= 0:
        raise ContractError("Cauchy scale must be positive")
    p = rng.random(size)
    return a + b * _clamped_tan(math.pi * (p - 0.5), tan_clamp)


def troop_control(it: int, max_it: int, rng: np.random.Generator) -> tuple[float, float]:
    """``(C, L)`` for one iteration; ``l`` is an integer in {-1, 0, 1}."""
    r4 = rng.random()
    F = math.cos(2.0 * r4) + 1.0
    C = F * (1.0 - it / max_it)
    l = int(rng.integers(-1, 2))
    return C, C * l


def eobl_opposite(x, pop_min, pop_max, space: SearchSpace, rng: np.random.Generator) -> np.ndarray:
    """Opposite of ``x`` inside the population's per-dimension range.

    Coordinates that land outside ``[pop_min, pop_max]`` are redrawn
    uniformly inside it. Works on a single position or a stack.
    """
    x = np.asarray(x, dtype=float)
    pop_min = np.asarray(pop_min, dtype=float)
    pop_max = np.asarray(pop_max, dtype=float)
    if np.any(pop_min > pop_max):
        raise ContractError("pop_min must not exceed pop_max")
    F = rng.random(x.shape[:-1] + (1,))
    opp = F * (pop_min + pop_max) - x
    outside = (opp < pop_min) | (opp > pop_max)
    redraw = pop_min + rng.random(x.shape) * (pop_max - pop_min)
    opp = np.where(outside, redraw, opp)
    return clamp_to_bounds(opp, space)


def mgto_exploit(x, silverback, population, C: float, L: float, params: MgtoParams,
                 rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    silverback = np.asarray(silverback, dtype=float)
    if C >= params.W:
        # (|mean|^(2^l))^(1/2^l) is just |mean|
        M = np.abs(np.mean(np.asarray(population, dtype=float), axis=0))
        step = 0.01 * cauchy_sample(params.cauchy_location, params.cauchy_scale, rng,
                                    x.shape, params.tan_clamp)
        return x + L * M * (x - silverback) * step
    r5 = rng.random(x.shape)
    Q = 2.0 * r5 - 1.0
    v = rng.random(x.shape)
    return silverback - (silverback * Q - x * Q) * _clamped_tan(v * math.pi, params.tan_clamp)


def mgto_explore(x, random_member, C: float, L: float, space: SearchSpace, params: MgtoParams,
                 rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    xr = np.asarray(random_member, dtype=float)
    lead = x.shape[:-1] + (1,)
    r = rng.random(lead)
    r1 = rng.random(x.shape)
    r2 = rng.random(lead)
    r3 = rng.random(lead)
    Z = rng.uniform(-C, C, x.shape) if C > 0 else np.zeros(x.shape)
    H = Z * x
    migrate = space.lower + r1 * space.width
    toward_known = (r2 - C) * xr + L * H
    toward_others = x - L * (L * (x - xr) + r3 * (x - xr))
    out = np.where(r < params.pp, migrate, np.where(r >= 0.5, toward_known, toward_others))
    return clamp_to_bounds(out, space)


def mgto_optimize(objective, space: SearchSpace, params: MgtoParams | None = None,
                  budget: Budget = Budget(30, 500), seed: int = 0, workers: int = 1) -> OptResult:
    """Run MGTO. Each iteration spends one evaluation per gorilla on the
    explore-then-exploit candidate plus one per gorilla on its elite opposite;
    the latter are reported as ``extra_evaluations``."""
    params = params or MgtoParams()
    n, T = budget.population_size, budget.max_iterations
    run = RunTracker(objective, space, seed, "mgto", workers)

    X = uniform_positions(space, n, RngStream(seed, 0).generator())
    fitness = run.evaluate(X)

    for it in range(1, T + 1):
        gen = iteration_stream(seed, it)
        C, L = troop_control(it, T, gen)
        partners = gen.integers(0, n, size=n)

        GX = mgto_explore(X, X[partners], C, L, space, params, gen)
        GX = mgto_exploit(GX, run.best_position, X, C, L, params, gen)
        GX = clamp_to_bounds(run.guard(GX), space)
        f_new = run.evaluate(GX)
        better = f_new < fitness
        X = np.where(better[:, None], GX, X)
        fitness = np.where(better, f_new, fitness)

        opp = eobl_opposite(X, X.min(axis=0), X.max(axis=0), space, gen)
        f_opp = run.evaluate(opp, extra=True)
        better = f_opp < fitness
        X = np.where(better[:, None], opp, X)
        fitness = np.where(better, f_opp, fitness)

        run.record(fitness)

    return run.result()
