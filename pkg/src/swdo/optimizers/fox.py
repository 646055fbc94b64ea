"""FOX optimizer: a red fox hunting model.

Exploitation estimates the distance to prey from the travel time of sound and
jumps onto it; exploration is a random walk scaled by the best position, the
shortest sound time in the pack and a decaying control value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Budget, ContractError, OptResult, RngStream, SearchSpace, clamp_to_bounds, \
    iteration_stream, uniform_positions
from ._tracking import RunTracker

GRAVITY = 9.81


@dataclass(frozen=True)
class FoxParams:
    c1: float = 0.18
    c2: float = 0.82
    direction_threshold: float = 0.18
    phase_threshold: float = 0.5

    def __post_init__(self):
        for name in ("c1", "c2", "direction_threshold", "phase_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name}={v} outside [0, 1]")


@dataclass
class FoxScratch:
    time_matrix: np.ndarray
    tt: np.ndarray
    min_t: float
    a: float


def fox_sound_distance(best, time_row):
    """Returns ``(sp_s, dist_s_t, dist_fox_prey)``, evaluated exactly as the model states them."""
    best = np.asarray(best, dtype=float)
    time_row = np.asarray(time_row, dtype=float)
    if time_row.shape[-1] != best.shape[-1]:
        raise ContractError("best and time_row lengths differ")
    if np.any(time_row <= 0):
        raise ContractError("sound travel times must be strictly positive")
    sp_s = best / time_row
    dist_s_t = sp_s * time_row
    dist_fox_prey = dist_s_t * 0.5
    return sp_s, dist_s_t, dist_fox_prey


def fox_jump(time_row) -> float | np.ndarray:
    time_row = np.asarray(time_row, dtype=float)
    if time_row.size == 0 or time_row.shape[-1] == 0:
        raise ContractError("time_row must be nonempty")
    tt = time_row.mean(axis=-1)
    t = tt / 2.0
    return 0.5 * GRAVITY * t * t


def fox_exploit_position(dist_fox_prey, jump, coeff):
    jump = np.asarray(jump, dtype=float)
    if np.any(jump < 0):
        raise ContractError("jump must be non-negative")
    return np.asarray(dist_fox_prey, dtype=float) * jump * coeff


def fox_exploration_control(it: int, max_it: int) -> float:
    # Decreasing schedule; see README for why the printed form is not used.
    if not 1 <= it <= max_it:
        raise ContractError(f"iteration {it} outside [1, {max_it}]")
    return 2.0 * (1.0 - it / max_it)


def fox_explore_position(best, min_t: float, a: float, rng: np.random.Generator):
    if min_t < 0:
        raise ContractError("min_t must be non-negative")
    best = np.asarray(best, dtype=float)
    u = rng.random(best.shape)
    return best * u * min_t * a


def fox_scratch(time_matrix: np.ndarray, it: int, max_it: int) -> FoxScratch:
    tt = time_matrix.mean(axis=1)
    return FoxScratch(time_matrix, tt, float(tt.min()), fox_exploration_control(it, max_it))


def fox_optimize(objective, space: SearchSpace, params: FoxParams | None = None,
                 budget: Budget = Budget(30, 500), seed: int = 0, workers: int = 1) -> OptResult:
    params = params or FoxParams()
    n, d, T = budget.population_size, space.dims, budget.max_iterations
    run = RunTracker(objective, space, seed, "fox", workers)

    X = uniform_positions(space, n, RngStream(seed, 0).generator())
    fitness = run.evaluate(X)

    for it in range(1, T + 1):
        gen = iteration_stream(seed, it)
        # (0, 1]: times divide the best position
        scratch = fox_scratch(1.0 - gen.random((n, d)), it, T)
        r = gen.random(n)
        p = gen.random(n)
        best = run.best_position

        exploit = r >= params.phase_threshold
        coeff = np.where(p > params.direction_threshold, params.c1, params.c2)[:, None]
        _, _, dist = fox_sound_distance(best, scratch.time_matrix)
        jump = fox_jump(scratch.time_matrix)[:, None]
        X_exploit = fox_exploit_position(dist, jump, coeff)
        X_explore = fox_explore_position(np.broadcast_to(best, (n, d)), scratch.min_t, scratch.a, gen)

        X = np.where(exploit[:, None], X_exploit, X_explore)
        X = clamp_to_bounds(run.guard(X), space)
        fitness = run.evaluate(X)
        run.record(fitness)

    return run.result()
