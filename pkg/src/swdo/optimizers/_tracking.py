from __future__ import annotations

import math

import numpy as np

from ..core import GuardCounter, HistoryRecord, OptResult, SearchSpace, evaluate_positions


class RunTracker:
    """Best-so-far, history and evaluation bookkeeping for one optimizer run."""

    def __init__(self, objective, space: SearchSpace, seed: int, algorithm: str, workers: int = 1):
        self.objective = objective
        self.space = space
        self.seed = int(seed)
        self.algorithm = algorithm
        self.workers = workers
        self.evaluations = 0
        self.extra_evaluations = 0
        self.nonfinite = 0
        self.guard = GuardCounter()
        self.best_fitness = math.inf
        self.best_position = None
        self.history: list[HistoryRecord] = []

    def evaluate(self, X: np.ndarray, extra: bool = False) -> np.ndarray:
        f, n_bad = evaluate_positions(X, self.objective, self.workers)
        self.evaluations += len(f)
        if extra:
            self.extra_evaluations += len(f)
        self.nonfinite += n_bad
        if len(f):
            i = int(np.argmin(f))
            # strict improvement keeps the earliest of tied positions
            if f[i] < self.best_fitness or self.best_position is None:
                self.best_fitness = float(f[i])
                self.best_position = X[i].copy()
        return f

    def record(self, fitness: np.ndarray) -> None:
        finite = fitness[np.isfinite(fitness)]
        mean = float(np.mean(finite)) if finite.size else math.inf
        self.history.append(HistoryRecord(self.best_fitness, mean))

    def result(self) -> OptResult:
        return OptResult(
            best_position=self.best_position.copy(),
            best_fitness=self.best_fitness,
            history=self.history,
            evaluations=self.evaluations,
            seed=self.seed,
            algorithm=self.algorithm,
            nonfinite_evaluations=self.nonfinite,
            guard_clamps=self.guard.count,
            extra_evaluations=self.extra_evaluations,
        )
