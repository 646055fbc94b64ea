"""Hyperparameter search for the mini model with the swarm optimizers.

Positions live in the unit box [0, 1]^8 and are decoded into a
:class:`ModelConfig`. Integer dimensions map linearly and round half up
(kernel sizes then go up to the next odd number); learning rate and the
three regularization weights map linearly in log10.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Budget, HistoryRecord, SearchSpace
from .dataset import LabeledImage, to_batch, train_val_split
from .minimodel import INTEGER_FIELDS, LOG_FIELDS, PUBLISHED_BOUNDS, Batch, ModelConfig, next_odd, train
from .optimizers import OPTIMIZERS, run_optimizer

logger = logging.getLogger(__name__)

FIELDS = ("filters_size", "kernel_size", "lr", "l2_reg", "l1_reg", "batch_size", "epochs", "att_reg_weight")
LOG_COLUMNS = ("iteration", "agent", "filters", "kernel", "lr", "l2", "l1", "batch", "epochs", "att_reg",
               "fitness", "seed")

# Smaller box for laptop runs: a few filters, a few epochs, and a learning
# rate range wide enough for plain gradient descent to get going in that time.
DESK_BOUNDS: dict[str, tuple[float, float]] = {
    "filters_size": (2, 8),
    "kernel_size": (3, 7),
    "lr": (1e-3, 1.0),
    "l2_reg": (1e-5, 1e-2),
    "l1_reg": (1e-5, 1e-2),
    "batch_size": (16, 128),
    "epochs": (2, 8),
    "att_reg_weight": (1e-5, 1e-3),
}

DEFAULT_POP = 6
DEFAULT_ITERS = 8


@dataclass(frozen=True)
class HyperSpace:
    bounds: dict = field(default_factory=lambda: dict(PUBLISHED_BOUNDS))

    def __post_init__(self):
        missing = set(FIELDS) - set(self.bounds)
        if missing:
            raise ValueError(f"bounds missing for {sorted(missing)}")
        for name in FIELDS:
            lo, hi = self.bounds[name]
            if not lo < hi:
                raise ValueError(f"{name}: lower bound must be below upper bound")
            if name in LOG_FIELDS and lo <= 0:
                raise ValueError(f"{name}: log-scaled bounds must be positive")

    @classmethod
    def published(cls) -> "HyperSpace":
        return cls(dict(PUBLISHED_BOUNDS))

    @classmethod
    def desk(cls) -> "HyperSpace":
        return cls(dict(DESK_BOUNDS))

    def encode_space(self) -> SearchSpace:
        return encode_space()

    def decode(self, position) -> ModelConfig:
        return decode(position, self)

    def encode(self, config: ModelConfig) -> np.ndarray:
        """Approximate inverse of :meth:`decode` (exact at the box corners)."""
        u = []
        for name in FIELDS:
            lo, hi = self.bounds[name]
            v = getattr(config, name)
            if name in LOG_FIELDS:
                u.append((math.log10(v) - math.log10(lo)) / (math.log10(hi) - math.log10(lo)))
            else:
                u.append((v - lo) / (hi - lo))
        return np.clip(np.array(u), 0.0, 1.0)

    def midpoint(self) -> ModelConfig:
        return decode(np.full(len(FIELDS), 0.5), self)


def encode_space() -> SearchSpace:
    return SearchSpace.box(len(FIELDS), 0.0, 1.0)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def decode(position, space: HyperSpace | None = None) -> ModelConfig:
    """Map a unit-box position to a config; out-of-box coordinates are clamped with a warning."""
    space = space or HyperSpace.published()
    u = np.asarray(position, dtype=float)
    if u.shape != (len(FIELDS),):
        raise ValueError(f"expected a position of length {len(FIELDS)}, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("position has non-finite coordinates")
    if np.any((u < 0) | (u > 1)):
        logger.warning("position outside [0, 1]^8 clamped before decoding")
        u = np.clip(u, 0.0, 1.0)
    values = {}
    for name, x in zip(FIELDS, u):
        lo, hi = space.bounds[name]
        if name in LOG_FIELDS:
            a, b = math.log10(lo), math.log10(hi)
            # pin the corners so they hit the bounds exactly
            values[name] = lo if x == 0 else hi if x == 1 else 10.0 ** (a + x * (b - a))
        else:
            v = min(max(_round_half_up(lo + x * (hi - lo)), int(lo)), int(hi))
            if name == "kernel_size":
                v = next_odd(v)
                if v > hi:
                    v -= 2
            values[name] = v
    return ModelConfig(**values)


def config_key(config: ModelConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def agent_seed(master_seed: int, iteration: int, agent: int) -> int:
    """Training seed for one agent evaluation, independent of the search's own random streams."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(0x7475, int(iteration), int(agent)))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def split_dataset(dataset, seed: int, val_fraction: float = 0.15) -> tuple[Batch, Batch]:
    batch = to_batch(dataset) if isinstance(dataset, list) else dataset
    tr, va = train_val_split(np.arange(len(batch)), val_fraction, seed)
    return batch.subset(tr), batch.subset(va)


def fitness(config: ModelConfig, dataset, seed: int, split_seed: int | None = None) -> float:
    """Validation error ``1 - best val accuracy`` on the 85/15 split; +inf if training fails."""
    train_set, val_set = split_dataset(dataset, seed if split_seed is None else split_seed)
    return _train_fitness(config, train_set, val_set, seed)


def _train_fitness(config: ModelConfig, train_set: Batch, val_set: Batch, seed: int) -> float:
    try:
        result = train(config, train_set, val_set, seed)
    except (ArithmeticError, ValueError) as exc:
        logger.warning("training failed for %s: %s", config, exc)
        return math.inf
    return 1.0 - result.best_val_accuracy


@dataclass
class Evaluation:
    iteration: int
    agent: int
    config: ModelConfig
    fitness: float
    seed: int
    cached: bool = False

    def row(self) -> list:
        c = self.config
        return [self.iteration, self.agent, c.filters_size, c.kernel_size, c.lr, c.l2_reg, c.l1_reg,
                c.batch_size, c.epochs, c.att_reg_weight, self.fitness, self.seed]


class TrainingObjective:
    """Batch objective handed to the optimizers.

    Every call is one evaluation batch. The first batch is the initial
    population (iteration 0); afterwards ``batches_per_iteration`` calls make
    up one iteration, and rows of the second and later batches in an
    iteration are logged as agents ``pop .. 2*pop-1`` and so on.
    """

    def __init__(self, space: HyperSpace, train_set: Batch, val_set: Batch, master_seed: int,
                 batches_per_iteration: int = 1, cache: bool = True):
        self.space = space
        self.train_set = train_set
        self.val_set = val_set
        self.master_seed = int(master_seed)
        self.batches_per_iteration = batches_per_iteration
        self.use_cache = cache
        self.calls = 0
        self.log: list[Evaluation] = []
        self.cache_hits = 0
        self._cache: dict[str, tuple[float, int]] = {}
        self._lock = threading.Lock()

    def _slot(self) -> tuple[int, int]:
        if self.calls == 0:
            return 0, 0
        return 1 + (self.calls - 1) // self.batches_per_iteration, (self.calls - 1) % self.batches_per_iteration

    def evaluate_batch(self, X: np.ndarray, workers: int = 1) -> np.ndarray:
        iteration, phase = self._slot()
        self.calls += 1
        configs = [decode(np.clip(x, 0.0, 1.0), self.space) for x in X]
        offset = phase * len(X)
        seeds = [agent_seed(self.master_seed, iteration, offset + i) for i in range(len(X))]

        # duplicates inside the batch resolve to their first occurrence, in row order
        todo: dict[str, int] = {}
        for i, cfg in enumerate(configs):
            key = config_key(cfg)
            with self._lock:
                known = self.use_cache and key in self._cache
            if not known and key not in todo:
                todo[key] = i

        def run(i):
            return _train_fitness(configs[i], self.train_set, self.val_set, seeds[i])

        jobs = list(todo.items())
        if workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                values = list(pool.map(run, [i for _, i in jobs]))
        else:
            values = [run(i) for _, i in jobs]
        fresh = {key: (v, seeds[i]) for (key, i), v in zip(jobs, values)}
        with self._lock:
            if self.use_cache:
                for key, item in fresh.items():
                    self._cache.setdefault(key, item)

        out = np.empty(len(X))
        for i, cfg in enumerate(configs):
            key = config_key(cfg)
            own = key in fresh and todo[key] == i
            if own:
                f, s = fresh[key]
            else:
                f, s = self._cache[key] if self.use_cache else fresh[key]
                self.cache_hits += 1
            out[i] = f
            self.log.append(Evaluation(iteration, offset + i, cfg, f, s, cached=not own))
        return out


def surrogate_bowl(position) -> float:
    """Quadratic bowl over the unit box with its minimum (0) at the center."""
    u = np.asarray(position, dtype=float)
    return float(np.sum((u - 0.5) ** 2))


@dataclass
class TuneReport:
    algorithm: str
    seed: int
    best_config: ModelConfig | None
    best_fitness: float
    best_position: np.ndarray
    history: list[HistoryRecord]
    evaluations: list[Evaluation]
    optimizer_evaluations: int
    extra_evaluations: int
    cache_hits: int = 0
    bounds: dict = field(default_factory=dict)
    surrogate: bool = False

    @property
    def best_accuracy(self) -> float:
        return 1.0 - self.best_fitness

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "surrogate": self.surrogate,
            "best_config": self.best_config.to_dict() if self.best_config else None,
            "best_fitness": self.best_fitness,
            "best_position": [float(v) for v in self.best_position],
            "history": [{"iteration": i, "best": h.best, "mean": h.mean} for i, h in enumerate(self.history, 1)],
            "evaluations": len(self.evaluations) if self.evaluations else self.optimizer_evaluations,
            "optimizer_evaluations": self.optimizer_evaluations,
            "extra_evaluations": self.extra_evaluations,
            "cache_hits": self.cache_hits,
            "bounds": {k: list(v) for k, v in self.bounds.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for e in self.evaluations:
            w.writerow([repr(v) if isinstance(v, float) else v for v in e.row()])
        return buf.getvalue()


def tune(algorithm: str, dataset, budget: Budget = Budget(DEFAULT_POP, DEFAULT_ITERS), seed: int = 0,
         space: HyperSpace | None = None, workers: int = 1, surrogate: bool = False,
         cache: bool = True) -> TuneReport:
    """Search the hyperparameter box with one optimizer.

    ``dataset`` is a list of :class:`LabeledImage` or a :class:`Batch`; it is
    split 85/15 once with the master seed. With ``surrogate=True`` the
    dataset is ignored and the fitness is :func:`surrogate_bowl`.
    """
    if algorithm not in OPTIMIZERS:
        raise KeyError(f"unknown algorithm {algorithm!r}; choose from {sorted(OPTIMIZERS)}")
    space = space or HyperSpace.published()
    if surrogate:
        res = run_optimizer(algorithm, surrogate_bowl, encode_space(), budget, seed, workers)
        return TuneReport(algorithm, int(seed), decode(np.clip(res.best_position, 0, 1), space),
                          res.best_fitness, res.best_position, res.history, [], res.evaluations,
                          res.extra_evaluations, 0, dict(space.bounds), surrogate=True)

    train_set, val_set = split_dataset(dataset, seed)
    objective = TrainingObjective(space, train_set, val_set, seed,
                                  batches_per_iteration=2 if algorithm == "mgto" else 1, cache=cache)
    res = run_optimizer(algorithm, objective, encode_space(), budget, seed, workers)
    log = objective.log
    best = min(log, key=lambda e: e.fitness)  # earliest among ties
    return TuneReport(algorithm, int(seed), best.config, best.fitness, res.best_position, res.history, log,
                      res.evaluations, res.extra_evaluations, objective.cache_hits, dict(space.bounds))


def mid_box_accuracy(dataset, seed: int, space: HyperSpace | None = None) -> float:
    """Validation accuracy of the box-center config on the tuner's own split."""
    space = space or HyperSpace.desk()
    train_set, val_set = split_dataset(dataset, seed)
    return 1.0 - _train_fitness(space.midpoint(), train_set, val_set, agent_seed(seed, 0, 0))
