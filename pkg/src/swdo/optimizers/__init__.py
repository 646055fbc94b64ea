from .fox import FoxParams, fox_optimize
from .gwo import IgwoParams, gwo_optimize, igwo_optimize
from .mgto import MgtoParams, mgto_optimize

OPTIMIZERS = {
    "fox": fox_optimize,
    "gwo": gwo_optimize,
    "igwo": igwo_optimize,
    "mgto": mgto_optimize,
}


def run_optimizer(algorithm: str, objective, space, budget, seed: int, workers: int = 1):
    try:
        fn = OPTIMIZERS[algorithm]
    except KeyError:
        raise KeyError(f"unknown algorithm {algorithm!r}; choose from {sorted(OPTIMIZERS)}") from None
    return fn(objective, space, budget=budget, seed=seed, workers=workers)


__all__ = [
    "FoxParams", "IgwoParams", "MgtoParams", "OPTIMIZERS",
    "fox_optimize", "gwo_optimize", "igwo_optimize", "mgto_optimize", "run_optimizer",
]
