"""End-to-end acceptance checks, shared by the ``reproduce`` command and the test suite.

Each check returns a :class:`CheckResult`; a check passes only if its numeric
condition holds and it finishes inside its time limit.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

TOL_STAT = 1e-3
TOL_P = 5e-4


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    limit: float | None = None
    applicable: bool = True
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if not self.applicable:
            status = "N/A "
        limit = f" (limit {self.limit:g} s)" if self.limit else ""
        return f"criterion {self.criterion} {status} {self.name}: {self.detail} [{self.seconds:.2f} s{limit}]"

    def to_dict(self) -> dict:
        return asdict(self)


def _timed(criterion: int, name: str, limit: float | None, fn) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail, data = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail, data = False, f"{type(exc).__name__}: {exc}", {}
    dt = time.perf_counter() - t0
    if limit is not None and dt > limit:
        ok = False
        detail += f"; over the time limit ({dt:.1f} s > {limit:g} s)"
    return CheckResult(criterion, name, bool(ok), detail, dt, limit, data=data)


# --- 1: t-test tables ----------------------------------------------------------

def check_ttest_tables() -> CheckResult:
    from .evalstats import comparison_matrix, expected_ttests, load_fixture

    def run():
        expected = expected_ttests()
        misses = {}
        worst = {}
        for name in ("isic2016-reconciled", "isic2016"):
            table = load_fixture(name)
            m = comparison_matrix(table)
            idx = {mname: i for i, mname in enumerate(table.models)}
            bad, ws, wp = 0, 0.0, 0.0
            for a, b, s, p in expected:
                if a == b:
                    continue
                r = m[idx[a]][idx[b]]
                ds, dp = abs(r.statistic - s), abs(r.p_value - p)
                ws, wp = max(ws, ds), max(wp, dp)
                bad += ds > TOL_STAT or dp > TOL_P
            misses[name], worst[name] = bad, (ws, wp)
        n_cells = sum(a != b for a, b, _, _ in expected)
        ok = misses["isic2016-reconciled"] == 0
        ws, wp = worst["isic2016-reconciled"]
        detail = (f"{n_cells - misses['isic2016-reconciled']}/{n_cells} off-diagonal cells within "
                  f"({TOL_STAT:g}, {TOL_P:g}) on the reconciled fold table, max |dt|={ws:.2e}, |dp|={wp:.2e}; "
                  f"verbatim table: {n_cells - misses['isic2016']}/{n_cells}")
        return ok, detail, {"misses": misses, "worst": worst, "cells": n_cells}

    return _timed(1, "t-test table reproduction", 1.0, run)


def check_headline_scope() -> CheckResult:
    return CheckResult(2, "headline accuracies", True,
                       "not reproducible at desk scale (pre-trained backbones and full ISIC data); "
                       "substituted by criteria 3-8", applicable=False)


# --- 3: wavelet ---------------------------------------------------------------

def check_wavelet(n_planes: int = 200, seed: int = 0) -> CheckResult:
    from .wavelet import dwt2_forward, dwt2_inverse

    def run():
        rng = np.random.default_rng(seed)
        worst_rec, worst_energy, const_ok = 0.0, 0.0, True
        for _ in range(n_planes):
            h, w = 2 * rng.integers(1, 33, size=2)
            x = rng.normal(0, rng.uniform(0.1, 100), (h, w))
            s = dwt2_forward(x)
            worst_rec = max(worst_rec, float(np.max(np.abs(dwt2_inverse(s) - x))))
            e_in = float(np.sum(x * x))
            worst_energy = max(worst_energy, abs(sum(s.energies().values()) - e_in) / e_in)
            c = dwt2_forward(np.full((h, w), rng.uniform(-10, 10)))
            const_ok &= all(np.all(b == 0.0) for b in (c.lh, c.hl, c.hh))
        ok = worst_rec < 1e-10 and worst_energy < 1e-9 and const_ok
        detail = (f"{n_planes} planes: max reconstruction error {worst_rec:.1e}, "
                  f"max relative energy deviation {worst_energy:.1e}, constant detail bands zero: {const_ok}")
        return ok, detail, {"reconstruction": worst_rec, "energy": worst_energy, "constant": const_ok}

    return _timed(3, "wavelet properties", 5.0, run)


# --- 4: optimizers ------------------------------------------------------------

def _fingerprint(res) -> bytes:
    return (res.history_array().tobytes() + np.asarray(res.best_position).tobytes()
            + np.float64(res.best_fitness).tobytes() + str(res.evaluations).encode())


def check_optimizers(seeds: int = 10, dims: int = 10, pop: int = 30, iters: int = 500) -> CheckResult:
    from .core import Budget, benchmark_space, rastrigin, sphere
    from .optimizers import OPTIMIZERS

    def run():
        budget = Budget(pop, iters)
        medians, ok = {}, True
        for fname, fn, limit in (("sphere", sphere, 1e-2), ("rastrigin", rastrigin, 20.0)):
            space = benchmark_space(fname, dims)
            for alg, opt in OPTIMIZERS.items():
                best = [opt(fn, space, budget=budget, seed=s).best_fitness for s in range(seeds)]
                med = float(np.median(best))
                medians[f"{alg}/{fname}"] = med
                ok &= med < limit
        deterministic = True
        space = benchmark_space("sphere", dims)
        for alg, opt in OPTIMIZERS.items():
            a = _fingerprint(opt(sphere, space, budget=budget, seed=1, workers=1))
            b = _fingerprint(opt(sphere, space, budget=budget, seed=1, workers=1))
            c = _fingerprint(opt(sphere, space, budget=budget, seed=1, workers=4))
            deterministic &= a == b == c
        ok &= deterministic
        worst_sphere = max(v for k, v in medians.items() if k.endswith("sphere"))
        worst_rastrigin = max(v for k, v in medians.items() if k.endswith("rastrigin"))
        detail = (f"worst median sphere {worst_sphere:.2e} (< 1e-2), worst median rastrigin "
                  f"{worst_rastrigin:.2f} (< 20), deterministic across runs and workers: {deterministic}")
        return ok, detail, {"medians": medians, "deterministic": deterministic}

    return _timed(4, "optimizer convergence", 120.0, run)


# --- 5: closed forms ----------------------------------------------------------

def check_closed_forms() -> CheckResult:
    from .core import ScriptedDraws, SearchSpace
    from .optimizers.fox import fox_exploit_position, fox_exploration_control, fox_explore_position, \
        fox_jump, fox_sound_distance
    from .optimizers.gwo import IgwoParams, gwo_a_schedule, gwo_encircle, igwo_a_schedule
    from .optimizers.mgto import MgtoParams, cauchy_sample, eobl_opposite, mgto_exploit

    tol = 1e-12

    def close(a, b):
        return bool(np.all(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) <= tol))

    def run():
        checks = {}
        sp, dist, prey = fox_sound_distance([2, 4], [0.5, 0.5])
        checks["fox_sound_distance"] = close(sp, [4, 8]) and close(dist, [2, 4]) and close(prey, [1, 2])
        checks["fox_sound_distance_zero"] = close(np.concatenate(fox_sound_distance([0, 0], [0.3, 0.9])), 0)
        checks["fox_jump"] = (close(fox_jump([0.4, 0.6]), 0.3065625) and close(fox_jump([0, 0]), 0)
                              and close(fox_jump([1, 1, 1, 1]), 1.22625))
        checks["fox_exploit"] = (close(fox_exploit_position([1, 2], 0.3065625, 0.18), [0.05518125, 0.1103625])
                                 and close(fox_exploit_position([1, 2], 0.3065625, 0.82), [0.25138125, 0.5027625]))
        checks["fox_control"] = (close(fox_exploration_control(1, 500), 1.996)
                                 and close(fox_exploration_control(500, 500), 0.0)
                                 and close(fox_exploration_control(250, 500), 1.0))
        checks["fox_explore"] = close(fox_explore_position([1, 1], 0.2, 1.0, ScriptedDraws([0.5])), [0.1, 0.1])
        p = IgwoParams(a_min=0.02, a_max=2.2, eta_alpha=1.0, eta_delta=0.5)
        a0 = igwo_a_schedule(0, 100, p)
        a1 = igwo_a_schedule(100, 100, p)
        checks["igwo_a_schedule"] = (close(a0, [2.2] * 3) and close(a1[0], 0.02)
                                     and close(a1[2], 2.2 * math.sqrt(0.02 / 2.2)))
        checks["gwo_a_schedule"] = close(gwo_a_schedule(0, 10), [2.0] * 3) and close(gwo_a_schedule(10, 10), 0)
        checks["gwo_encircle"] = (close(gwo_encircle([1.0], [0.0], 1.0, ScriptedDraws([1.0, 0.5])), [0.0])
                                  and close(gwo_encircle([3.0, -2.0], [7.0, 1.0], 1.3, ScriptedDraws([0.5])),
                                            [3.0, -2.0]))
        checks["cauchy_sample"] = (close(cauchy_sample(0, 1, ScriptedDraws([0.5])), 0.0)
                                   and close(cauchy_sample(0, 1, ScriptedDraws([0.75])), 1.0)
                                   and close(cauchy_sample(2, 3, ScriptedDraws([0.25])), -1.0))
        space = SearchSpace.box(1, 0.0, 10.0)
        checks["eobl"] = (close(eobl_opposite([3.0], [0.0], [10.0], space, ScriptedDraws([1.0])), [7.0])
                          and close(eobl_opposite([5.0], [0.0], [10.0], space, ScriptedDraws([1.0])), [5.0]))
        sb = np.array([1.5, -2.0, 0.25])
        checks["mgto_q_zero"] = close(mgto_exploit([4.0, 1.0, -3.0], sb, np.zeros((3, 3)), 0.1, 0.1,
                                                   MgtoParams(), ScriptedDraws([0.5, 0.5, 0.5, 0.3, 0.3, 0.3])), sb)
        checks["mgto_follow_fixed"] = close(mgto_exploit(sb, sb, np.ones((3, 3)), 0.9, 0.9, MgtoParams(),
                                                         ScriptedDraws([0.7])), sb)
        failed = [k for k, v in checks.items() if not v]
        detail = f"{len(checks) - len(failed)}/{len(checks)} exact within 1e-12" + \
            (f"; failed: {', '.join(failed)}" if failed else "")
        return not failed, detail, {"checks": checks}

    return _timed(5, "closed-form micro-checks", 1.0, run)


# --- 6: gradients ---------------------------------------------------------------

def gradient_errors(seed: int, filters: int = 4, size: int = 8, n: int = 3, step: float = 1e-5) -> dict:
    """Relative error per weight group: max |analytic - numeric| / max |numeric|."""
    from .minimodel import WEIGHT_ORDER, Batch, ModelConfig, backward, init_weights, loss

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(filters_size=filters, kernel_size=int(rng.choice([1, 3, 5])),
                      l2_reg=float(rng.uniform(1e-4, 1e-2)), l1_reg=float(rng.uniform(1e-4, 1e-2)),
                      att_reg_weight=float(rng.uniform(1e-4, 1e-2)))
    w = init_weights(cfg, 1, size, size, seed, att_dim=4)
    w = {k: np.array(v + rng.normal(0.0, 0.3, v.shape)) for k, v in w.items()}
    batch = Batch(rng.random((n, 1, size, size)), rng.integers(0, 2, n))
    g = backward(cfg, w, batch)
    errors = {}
    for name in WEIGHT_ORDER:
        num = np.zeros_like(w[name])
        for idx in np.ndindex(w[name].shape):
            orig = w[name][idx]
            w[name][idx] = orig + step
            up = loss(cfg, w, batch)
            w[name][idx] = orig - step
            down = loss(cfg, w, batch)
            w[name][idx] = orig
            num[idx] = (up - down) / (2 * step)
        errors[name] = float(np.max(np.abs(num - g[name])) / max(float(np.max(np.abs(num))), 1e-12))
    return errors


def check_gradients(configs: int = 5) -> CheckResult:
    from .wavelet import subband_concat, subband_concat_adjoint

    def run():
        worst = {}
        for s in range(configs):
            for k, v in gradient_errors(s).items():
                worst[k] = max(worst.get(k, 0.0), v)
        rng = np.random.default_rng(99)
        x = rng.normal(size=(2, 3, 6, 8))
        y = rng.normal(size=(2, 12, 3, 4))
        adj = abs(float(np.sum(subband_concat(x) * y) - np.sum(x * subband_concat_adjoint(y))))
        ok = max(worst.values()) < 1e-4 and adj < 1e-10
        detail = (f"{configs} configs, worst relative error {max(worst.values()):.1e} "
                  f"({max(worst, key=worst.get)}); wavelet adjoint mismatch {adj:.1e}")
        return ok, detail, {"errors": worst, "adjoint": adj}

    return _timed(6, "gradient correctness", 30.0, run)


# --- 7: desk pipeline -------------------------------------------------------------

def check_pipeline(seeds=(1, 2, 3), n: int = 400, size: int = 32, pop: int = 6, iters: int = 8,
                   workers: int = 1, progress=None) -> CheckResult:
    from .core import Budget
    from .dataset import generate_synthetic
    from .optimizers import OPTIMIZERS
    from .tuner import HyperSpace, mid_box_accuracy, tune

    def run():
        data = generate_synthetic(n, 0, size)
        space = HyperSpace.desk()
        tuned, default = [], {}
        runs = []
        for seed in seeds:
            default[seed] = mid_box_accuracy(data, seed, space)
            for alg in OPTIMIZERS:
                rep = tune(alg, data, Budget(pop, iters), seed, space, workers=workers)
                tuned.append(rep.best_accuracy)
                runs.append({"algorithm": alg, "seed": seed, "accuracy": rep.best_accuracy,
                             "evaluations": len(rep.evaluations), "default": default[seed]})
                if progress:
                    progress(runs[-1])
        med = float(np.median(tuned))
        med_default = float(np.median(list(default.values())))
        ok = med >= 0.90 and med >= med_default
        detail = (f"median tuned validation accuracy {med:.3f} over {len(tuned)} runs "
                  f"(min {min(tuned):.3f}); mid-box default median {med_default:.3f}")
        return ok, detail, {"runs": runs, "median": med, "default_median": med_default}

    return _timed(7, "end-to-end desk pipeline", 900.0, run)


# --- 8: metrics and splits ------------------------------------------------------

def check_metrics_splits() -> CheckResult:
    from .dataset import kfold_split, train_val_split
    from .evalstats import ConfusionCounts, accuracy, f_measure, precision, recall

    def run():
        c = ConfusionCounts(tp=50, tn=40, fp=5, fn=5)
        metrics_ok = (accuracy(c) == 0.9 and precision(c) == 10 / 11 and recall(c) == 10 / 11
                      and f_measure(c) == 10 / 11)
        plan = kfold_split(10, 5, 0)
        folds = plan.folds()
        kfold_ok = (sorted(np.concatenate(folds).tolist()) == list(range(10))
                    and all(len(f) == 2 for f in folds))
        split_ok = True
        for n_items, n_val in ((100, 15), (7, 1), (400, 60), (20, 3)):
            tr, va = train_val_split(np.arange(n_items), 0.15, 0)
            split_ok &= len(va) == n_val and len(tr) == n_items - n_val and not set(tr) & set(va)
        ok = metrics_ok and kfold_ok and split_ok
        detail = f"metrics exact: {metrics_ok}; 5-fold partition of 10: {kfold_ok}; 15% validation rule: {split_ok}"
        return ok, detail, {}

    return _timed(8, "metrics and splits", 1.0, run)


FAST_CHECKS = (check_ttest_tables, check_headline_scope, check_wavelet, check_optimizers,
               check_closed_forms, check_gradients, check_metrics_splits)


def run_all(full: bool = False, workers: int = 1, progress=None) -> list[CheckResult]:
    results = [fn() for fn in FAST_CHECKS]
    if full:
        results.append(check_pipeline(workers=workers, progress=progress))
    return sorted(results, key=lambda r: r.criterion)
