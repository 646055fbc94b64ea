import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swdo.core import Budget, benchmark_space
from swdo.dataset import generate_synthetic
from swdo.minimodel import ModelConfig
from swdo.optimizers import OPTIMIZERS, run_optimizer
from swdo.tuner import (
    DESK_BOUNDS, FIELDS, LOG_COLUMNS, HyperSpace, TrainingObjective, agent_seed, config_key, decode,
    encode_space, fitness, split_dataset, surrogate_bowl, tune,
)

TINY = HyperSpace({**DESK_BOUNDS, "filters_size": (2, 3), "epochs": (1, 2), "batch_size": (8, 16)})


@pytest.fixture(scope="module")
def tiny_data():
    return generate_synthetic(40, 0, 8)


class TestDecode:
    def test_lower_corner(self):
        c = decode(np.zeros(8))
        assert (c.filters_size, c.kernel_size, c.lr, c.l2_reg, c.l1_reg, c.batch_size, c.epochs,
                c.att_reg_weight) == (64, 3, 1e-5, 1e-5, 1e-5, 16, 10, 1e-5)

    def test_upper_corner(self):
        c = decode(np.ones(8))
        assert (c.filters_size, c.kernel_size, c.lr, c.l2_reg, c.l1_reg, c.batch_size, c.epochs,
                c.att_reg_weight) == (256, 9, 1e-2, 1e-2, 1e-2, 128, 100, 1e-3)

    def test_lr_midpoint(self):
        u = np.zeros(8)
        u[FIELDS.index("lr")] = 0.5
        assert decode(u).lr == pytest.approx(10 ** -3.5, rel=1e-12)
        assert decode(u).lr == pytest.approx(3.1623e-4, rel=1e-4)

    def test_space_is_unit_box(self):
        s = encode_space()
        assert s.dims == 8
        assert np.all(s.lower == 0) and np.all(s.upper == 1)

    def test_out_of_box_clamped(self, caplog):
        assert decode(np.full(8, 1.7)) == decode(np.ones(8))
        assert "clamped" in caplog.text

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            decode(np.zeros(3))

    def test_round_half_up(self):
        u = np.zeros(8)
        u[FIELDS.index("filters_size")] = 0.5 / 192  # 64.5
        assert decode(u).filters_size == 65

    def test_desk_corners(self):
        lo, hi = decode(np.zeros(8), HyperSpace.desk()), decode(np.ones(8), HyperSpace.desk())
        for name in FIELDS:
            assert getattr(lo, name) == DESK_BOUNDS[name][0]
            assert getattr(hi, name) == DESK_BOUNDS[name][1]

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1), min_size=8, max_size=8))
    def test_integers_in_bounds_and_odd_kernel(self, u):
        c = decode(np.array(u))
        c.check_bounds()
        assert c.kernel_size % 2 == 1
        for name in ("filters_size", "kernel_size", "batch_size", "epochs"):
            assert isinstance(getattr(c, name), int)

    @settings(max_examples=60)
    @given(st.integers(0, 7), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**32))
    def test_monotone_per_dimension(self, dim, a, b, seed):
        base = np.random.default_rng(seed).random(8)
        lo, hi = sorted((a, b))
        x, y = base.copy(), base.copy()
        x[dim], y[dim] = lo, hi
        assert getattr(decode(x), FIELDS[dim]) <= getattr(decode(y), FIELDS[dim])

    def test_encode_round_trip_at_corners(self):
        space = HyperSpace.published()
        for corner in (np.zeros(8), np.ones(8)):
            np.testing.assert_allclose(space.encode(decode(corner, space)), corner, atol=1e-12)

    def test_bad_space(self):
        with pytest.raises(ValueError):
            HyperSpace({**DESK_BOUNDS, "lr": (0.0, 1.0)})
        with pytest.raises(ValueError):
            HyperSpace({"lr": (1e-3, 1e-2)})


class TestSeedsAndKeys:
    def test_agent_seed_distinct(self):
        seeds = {agent_seed(0, it, a) for it in range(5) for a in range(10)}
        assert len(seeds) == 50
        assert agent_seed(3, 1, 2) == agent_seed(3, 1, 2)

    def test_config_key(self):
        assert config_key(ModelConfig()) == config_key(ModelConfig())
        assert config_key(ModelConfig()) != config_key(ModelConfig(epochs=11))


class TestFitness:
    def test_deterministic(self, tiny_data):
        cfg = TINY.midpoint()
        assert fitness(cfg, tiny_data, 3) == fitness(cfg, tiny_data, 3)

    def test_in_unit_interval(self, tiny_data):
        f = fitness(TINY.midpoint(), tiny_data, 1)
        assert 0.0 <= f <= 1.0

    def test_failure_is_inf(self, tiny_data):
        # a kernel larger than the 8x8 images cannot train
        assert fitness(ModelConfig(filters_size=2, kernel_size=9, epochs=1), tiny_data, 0) == math.inf

    def test_split_is_85_15(self, tiny_data):
        tr, va = split_dataset(tiny_data, 0)
        assert (len(tr), len(va)) == (34, 6)


class TestCache:
    def test_duplicates_share_one_training(self, tiny_data):
        tr, va = split_dataset(tiny_data, 0)
        obj = TrainingObjective(TINY, tr, va, master_seed=0)
        X = np.vstack([np.full(8, 0.5)] * 3)
        f = obj.evaluate_batch(X)
        assert f[0] == f[1] == f[2]
        assert obj.cache_hits == 2
        assert [e.cached for e in obj.log] == [False, True, True]
        assert len({e.seed for e in obj.log}) == 1
        obj.evaluate_batch(X[:1])
        assert obj.cache_hits == 3 and obj.log[-1].iteration == 1

    def test_without_cache(self, tiny_data):
        tr, va = split_dataset(tiny_data, 0)
        obj = TrainingObjective(TINY, tr, va, master_seed=0, cache=False)
        obj.evaluate_batch(np.vstack([np.full(8, 0.5)] * 2))
        obj.evaluate_batch(np.vstack([np.full(8, 0.5)] * 2))
        assert obj.log[2].seed != obj.log[0].seed


class TestTune:
    @pytest.mark.parametrize("algo", sorted(OPTIMIZERS))
    def test_report_bookkeeping(self, algo, tiny_data):
        rep = tune(algo, tiny_data, Budget(3, 2), seed=1, space=TINY)
        assert rep.best_fitness == min(e.fitness for e in rep.evaluations)
        assert rep.best_config in [e.config for e in rep.evaluations]
        assert len(rep.evaluations) == rep.optimizer_evaluations
        for e in rep.evaluations:
            for name in FIELDS:
                lo, hi = TINY.bounds[name]
                assert lo <= getattr(e.config, name) <= hi
        rows = list(csv.reader(io.StringIO(rep.log_csv())))
        assert tuple(rows[0]) == LOG_COLUMNS
        assert len(rows) == len(rep.evaluations) + 1

    def test_mgto_extra_agents_logged_after_population(self, tiny_data):
        rep = tune("mgto", tiny_data, Budget(3, 1), seed=0, space=TINY)
        assert [(e.iteration, e.agent) for e in rep.evaluations] == \
            [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (1, 3), (1, 4), (1, 5)]

    def test_deterministic_and_worker_independent(self, tiny_data):
        a = tune("gwo", tiny_data, Budget(3, 2), seed=5, space=TINY, workers=1)
        b = tune("gwo", tiny_data, Budget(3, 2), seed=5, space=TINY, workers=3)
        assert a.log_csv() == b.log_csv()
        assert a.to_json() == b.to_json()

    def test_unknown_algorithm(self, tiny_data):
        with pytest.raises(KeyError):
            tune("pso", tiny_data)


SURROGATE = Budget(10, 50)


@pytest.mark.parametrize("algo", ["gwo", "igwo", "mgto"])
def test_surrogate_bowl_converges(algo):
    # median over seeds: MGTO has a heavy tail (an occasional seed stalls near 1e-2)
    reports = [tune(algo, None, SURROGATE, seed=seed, surrogate=True) for seed in range(10)]
    assert np.median([r.best_fitness for r in reports]) <= 1e-3
    assert all(r.surrogate and r.best_config is not None for r in reports)


@pytest.mark.xfail(strict=True, reason="FOX updates scale the best position toward the origin, "
                                       "so it cannot reach a bowl centred at 0.5")
def test_surrogate_bowl_fox():
    reports = [tune("fox", None, SURROGATE, seed=seed, surrogate=True) for seed in range(10)]
    assert np.median([r.best_fitness for r in reports]) <= 1e-3


def test_fox_reaches_origin_centred_bowl():
    # the same bowl, shifted so that its minimum sits at the origin of a centred box
    space = benchmark_space("sphere", 8)
    scaled = type(space)(space.lower / 200.0, space.upper / 200.0)
    res = run_optimizer("fox", lambda x: float(np.sum(x * x)), scaled, SURROGATE, 0)
    assert res.best_fitness <= 1e-3


def test_surrogate_function():
    assert surrogate_bowl(np.full(8, 0.5)) == 0.0
    assert surrogate_bowl(np.zeros(8)) == pytest.approx(2.0)
