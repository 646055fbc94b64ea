import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swdo.core import (
    Agent, BENCHMARKS, Budget, ConfigurationError, ContractError, GuardCounter, RngStream,
    ScriptedDraws, SearchSpace, ackley, benchmark, benchmark_space, clamp_to_bounds,
    evaluate_population, evaluate_positions, init_population, rastrigin, rosenbrock, sphere,
)


def unit_square():
    return SearchSpace.box(2, 0.0, 1.0)


class TestSearchSpace:
    def test_rejects_inverted_bounds(self):
        with pytest.raises(ContractError):
            SearchSpace([0.0, 1.0], [1.0, 1.0])

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ContractError):
            SearchSpace([0.0], [1.0, 2.0])

    def test_dims_and_width(self):
        s = SearchSpace([0.0, -1.0], [2.0, 1.0])
        assert s.dims == 2
        np.testing.assert_array_equal(s.width, [2.0, 2.0])

    def test_bounds_are_frozen(self):
        s = unit_square()
        with pytest.raises(ValueError):
            s.lower[0] = 5.0


class TestClamp:
    def test_projects_outside_point(self):
        np.testing.assert_array_equal(clamp_to_bounds([3.0, -1.0], unit_square()), [1.0, 0.0])

    def test_interior_point_fixed(self):
        np.testing.assert_array_equal(clamp_to_bounds([0.5, 0.5], unit_square()), [0.5, 0.5])

    def test_boundary_fixed(self):
        np.testing.assert_array_equal(clamp_to_bounds([1.0, 0.0], unit_square()), [1.0, 0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            clamp_to_bounds([1.0, 2.0, 3.0], unit_square())

    @given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
    def test_result_always_inside(self, coords):
        s = SearchSpace([-1.0, 0.0, 5.0], [1.0, 2.0, 6.0])
        assert s.contains(clamp_to_bounds(coords, s))


class TestBudgetAndAgent:
    def test_budget_limits(self):
        with pytest.raises(ConfigurationError):
            Budget(1, 10)
        with pytest.raises(ConfigurationError):
            Budget(5, 0)

    def test_unevaluated_agent_has_no_fitness(self):
        a = Agent(np.zeros(2))
        assert not a.evaluated and a.fitness is None


class TestRng:
    def test_same_stream_same_draws(self):
        a = RngStream(11, 3).generator().random(5)
        b = RngStream(11, 3).generator().random(5)
        np.testing.assert_array_equal(a, b)

    def test_different_streams_differ(self):
        a = RngStream(11, 3).generator().random(1000)
        b = RngStream(11, 4).generator().random(1000)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.1

    def test_scripted_draws_cycle(self):
        d = ScriptedDraws([0.1, 0.2])
        np.testing.assert_array_equal(d.random(3), [0.1, 0.2, 0.1])
        assert d.uniform(-1, 1) == pytest.approx(0.2 * 2 - 1)


class TestInitPopulation:
    def test_in_bounds(self):
        s = SearchSpace.box(3, -2.0, 2.0)
        pop = init_population(s, Budget(5, 1), RngStream(7))
        assert len(pop) == 5
        assert all(s.contains(a.position) for a in pop)

    def test_deterministic(self):
        s = SearchSpace.box(3, -2.0, 2.0)
        a = init_population(s, Budget(5, 1), RngStream(7))
        b = init_population(s, Budget(5, 1), RngStream(7))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.position, y.position)

    def test_tiny_box(self):
        eps = 1e-12
        s = SearchSpace([2.0], [2.0 + eps])
        pop = init_population(s, Budget(2, 1), RngStream(0))
        assert all(2.0 <= a.position[0] <= 2.0 + eps for a in pop)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32), st.integers(1, 6), st.integers(2, 12))
    def test_clamp_is_identity_on_fresh_population(self, seed, dims, n):
        s = SearchSpace(np.arange(dims) - 1.5, np.arange(dims) * 2.0 + 0.5)
        for a in init_population(s, Budget(n, 1), RngStream(seed)):
            np.testing.assert_array_equal(clamp_to_bounds(a.position, s), a.position)


class TestEvaluate:
    def test_sphere_values(self):
        X = np.array([[1.0, 2.0], [0.0, 0.0], [-3.0, 1.0]])
        agents, bad = evaluate_population([Agent(x) for x in X], sphere)
        assert [a.fitness for a in agents] == [5.0, 0.0, 10.0]
        assert bad == 0

    def test_empty(self):
        assert evaluate_population([], sphere) == ([], 0)

    def test_nan_maps_to_inf(self):
        agents, bad = evaluate_population([Agent(np.array([1.0]))], lambda x: float("nan"))
        assert agents[0].fitness == math.inf and bad == 1

    def test_raising_objective_maps_to_inf(self):
        def boom(x):
            raise ValueError("nope")
        f, bad = evaluate_positions(np.zeros((2, 1)), boom)
        assert np.all(np.isinf(f)) and bad == 2

    def test_workers_do_not_change_results(self):
        X = np.random.default_rng(0).normal(size=(17, 4))
        a, _ = evaluate_positions(X, rastrigin, workers=1)
        b, _ = evaluate_positions(X, rastrigin, workers=4)
        np.testing.assert_array_equal(a, b)


class TestGuard:
    def test_counts_and_clips(self):
        g = GuardCounter(limit=10.0)
        out = g(np.array([1.0, 50.0, np.nan, -np.inf]))
        np.testing.assert_array_equal(out, [1.0, 10.0, 0.0, -10.0])
        assert g.count == 3


class TestBenchmarks:
    def test_known_values(self):
        assert sphere([0, 0, 0]) == 0.0
        assert sphere([1, 2]) == 5.0
        assert rastrigin(np.zeros(10)) == 0.0
        assert rosenbrock([1, 1, 1]) == 0.0
        assert abs(ackley([0, 0])) < 1e-12

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            benchmark("cube", [1.0])

    def test_default_space(self):
        s = benchmark_space("rastrigin", 4)
        assert s.dims == 4 and s.upper[0] == 5.12

    @settings(max_examples=50)
    @given(st.sampled_from(sorted(BENCHMARKS)), st.integers(2, 6), st.integers(0, 2**32))
    def test_probes_never_beat_the_optimum(self, name, dims, seed):
        info = BENCHMARKS[name]
        best = info.func(info.optimum(dims))
        s = benchmark_space(name, dims)
        x = s.lower + np.random.default_rng(seed).random(dims) * s.width
        assert info.func(x) >= best - 1e-12
