import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixshift.core import Memorization, MixtureProblem, PowerLaw, mixture_loss
from mixshift.memorization import water_fill
from mixshift.powerlaw import approximate_loss, powerlaw_problem, solve_lambda
from mixshift.simulate import memorization_problem
from mixshift.solver import (
    MonotonicityError,
    SolverConfig,
    minimize_simplex,
    sample_complexity,
    sample_complexity_ratio,
    simplex_grid,
)


def test_grid_size_and_membership():
    from math import comb

    for K, r in [(2, 0.1), (3, 0.05), (4, 0.25)]:
        pts = simplex_grid(K, r)
        m = round(1 / r)
        assert pts.shape == (comb(m + K - 1, K - 1), K)
        np.testing.assert_allclose(pts.sum(axis=1), 1)
        assert pts.min() >= 0


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(grid_resolution=0.9)
    with pytest.raises(ValueError):
        SolverConfig(step_rule="armijo")


class TestMinimize:
    def test_quadratic(self):
        q, v = minimize_simplex(lambda q: float(np.sum(np.asarray(q) ** 2)), 2)
        np.testing.assert_allclose(q, [0.5, 0.5], atol=1e-9)
        assert v == pytest.approx(0.5)

    def test_memorization_matches_water_fill(self):
        pr = memorization_problem([0.6, 0.3, 0.1], 3)
        res = minimize_simplex(lambda q: mixture_loss(pr, q), 3)
        np.testing.assert_allclose(res.q, water_fill(pr.p, 3).q_star, atol=1e-3)

    def test_powerlaw_matches_lambda(self):
        pr = powerlaw_problem([0.9, 0.1], 1, 1, 1, 10**5)
        res = minimize_simplex(lambda q: approximate_loss(pr, q), 2)
        ref = approximate_loss(pr, solve_lambda(pr)[0])
        assert res.value == pytest.approx(ref, abs=1e-6)
        assert res.value >= ref - 1e-15

    def test_descent_alone_converges(self):
        pr = powerlaw_problem([0.4, 0.3, 0.15, 0.1, 0.05], 1, 1, 0.5, 1000)
        res = minimize_simplex(lambda q: approximate_loss(pr, q), 5)
        assert res.converged
        ref = approximate_loss(pr, solve_lambda(pr)[0])
        assert res.value == pytest.approx(ref, rel=1e-6)

    def test_non_convergence_flag(self):
        res = minimize_simplex(lambda q: float(np.asarray(q) @ [3, 2, 1, 0.5, 4]), 5,
                               SolverConfig(max_iters=2))
        assert not res.converged
        # the vertex candidate still finds the exact optimum of the linear objective
        assert res.value == pytest.approx(0.5)

    def test_snapping_gives_exact_zeros(self):
        pr = memorization_problem([0.6, 0.3, 0.1], 3)
        res = minimize_simplex(lambda q: mixture_loss(pr, q), 3, SolverConfig(grid_resolution=0.5))
        assert res.q[2] == 0.0
        assert sum(res.q) == pytest.approx(1.0, abs=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2**31))
    def test_never_worse_than_uniform_or_vertices(self, K, seed):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=K)
        c = rng.dirichlet(np.ones(K))

        def f(q):
            q = np.asarray(q)
            return float(w @ q + 3 * np.sum((q - c) ** 2))

        res = minimize_simplex(f, K, SolverConfig(max_iters=300))
        assert res.value <= f(np.full(K, 1 / K)) + 1e-15
        for i in range(K):
            assert res.value <= f(np.eye(K)[i]) + 1e-15
        assert abs(sum(res.q) - 1) <= 1e-12 and min(res.q) >= 0


class TestSampleComplexity:
    def test_halving(self):
        pr = memorization_problem([0.5, 0.5], 1)
        loss = lambda N: mixture_loss(pr.with_budget(N), [0.5, 0.5])
        assert sample_complexity(loss, 0.1) == 4
        assert sample_complexity(loss, 0.5) == 1
        assert sample_complexity(loss, 1e-9, N_max=20) is None

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 0.99), st.floats(1e-6, 0.9))
    def test_minimal(self, r, eps):
        N = sample_complexity(lambda n: r**n, eps, N_max=10**6)
        assert r**N <= eps
        assert N == 1 or r ** (N - 1) > eps

    def test_monotonicity_violation(self):
        with pytest.raises(MonotonicityError):
            sample_complexity(lambda n: 1.0 / n if n < 16 else 0.5, 0.01, N_max=1000)


class TestRatio:
    def test_test_taking(self):
        pr = powerlaw_problem([0.9, 0.1], 1, 1e-6, 1, 10)
        for eps in (1e-3, 1e-4):
            r = sample_complexity_ratio(pr, eps)
            assert r.ratio == pytest.approx(0.8, abs=1e-3)
            assert r.loss_kind == "approximate"

    def test_symmetric(self):
        pr = powerlaw_problem([0.5, 0.5], 1, 1, 1, 10)
        assert sample_complexity_ratio(pr, 1e-3).ratio == 1.0

    def test_memorization(self):
        r = sample_complexity_ratio(memorization_problem([0.6, 0.3, 0.1], 1), 0.15)
        assert 0 < r.ratio < 1
        wf = water_fill([0.6, 0.3, 0.1], r.N_star)
        assert wf.L_star <= 0.15 < water_fill([0.6, 0.3, 0.1], r.N_star - 1).L_star

    def test_fixed_q_never_beats_reoptimized(self):
        pr = memorization_problem([0.6, 0.3, 0.1], 1)
        free = sample_complexity_ratio(pr, 0.05)
        fixed = sample_complexity_ratio(pr, 0.05, fixed_q=True)
        assert fixed.fixed_q is not None
        assert free.N_star <= fixed.N_star

    def test_numeric_family(self):
        pr = MixtureProblem([0.8, 0.2], [PowerLaw(1, 1, 1), Memorization()], 1)
        r = sample_complexity_ratio(pr, 0.05, N_max=2000)
        assert r.loss_kind == "exact-numeric"
        assert r.ratio <= 1.0

    def test_unreachable(self):
        with pytest.raises(ValueError):
            sample_complexity_ratio(powerlaw_problem([0.5, 0.5], 1, 1, 1, 10), 1e-9, N_max=100)
