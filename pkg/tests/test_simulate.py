import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixshift.core import Memorization, MixtureProblem, PowerLaw, Transfer
from mixshift.memorization import water_fill
from mixshift.simulate import (
    McConfig,
    SkillWorld,
    approximation_gap,
    blend,
    composition_accuracy_predicted,
    mastery_probability,
    memorization_problem,
    multinomial_estimate,
    run_composition_experiment,
    skill_frequencies,
)


def exact_powerlaw_loss(p, q, A, B, alpha, N):
    """Sum over binomial marginals with math.comb weights."""
    total = 0.0
    for pk, qk in zip(p, q):
        total += pk * sum(math.comb(N, n) * qk**n * (1 - qk) ** (N - n) * A / (n**alpha + B)
                          for n in range(N + 1))
    return total


def test_config():
    mc = McConfig(draws=10, parallel_streams=3)
    assert mc.stream_sizes() == [4, 3, 3]
    with pytest.raises(ValueError):
        McConfig(seed=-1)
    with pytest.raises(ValueError):
        McConfig(draws=0)


class TestMultinomial:
    def test_half_half(self):
        pr = memorization_problem([0.5, 0.5], 4)
        est, se = multinomial_estimate(pr, [0.5, 0.5], McConfig(draws=10**5, seed=1))
        assert abs(est - 0.0625) <= 3 * se

    def test_one_hot_memorization(self):
        pr = memorization_problem([0.2, 0.5, 0.3], 7)
        assert multinomial_estimate(pr, [0, 1, 0], McConfig(draws=100)) == (0.5, 0.0)

    def test_single_powerlaw(self):
        pr = MixtureProblem([1.0], [PowerLaw(2, 1, 0.5)], 16)
        assert multinomial_estimate(pr, [1.0], McConfig(draws=50)) == (2 / 5, 0.0)

    def test_transfer_adds_shared_term(self):
        pr = MixtureProblem([1.0], [Transfer(1, 0, 2, 1, 1)], 9)
        assert multinomial_estimate(pr, [1.0], McConfig(draws=5))[0] == pytest.approx(1 / 9 + 2 / 10)

    def test_deterministic(self):
        pr = memorization_problem([0.6, 0.3, 0.1], 5)
        for streams in (1, 4):
            mc = McConfig(draws=5000, seed=11, parallel_streams=streams)
            assert multinomial_estimate(pr, [0.4, 0.4, 0.2], mc) == multinomial_estimate(pr, [0.4, 0.4, 0.2], mc)

    def test_seeds_differ(self):
        pr = memorization_problem([0.6, 0.3, 0.1], 5)
        a = multinomial_estimate(pr, [0.4, 0.4, 0.2], McConfig(draws=5000, seed=1))
        b = multinomial_estimate(pr, [0.4, 0.4, 0.2], McConfig(draws=5000, seed=2))
        assert a != b

    @pytest.mark.parametrize("case", ["memorization", "powerlaw"])
    def test_unbiased_over_seeds(self, case):
        if case == "memorization":
            p, q, N = [0.6, 0.3, 0.1], [0.5, 0.3, 0.2], 6
            pr = memorization_problem(p, N)
            exact = sum(pk * (1 - qk) ** N for pk, qk in zip(p, q))
        else:
            p, q, N = [0.7, 0.3], [0.6, 0.4], 20
            pr = MixtureProblem(p, [PowerLaw(1, 1, 0.5)] * 2, N)
            exact = exact_powerlaw_loss(p, q, 1, 1, 0.5, N)
        runs = [multinomial_estimate(pr, q, McConfig(draws=2000, seed=s)) for s in range(50)]
        est = np.array([r[0] for r in runs])
        se = np.array([r[1] for r in runs])
        pooled = math.sqrt(np.mean(se**2) / len(runs))
        assert abs(est.mean() - exact) <= 3 * pooled
        assert np.mean(np.abs(est - exact) <= 3 * se) >= 0.9


class TestGap:
    def test_example(self):
        g = approximation_gap(PowerLaw(1, 1, 0.5), 0.5, 10**4)
        assert g.regime_ok
        assert g.gap <= g.bound

    def test_deterministic_count(self):
        assert approximation_gap(PowerLaw(1, 1, 0.5), 1.0, 100).gap == 0.0

    def test_decreasing(self):
        gaps = [approximation_gap(PowerLaw(1, 1, 0.5), 0.5, N).gap for N in (100, 1000, 10**4)]
        assert gaps[0] > gaps[1] > gaps[2] > 0

    def test_against_direct_sum(self):
        g = approximation_gap(PowerLaw(1, 2, 1.0), 0.3, 40)
        direct = exact_powerlaw_loss([1.0], [0.3], 1, 2, 1.0, 40)
        assert g.gap == pytest.approx(abs(1 / (12**1.0 + 2) - direct), rel=1e-10)

    def test_rejects_other_curves(self):
        with pytest.raises(TypeError):
            approximation_gap(Memorization(), 0.5, 10)


class TestComposition:
    def test_prediction_examples(self):
        w = SkillWorld(M=2)
        assert composition_accuracy_predicted(w, [1, 1], 7) == 1.0
        two = SkillWorld(M=2, alpha=0.0, offset=0)
        assert composition_accuracy_predicted(two, [1.0, 0.8], 10) == pytest.approx(0.9**10)

    def test_weighted_mean(self):
        # (2/1)**2 = 4 gives frequencies (0.8, 0.2)
        w = SkillWorld(M=2, alpha=2.0, offset=0)
        np.testing.assert_allclose(w.test_freq, [0.8, 0.2])
        assert composition_accuracy_predicted(w, [1.0, 0.5], 3) == pytest.approx(0.729)

    def test_frequencies(self):
        f = skill_frequencies(3, 1.5, 50)
        w = np.array([51, 52, 53], dtype=float) ** -1.5
        np.testing.assert_allclose(f, w / w.sum())

    def test_single_skill(self):
        w = SkillWorld(M=1)
        r = run_composition_experiment(w, [1.0], 3, McConfig(draws=200))
        assert r.mc_accuracy == 1.0 and r.predicted_accuracy == 1.0 and r.agrees()

    def test_blend(self):
        b = blend(0.3, None, [0.5, 0.3, 0.2])
        np.testing.assert_allclose(b, 0.3 / 3 + 0.7 * np.array([0.5, 0.3, 0.2]))

    def test_mastery_tail(self):
        w = SkillWorld(M=2, mastery_threshold=2)
        np.testing.assert_allclose(mastery_probability(w, [0.5, 0.5], 4), [11 / 16, 11 / 16])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 60))
    def test_prediction_monotone_in_error(self, seed, k):
        rng = np.random.default_rng(seed)
        w = SkillWorld(M=20)
        a = rng.uniform(size=20)
        b = np.minimum(1.0, a + rng.uniform(0, 0.2, size=20))
        assert composition_accuracy_predicted(w, b, k) >= composition_accuracy_predicted(w, a, k)

    def test_waterfill_beats_matched_prediction(self):
        w = SkillWorld()
        f = w.test_freq
        for N in (10**4, 10**5):
            wf = water_fill(f, N).q_star
            pred = lambda q: composition_accuracy_predicted(w, mastery_probability(w, q, N))
            assert pred(wf) > pred(f)

    def test_mc_deterministic(self):
        w = SkillWorld(M=50)
        mc = McConfig(draws=3000, seed=4)
        a = run_composition_experiment(w, w.test_freq, 800, mc)
        assert a == run_composition_experiment(w, w.test_freq, 800, mc)

    def test_mc_agrees_at_high_mastery(self):
        w = SkillWorld(M=100)
        r = run_composition_experiment(w, w.test_freq, 2000, McConfig(draws=40_000, seed=3))
        assert r.agrees(3.0), r.to_dict()

    def test_coupling_bias_sign_at_low_mastery(self):
        # exposures compete for a fixed total, which correlates mastery across
        # skills; the independence prediction then sits below the exact rate
        w = SkillWorld(M=100)
        r = run_composition_experiment(w, w.test_freq, 700, McConfig(draws=40_000, seed=3))
        assert r.gap > 0


def test_thread_count_does_not_change_results(monkeypatch):
    pr = memorization_problem([0.6, 0.3, 0.1], 5)
    mc = McConfig(draws=4000, seed=9, parallel_streams=4)
    out = []
    for threads in ("1", "4"):
        monkeypatch.setenv("MIXSHIFT_THREADS", threads)
        out.append(multinomial_estimate(pr, [0.4, 0.4, 0.2], mc))
    assert out[0] == out[1]
