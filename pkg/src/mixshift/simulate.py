"""Monte Carlo references for mixture losses and a skill-composition world.

Randomness is driven by :class:`McConfig`: the seed is split into independent
streams with :class:`numpy.random.SeedSequence`, draws are divided between
streams deterministically, and results are concatenated in stream order, so
output depends only on ``(seed, parallel_streams, draws)``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from ._parallel import ordered_map
from ._validation import check_budget, check_probability, check_simplex
from .core import (
    Memorization,
    MixtureProblem,
    PowerLaw,
    SimplexVec,
    Transfer,
    as_simplex,
    binomial_expectation,
)

CHUNK_CELLS = 2_000_000
EXACT_GAP_MAX_N = 1_000_000


@dataclass(frozen=True)
class McConfig:
    draws: int = 100_000
    seed: int = 0
    parallel_streams: int = 1

    def __post_init__(self):
        check_budget(self.draws, "draws")
        check_budget(self.parallel_streams, "parallel_streams")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed!r}")

    def stream_sizes(self):
        base, extra = divmod(self.draws, self.parallel_streams)
        return [base + (i < extra) for i in range(self.parallel_streams)]

    def generators(self):
        seqs = np.random.SeedSequence(int(self.seed)).spawn(self.parallel_streams)
        return [np.random.default_rng(s) for s in seqs]


def _run_streams(mc, sample_fn):
    """Evaluate ``sample_fn(rng, n)`` per stream and concatenate in order."""
    jobs = [(g, n) for g, n in zip(mc.generators(), mc.stream_sizes()) if n > 0]
    parts = ordered_map(lambda job: sample_fn(*job), jobs)
    return np.concatenate(parts)


def _mean_stderr(values):
    if np.all(values == values[0]):
        return float(values[0]), 0.0
    se = float(np.std(values, ddof=1) / math.sqrt(values.size))
    return float(np.mean(values)), se


def _component_errors(curve, counts, N):
    if isinstance(curve, Transfer):
        return curve.shared_error(N) + curve.specific.error(counts)
    return curve.error(counts)


def multinomial_estimate(problem, q, mc=None):
    """Monte Carlo estimate of the mixture loss with its standard error."""
    mc = mc or McConfig()
    q = as_simplex(q)
    if q.K != problem.K:
        raise ValueError(f"q has {q.K} components but the problem has {problem.K}")
    p = np.asarray(problem.p)
    qv = np.asarray(q)
    used = np.nonzero(p > 0)[0]
    chunk = max(1, CHUNK_CELLS // problem.K)

    def sample(rng, n):
        out = []
        for start in range(0, n, chunk):
            counts = rng.multinomial(problem.N, qv, size=min(chunk, n - start))
            loss = np.zeros(counts.shape[0])
            for k in used:
                loss += p[k] * _component_errors(problem.curves[k], counts[:, k], problem.N)
            out.append(loss)
        return np.concatenate(out)

    return _mean_stderr(_run_streams(mc, sample))


@dataclass(frozen=True)
class GapResult:
    gap: float
    bound: float
    mean_count: float
    regime_ok: bool

    def __iter__(self):
        return iter((self.gap, self.bound))


def approximation_gap(curve, q_k, N, mc=None):
    """Distance between the loss at the mean count and the expected loss.

    The expectation is summed exactly up to ``N = 1e6`` and estimated by Monte
    Carlo beyond. ``regime_ok`` reports whether the mean count ``mu = N q_k``
    exceeds 1 and twice ``max(B, B**alpha)``, where the bound is meant to apply.
    """
    if not isinstance(curve, PowerLaw):
        raise TypeError("approximation_gap needs a PowerLaw curve")
    q_k = check_probability(q_k, "q_k")
    N = check_budget(N)
    mu = N * q_k
    at_mean = curve.A / (mu**curve.alpha + curve.B)
    if q_k in (0.0, 1.0):
        expected = float(curve.error(round(mu)))
    elif N <= EXACT_GAP_MAX_N:
        expected = binomial_expectation(curve.error, q_k, N)
    else:
        mc = mc or McConfig()
        expected = float(np.mean(_run_streams(
            mc, lambda rng, n: curve.error(rng.binomial(N, q_k, size=n)))))
    A, B, a = curve.A, curve.B, curve.alpha
    if mu > 0:
        bound = 320.0 * A / B * mu**-2 + a * A * mu ** (-a - 0.25) + a * A * mu ** (-a - 0.5)
    else:
        bound = math.inf
    regime = bool(mu > 1 and mu >= 2 * max(B, B**a))
    return GapResult(abs(at_mean - expected), float(bound), float(mu), regime)


# -- skill composition -------------------------------------------------------


def skill_frequencies(M, alpha=1.5, offset=50):
    w = (np.arange(1, M + 1, dtype=float) + offset) ** (-alpha)
    return w / w.sum()


@dataclass(frozen=True)
class SkillWorld:
    """Skills with power-law test frequencies composed into chains.

    A chain of ``k`` skills, ``k`` uniform on ``[chain_min, chain_max]``, is
    solved only if every skill in it has been seen at least
    ``mastery_threshold`` times during training.
    """

    M: int = 100_000
    alpha: float = 1.5
    offset: float = 50.0
    chain_min: int = 10
    chain_max: int = 50
    mastery_threshold: int = 1

    def __post_init__(self):
        check_budget(self.M, "M")
        check_budget(self.chain_min, "chain_min")
        check_budget(self.chain_max, "chain_max")
        check_budget(self.mastery_threshold, "mastery_threshold")
        if self.chain_max < self.chain_min:
            raise ValueError("chain_max must be >= chain_min")
        if self.offset <= -1:
            raise ValueError("offset must exceed -1")

    @property
    def test_freq(self):
        return SimplexVec(skill_frequencies(self.M, self.alpha, self.offset))

    @property
    def chain_lengths(self):
        return np.arange(self.chain_min, self.chain_max + 1)

    def to_dict(self):
        return {
            "M": self.M,
            "alpha": self.alpha,
            "offset": self.offset,
            "chain_min": self.chain_min,
            "chain_max": self.chain_max,
            "mastery_threshold": self.mastery_threshold,
        }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls().to_dict())
        if unknown:
            raise ValueError(f"unknown world field(s) {sorted(unknown)}")
        return cls(**d)


def blend(gamma, uniform, test_freq):
    """``gamma * uniform + (1 - gamma) * test_freq``; ``uniform=None`` means
    the uniform distribution."""
    gamma = check_probability(gamma, "gamma")
    t = np.asarray(as_simplex(test_freq))
    u = np.full(t.size, 1.0 / t.size) if uniform is None else check_simplex(uniform, "uniform")
    if u.size != t.size:
        raise ValueError("uniform and test_freq differ in length")
    return SimplexVec(gamma * u + (1.0 - gamma) * t)


def mastery_probability(world, train_mix, N):
    """Per-skill probability of at least ``T`` exposures in ``N`` draws."""
    q = np.asarray(as_simplex(train_mix))
    if q.size != world.M:
        raise ValueError(f"train_mix has {q.size} entries for {world.M} skills")
    return binom.sf(world.mastery_threshold - 1, N, q)


def composition_accuracy_predicted(world, per_skill_acc, k=None):
    """Chain accuracy ``(sum_g test_freq_g * acc_g)**k`` treating skills as
    independent. With ``k=None`` the power is averaged over the chain lengths."""
    acc = np.asarray(per_skill_acc, dtype=float)
    if np.any((acc < 0) | (acc > 1)):
        raise ValueError("per-skill accuracies must lie in [0, 1]")
    pbar = float(np.asarray(world.test_freq) @ acc)
    pbar = min(pbar, 1.0)
    if k is None:
        return float(np.mean(pbar ** world.chain_lengths.astype(float)))
    return pbar ** check_budget(k, "k")


@dataclass(frozen=True)
class CompositionResult:
    mc_accuracy: float
    predicted_accuracy: float
    stderr: float
    draws: int

    @property
    def gap(self):
        return self.mc_accuracy - self.predicted_accuracy

    @property
    def null_stderr(self):
        """Standard error of the success rate if the prediction were exact."""
        p = self.predicted_accuracy
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.draws)

    def agrees(self, n_sigma=3.0):
        sigma = self.null_stderr
        if sigma == 0.0:
            return self.gap == 0.0
        return abs(self.gap) <= n_sigma * sigma

    def __iter__(self):
        return iter((self.mc_accuracy, self.predicted_accuracy))

    def to_dict(self):
        return {
            "mc_accuracy": self.mc_accuracy,
            "predicted_accuracy": self.predicted_accuracy,
            "stderr": self.stderr,
            "gap": self.gap,
            "draws": self.draws,
            "null_stderr": self.null_stderr,
        }


def run_composition_experiment(world, train_mix, N, mc=None, k=None):
    """Simulate training exposures and test chains; compare with the
    independence prediction.

    Each Monte Carlo draw samples one training run (multinomial exposures over
    skills) and one test chain. ``k`` fixes the chain length; by default it is
    drawn uniformly from the world's range.
    """
    mc = mc or McConfig()
    N = check_budget(N)
    q = np.asarray(as_simplex(train_mix))
    f = np.asarray(world.test_freq)
    predicted = composition_accuracy_predicted(world, mastery_probability(world, q, N), k)
    T = world.mastery_threshold
    lengths = world.chain_lengths if k is None else np.array([check_budget(k, "k")])
    kmax = int(lengths.max())
    chunk = max(1, CHUNK_CELLS // max(world.M, kmax))
    cdf = np.cumsum(f)
    cdf[-1] = 1.0

    def sample(rng, n):
        out = []
        for start in range(0, n, chunk):
            m = min(chunk, n - start)
            counts = rng.multinomial(N, q, size=m)
            ks = rng.choice(lengths, size=m)
            skills = np.searchsorted(cdf, rng.random((m, kmax)), side="right")
            skills = np.minimum(skills, world.M - 1)
            mastered = np.take_along_axis(counts, skills, axis=1) >= T
            mastered |= np.arange(kmax)[None, :] >= ks[:, None]
            out.append(mastered.all(axis=1).astype(float))
        return np.concatenate(out)

    hits = _run_streams(mc, sample)
    acc = float(hits.mean())
    se = math.sqrt(max(acc * (1.0 - acc), 0.0) / hits.size)
    return CompositionResult(acc, float(predicted), se, int(hits.size))


def memorization_problem(p, N):
    """Convenience: a memorization MixtureProblem for test mix ``p``."""
    p = as_simplex(p)
    return MixtureProblem(p, [Memorization()] * p.K, N)
