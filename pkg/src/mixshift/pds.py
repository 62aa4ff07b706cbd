"""Finite-difference tests for whether training on the test mix is optimal.

Each component error is extended off the simplex by ``f_k(v) = e_k(v/|v|)``.
Matched training ``q = p`` is a stationary point of the mixture loss only if
``g_i = sum_k p_k df_k/dv_i`` is the same for every i; any spread in ``g``
gives a direction that strictly improves on ``q = p``.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._parallel import ordered_map
from ._validation import check_budget, check_positive
from .core import (
    MixtureProblem,
    SimplexVec,
    as_simplex,
    expected_component_error,
    mixture_loss,
)
from .simulate import McConfig, multinomial_estimate

DEFAULT_H = 1e-4


@dataclass(frozen=True)
class ErrorFieldProbe:
    """Evaluator ``f(k, r)`` of component ``k``'s expected error at mix ``r``.

    ``noise`` is the standard error of a single evaluation (0 for closed
    forms). ``independent`` declares that ``f(k, r)`` depends on ``r_k`` only.
    """

    f: object
    K: int
    h: float = DEFAULT_H
    noise: float = 0.0
    independent: bool = False

    def __post_init__(self):
        check_budget(self.K, "K")
        check_positive(self.h, "h")
        if not self.h < 0.01:
            raise ValueError(f"h={self.h} is too coarse for a derivative estimate")

    @classmethod
    def from_problem(cls, problem, h=DEFAULT_H, mc=None):
        """Probe backed by the problem's curves. With ``mc`` each evaluation is
        a Monte Carlo estimate on its own seed stream."""
        independent = problem.kinds() <= {"powerlaw", "memorization", "tabulated"}
        N = problem.N
        if mc is None:
            def f(k, r):
                return expected_component_error(problem.curves[k], r[k], N)

            return cls(f, problem.K, h, 0.0, independent)

        root = np.random.SeedSequence(mc.seed)

        def f(k, r):
            e = np.zeros(problem.K)
            e[k] = 1.0
            single = MixtureProblem(e, problem.curves, N)
            # the stream depends only on the point, so repeated calls agree
            key = tuple(int(x) for x in np.round(np.asarray(r) * 2**40))
            seed = np.random.SeedSequence(root.entropy, spawn_key=(k,) + key)
            cfg = McConfig(mc.draws, int(seed.generate_state(1)[0]), mc.parallel_streams)
            return multinomial_estimate(single, r, cfg)[0]

        uniform = np.full(problem.K, 1.0 / problem.K)
        noise = max(
            multinomial_estimate(MixtureProblem(np.eye(problem.K)[k], problem.curves, N), uniform, mc)[1]
            for k in range(problem.K)
        )
        return cls(f, problem.K, h, float(noise), independent)

    @classmethod
    def constant(cls, values, h=DEFAULT_H):
        values = np.asarray(values, dtype=float)
        return cls(lambda k, r: float(values[k]), values.size, h, 0.0, True)


def homogeneous_eval(probe, k, v):
    """``f_k(v / sum(v))``; unchanged by positive rescaling of ``v``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (probe.K,):
        raise ValueError(f"v must have {probe.K} entries")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("v must be finite and non-negative")
    s = v.sum()
    if s <= 0:
        raise ValueError("v must not be the zero vector")
    r = v / s
    if r.min() < probe.h * (1 - 1e-9):
        raise ValueError(f"point within h={probe.h} of the simplex boundary")
    return float(probe.f(k, r))


def _field(probe, v):
    return np.array([homogeneous_eval(probe, k, v) for k in range(probe.K)])


def _weighted_gradient(probe, p, h):
    """Central differences of ``sum_k p_k f_k`` along each ambient axis,
    holding the weights fixed."""
    K = probe.K
    offsets = []
    for i in range(K):
        for sign in (1.0, -1.0):
            v = p.copy()
            v[i] += sign * h
            offsets.append(v)
    fields = ordered_map(lambda v: _field(probe, v), offsets)
    g = np.empty(K)
    for i in range(K):
        g[i] = p @ (fields[2 * i] - fields[2 * i + 1]) / (2.0 * h)
    return g


@dataclass(frozen=True)
class StationarityResult:
    is_stationary: object  # True, False, or None when inconclusive
    tangent_gradient_norm: float
    certificate: np.ndarray
    tolerance: float
    noise: float

    def __iter__(self):
        return iter((self.is_stationary, self.tangent_gradient_norm, self.certificate))

    def to_dict(self):
        return {
            "is_stationary": self.is_stationary,
            "norm": self.tangent_gradient_norm,
            "certificate": self.certificate.tolist(),
            "tolerance": self.tolerance,
            "noise": self.noise,
        }


def stationarity_test(probe, p):
    """Is ``q = p`` a first-order stationary point of ``q -> sum p_k e_k(q)``?

    The tolerance combines a Richardson estimate of the truncation error
    (differences at ``h`` and ``2h``) with a rounding floor. If evaluation
    noise propagated through the difference exceeds a tenth of it the
    result is inconclusive (``is_stationary=None``). The certificate is the
    negative tangent gradient, a descent direction for the training mix.
    """
    p = np.asarray(as_simplex(p), dtype=float)
    if p.size != probe.K:
        raise ValueError(f"p has {p.size} entries, probe has K={probe.K}")
    h = probe.h
    if p.min() < 10 * h:
        raise ValueError(f"p must be at least 10*h={10 * h:g} from the boundary")
    g = _weighted_gradient(probe, p, h)
    g2 = _weighted_gradient(probe, p, 2 * h)
    proj = g - g.mean()
    proj2 = g2 - g2.mean()
    norm = float(np.linalg.norm(proj))
    scale = max(1.0, float(np.max(np.abs(_field(probe, p)))))
    tol = max(1e-9 * scale, float(np.linalg.norm(proj - proj2)))
    noise = probe.noise * math.sqrt(probe.K) / (math.sqrt(2.0) * h)
    if noise > 0.1 * tol:
        verdict = None
    else:
        verdict = norm <= tol
    return StationarityResult(verdict, norm, -proj, tol, noise)


def line_search(problem, p, direction, shrink=0.5, tries=40):
    """First step along ``direction`` from ``q = p`` that lowers the mixture
    loss, as ``(q, loss)``; ``None`` if no tried step helps."""
    p = np.asarray(as_simplex(p), dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d - d.mean()
    base = mixture_loss(problem, p)
    neg = d < 0
    t = float(np.min(-p[neg] / d[neg])) if np.any(neg) else 1.0
    for _ in range(tries):
        q = np.clip(p + t * d, 0.0, None)
        q = q / q.sum()
        val = mixture_loss(problem, q)
        if val < base:
            return SimplexVec(q), val
        t *= shrink
    return None


def independence_constancy_test(probe, sample_points=21):
    """For component-wise error fields, check whether every
    ``g_k(x) = f_k`` at ``r_k = x`` is constant in ``x``.

    Constant ``g_k`` for all k is the only case in which matched training
    can be optimal on a set of positive measure; any variation means a
    better training mix exists for almost every test mix.
    """
    if probe.K < 3:
        raise ValueError("the constancy criterion needs K >= 3")
    if not probe.independent:
        raise ValueError("probe is not declared component-wise independent")
    n = check_budget(sample_points, "sample_points", minimum=2)
    h = probe.h
    K = probe.K
    xs = np.linspace(h, 1.0 - (K - 1) * h, n)
    for k in range(K):
        vals = []
        for x in xs:
            r = np.full(K, (1.0 - x) / (K - 1))
            r[k] = x
            vals.append(homogeneous_eval(probe, k, r))
        vals = np.asarray(vals)
        tol = max(1e-9 * max(1.0, float(np.max(np.abs(vals)))), 6.0 * probe.noise)
        if np.ptp(vals) > tol:
            return False
    return True
