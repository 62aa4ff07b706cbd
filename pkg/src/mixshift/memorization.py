"""Exact optimal mixing when each component is learned after a single sample.

The expected loss ``sum_k p_k (1 - q_k)**N`` is convex, and its minimiser has
a water-filling form: sorted by decreasing ``p``, the first ``K_N`` components
receive ``q_k = 1 - beta * p_k**(-1/(N-1))`` and the rest receive nothing.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._validation import check_budget
from .core import MixingSolution, SimplexVec, as_simplex


def l_same_memorization(p, N):
    """Expected loss when training on the test mix itself."""
    p = np.asarray(as_simplex(p), dtype=float)
    N = check_budget(N)
    return float(np.sum(p * (1.0 - p) ** N))


@dataclass(frozen=True)
class WaterFillingResult:
    q_star: SimplexVec
    K_N: int
    beta_N: float
    delta_N: float
    L_star: float
    L_same: float
    sort_permutation: np.ndarray

    def to_mixing_solution(self):
        diag = {
            "K_N": self.K_N,
            "beta_N": self.beta_N,
            "delta_N": self.delta_N,
            "sort_permutation": self.sort_permutation.tolist(),
        }
        return MixingSolution(self.q_star, self.L_star, self.L_same, "water-filling", diag)


def active_set_scores(p_sorted, N):
    """``f_N(s) = sum_{k<s} (1 - (p_s/p_k)**(1/(N-1)))`` for s = 1..K."""
    c = 1.0 / (N - 1)
    with np.errstate(divide="ignore"):
        logp = np.log(p_sorted)
    inv = np.exp(-c * logp[logp > -np.inf])
    # zero entries sort last; for them (p_s/p_k)**c is 0, so f = s - 1
    prefix = np.concatenate([[0.0], np.cumsum(inv)])
    s = np.arange(1, p_sorted.size + 1)
    fwd = np.zeros(p_sorted.size)
    n_pos = inv.size
    fwd[:n_pos] = np.exp(c * logp[:n_pos]) * prefix[:n_pos]
    return (s - 1) - fwd


def water_fill(p, N):
    """Optimal training mix for memorization curves, with its water level."""
    p = np.asarray(as_simplex(p), dtype=float)
    N = check_budget(N)
    K = p.size
    order = np.argsort(-p, kind="stable")
    ps = p[order]
    L_same = float(np.sum(p * (1.0 - p) ** N))

    if N == 1:
        top = ps == ps[0]
        qs = np.where(top, 1.0 / top.sum(), 0.0)
        q = np.empty(K)
        q[order] = qs
        return WaterFillingResult(SimplexVec(q), int(top.sum()), float("nan"), float("nan"),
                                  1.0 - float(ps[0]), L_same, order)

    f = active_set_scores(ps, N)
    K_N = int(np.nonzero(f < 1.0)[0].max()) + 1
    c = 1.0 / (N - 1)
    qs = np.zeros(K)
    if K_N == 1:
        log_beta = -math.inf
        qs[0] = 1.0
    else:
        log_inv = -c * np.log(ps[:K_N])
        log_beta = math.log(K_N - 1) - float(logsumexp(log_inv))
        qs[:K_N] = np.maximum(0.0, -np.expm1(log_beta + log_inv))
    beta = math.exp(log_beta)
    delta = math.exp((N - 1) * log_beta)
    L_star = (K_N - 1) * delta + float(np.sum(ps[K_N:]))
    q = np.empty(K)
    q[order] = qs
    return WaterFillingResult(SimplexVec(q / q.sum()), K_N, beta, delta, L_star, L_same, order)


def memorization_kkt_residual(p, q, N):
    """Relative spread of ``N p_k (1-q_k)**(N-1)`` over active components, and
    the largest violation ``N p_k - level`` over inactive ones (<= 0 means
    optimal)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    g = N * p * (1.0 - q) ** (N - 1)
    act = q > 0
    level = g[act].mean()
    spread = float(np.max(np.abs(g[act] - level)) / level)
    inactive = float(np.max(N * p[~act] - level)) if np.any(~act) else -math.inf
    return spread, inactive / level


@dataclass(frozen=True)
class ScalingFit:
    slope_same: float
    slope_star: float
    in_regime: bool
    N_grid: tuple
    L_same: tuple
    L_star: tuple

    def __iter__(self):
        return iter((self.slope_same, self.slope_star))


def zipf(K, alpha):
    w = np.arange(1, K + 1, dtype=float) ** (-alpha)
    return w / w.sum()


def _log_losses(p, N, res):
    # log-space so that tiny losses at fixed small K do not underflow
    with np.errstate(divide="ignore"):
        log_same = float(logsumexp(np.log(p) + N * np.log1p(-p)))
        ps = p[res.sort_permutation]
        tail = float(np.sum(ps[res.K_N:]))
        terms = [math.log(tail)] if tail > 0 else []
        if res.K_N > 1 and N > 1:
            terms.append(math.log(res.K_N - 1) + (N - 1) * math.log(res.beta_N))
    log_star = float(logsumexp(terms)) if terms else -math.inf
    return log_same, log_star


def scaling_exponents(alpha, N_grid, c=4.0, K=None):
    """Log-log slopes of L_same and L* against N for Zipf-distributed tests.

    ``p_k`` is proportional to ``k**-alpha`` with ``K = round(c * N)`` unless a
    fixed ``K`` is given. A fixed K, or alpha <= 1, is outside the
    regime in which the rates are known and ``in_regime`` is False.
    """
    N_grid = [check_budget(n) for n in N_grid]
    if len(N_grid) < 4 or len(set(N_grid)) < 4:
        raise ValueError("need at least 4 distinct budgets")
    if any(b <= a for a, b in zip(N_grid, N_grid[1:])):
        raise ValueError("N_grid must be ascending")
    same, star, log_same, log_star = [], [], [], []
    for N in N_grid:
        k = K if K is not None else max(2, int(round(c * N)))
        p = zipf(k, alpha)
        res = water_fill(p, N)
        same.append(res.L_same)
        star.append(res.L_star)
        ls, lt = _log_losses(p, N, res)
        log_same.append(ls)
        log_star.append(lt)
    x = np.log(N_grid)
    slope_same = float(np.polyfit(x, log_same, 1)[0])
    slope_star = float(np.polyfit(x, log_star, 1)[0])
    return ScalingFit(slope_same, slope_star, K is None and alpha > 1,
                      tuple(N_grid), tuple(same), tuple(star))
