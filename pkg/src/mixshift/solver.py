"""Model-agnostic minimisation over the simplex and sample-complexity search."""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb, logsumexp

from ._parallel import ordered_map
from ._validation import check_budget, check_positive
from .core import SimplexVec, mixture_loss

GRID_MAX_K = 4
SNAP_TOL = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 5000
    tol: float = 1e-7
    grid_resolution: float = 0.02
    step_rule: str = "backtracking"
    fd_step: float = 1e-6
    step_size: float = 1.0

    def __post_init__(self):
        check_budget(self.max_iters, "max_iters")
        check_positive(self.tol, "tol")
        if not 0 < self.grid_resolution <= 0.5:
            raise ValueError("grid_resolution must lie in (0, 0.5]")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass
class SimplexMinimum:
    q: SimplexVec
    value: float
    converged: bool
    residual: float
    iterations: int
    source: str
    candidates: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.q, self.value))


def simplex_grid(K, resolution):
    """All points of the simplex whose coordinates are multiples of
    ``1/m``, ``m = round(1/resolution)`` (stars and bars)."""
    m = max(1, int(round(1.0 / resolution)))
    rows = []
    for bars in itertools.combinations(range(m + K - 1), K - 1):
        edges = np.array((-1,) + bars + (m + K - 1,))
        rows.append(np.diff(edges) - 1)
    pts = np.array(rows, dtype=float) / m
    assert pts.shape[0] == comb(m + K - 1, K - 1, exact=True)
    return pts


def _directional_gradient(f, x, fx, t):
    """Derivatives of ``f`` along ``e_i - x``; they stay inside the simplex
    for steps in ``[-x_i/(1-x_i) ... 1]``. Central where both sides are
    feasible, forward otherwise."""
    K = x.size
    D = np.empty(K)
    for i in range(K):
        d = -x.copy()
        d[i] += 1.0
        plus = f(x + t * d)
        if x[i] >= t / (1.0 + t) and x[i] < 1.0:
            minus = x - t * d
            minus[i] = max(minus[i], 0.0)
            D[i] = (plus - f(minus)) / (2.0 * t)
        else:
            D[i] = (plus - fx) / t
    return D


def _mirror_descent(f, K, cfg):
    logx = np.full(K, -math.log(K))
    x = np.exp(logx)
    fx = f(x)
    eta = cfg.step_size
    residual = math.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        D = _directional_gradient(f, x, fx, cfg.fd_step)
        residual = max(0.0, -float(D.min()))
        scale = max(abs(fx), 1e-300)
        if residual <= cfg.tol * scale:
            return x, fx, True, residual / scale, it
        # normalise the exponent so eta is dimensionless
        g = D / (np.max(np.abs(D)) or 1.0)
        while True:
            cand_log = logx - eta * g
            cand_log -= logsumexp(cand_log)
            cand = np.exp(cand_log)
            fc = f(cand)
            if cfg.step_rule == "fixed" or fc < fx:
                break
            eta *= 0.5
            if eta < 1e-30:
                return x, fx, False, residual / scale, it
        if cfg.step_rule == "backtracking":
            eta = min(eta * 2.0, 1e6)
        logx, x, fx = cand_log, cand, fc
    return x, fx, False, residual / max(abs(fx), 1e-300), it


def minimize_simplex(objective, K, cfg=None, batch_objective=None):
    """Minimise ``objective(q)`` over the K-simplex.

    Entropic mirror descent from the uniform point with an adaptive step,
    using finite-difference directional derivatives and the Frank-Wolfe gap
    (relative to the objective value) as the convergence residual. Near-zero
    coordinates are snapped to zero at the end. The uniform point and all
    vertices are always evaluated, and for ``K <= 4`` an exhaustive grid at
    ``cfg.grid_resolution`` is searched too; the best candidate wins.
    ``batch_objective`` may evaluate the grid rows at once.
    """
    cfg = cfg or SolverConfig()
    K = check_budget(K, "K")

    def f(x):
        return float(objective(SimplexVec(np.clip(x, 0.0, None) / np.clip(x, 0.0, None).sum())))

    if K == 1:
        q = SimplexVec([1.0])
        return SimplexMinimum(q, f(np.ones(1)), True, 0.0, 0, "trivial")

    x, fx, converged, residual, iters = _mirror_descent(f, K, cfg)
    cands = {"descent": (x, fx)}
    snapped = np.where(x < SNAP_TOL, 0.0, x)
    if snapped.sum() > 0 and np.any(snapped != x):
        snapped = snapped / snapped.sum()
        cands["snapped"] = (snapped, f(snapped))
    uni = np.full(K, 1.0 / K)
    cands["uniform"] = (uni, f(uni))
    for i in range(K):
        e = np.zeros(K)
        e[i] = 1.0
        cands[f"vertex{i}"] = (e, f(e))
    if K <= GRID_MAX_K:
        pts = simplex_grid(K, cfg.grid_resolution)
        if batch_objective is not None:
            vals = np.asarray(batch_objective(pts), dtype=float)
        else:
            chunks = np.array_split(np.arange(pts.shape[0]), 8)
            vals = np.concatenate(ordered_map(
                lambda idx: np.array([f(pts[j]) for j in idx]), chunks))
        j = int(np.argmin(vals))
        cands["grid"] = (pts[j], float(vals[j]))

    best = min(cands, key=lambda k: cands[k][1])
    q, value = cands[best]
    return SimplexMinimum(
        SimplexVec(q), float(value), converged, residual, iters, best,
        {k: v[1] for k, v in cands.items()},
    )


# -- sample complexity -------------------------------------------------------


class MonotonicityError(ValueError):
    """The loss was observed to increase with the budget."""


def sample_complexity(loss_at, epsilon, N_max=10**7, rtol=1e-9):
    """Smallest N with ``loss_at(N) <= epsilon``, or None if ``N_max`` does
    not suffice.

    Brackets by doubling, then bisects. Every evaluated point is checked for
    monotonicity (within ``rtol``) and minimality is verified at the end.
    """
    epsilon = check_positive(epsilon, "epsilon")
    N_max = check_budget(N_max, "N_max")
    seen = {}

    def loss(N):
        if N not in seen:
            seen[N] = float(loss_at(N))
        return seen[N]

    def check_monotone():
        ns = sorted(seen)
        vals = [seen[n] for n in ns]
        for (n0, a), (n1, b) in zip(zip(ns, vals), zip(ns[1:], vals[1:])):
            if b > a + rtol * max(abs(a), 1e-300):
                raise MonotonicityError(f"loss rises from {a!r} at N={n0} to {b!r} at N={n1}")

    if loss(1) <= epsilon:
        return 1
    lo, hi = 1, 2
    while hi < N_max and loss(hi) > epsilon:
        lo, hi = hi, min(2 * hi, N_max)
    if loss(hi) > epsilon:
        check_monotone()
        return None
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if loss(mid) <= epsilon:
            hi = mid
        else:
            lo = mid
    check_monotone()
    if not (loss(hi) <= epsilon < loss(hi - 1)):
        raise MonotonicityError(f"minimality check failed at N={hi}")
    return hi


@dataclass(frozen=True)
class SampleComplexityRatio:
    ratio: float
    N_star: int
    N_same: int
    loss_kind: str
    fixed_q: SimplexVec = None

    def __float__(self):
        return self.ratio


def _loss_family(problem, fixed_q):
    """Return ``(same(N), star(N), kind)`` loss evaluators for the problem."""
    kinds = problem.kinds()
    p = problem.p
    if kinds == {"powerlaw"}:
        from .powerlaw import approximate_loss, solve_lambda

        def same(N):
            return approximate_loss(problem.with_budget(N), p)

        def star(N):
            pr = problem.with_budget(N)
            q = fixed_q if fixed_q is not None else solve_lambda(pr)[0]
            return approximate_loss(pr, q)

        return same, star, "approximate"
    if kinds == {"memorization"}:
        from .memorization import l_same_memorization, water_fill

        def same(N):
            return l_same_memorization(p, N)

        def star(N):
            if fixed_q is not None:
                return mixture_loss(problem.with_budget(N), fixed_q)
            return water_fill(p, N).L_star

        return same, star, "exact"

    def same(N):
        return mixture_loss(problem.with_budget(N), p)

    def star(N):
        pr = problem.with_budget(N)
        if fixed_q is not None:
            return mixture_loss(pr, fixed_q)
        return minimize_simplex(lambda q: mixture_loss(pr, q), problem.K).value

    return same, star, "exact-numeric"


def optimal_mix(problem):
    """Optimal q for ``problem`` using the closed form where one exists."""
    kinds = problem.kinds()
    if kinds == {"powerlaw"}:
        from .powerlaw import solve_lambda

        return solve_lambda(problem)[0]
    if kinds == {"memorization"}:
        from .memorization import water_fill

        return water_fill(problem.p, problem.N).q_star
    return minimize_simplex(lambda q: mixture_loss(problem, q), problem.K).q


def sample_complexity_ratio(problem, epsilon, N_max=10**7, fixed_q=False):
    """``N_eps`` with the optimal mix over ``N_eps`` with the matched mix.

    By default the optimal mix is recomputed at every probed budget. With
    ``fixed_q`` the mix optimal at the matched budget is held fixed instead.
    Power-law problems are measured on the approximate loss.
    """
    same, _, kind = _loss_family(problem, None)
    N_same = sample_complexity(same, epsilon, N_max)
    if N_same is None:
        raise ValueError(f"epsilon={epsilon} not reached with q = p by N_max={N_max}")
    q_fixed = optimal_mix(problem.with_budget(N_same)) if fixed_q else None
    _, star, _ = _loss_family(problem, q_fixed)
    N_star = sample_complexity(star, epsilon, N_max)
    if N_star is None:
        raise ValueError(f"epsilon={epsilon} not reached with the optimal mix by N_max={N_max}")
    return SampleComplexityRatio(N_star / N_same, N_star, N_same, kind, q_fixed)
