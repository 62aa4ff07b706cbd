"""scikit-learn style wrappers around the mixing solvers.

``fit(X)`` takes test proportions (rows are averaged, so a one-hot matrix of
test-example memberships also works) and stores the optimal training mix.
``transform(X)`` maps each row of test proportions to its optimal training
mix. ``predict(Q)`` gives the expected test loss, on the fitted test mix, of
training on each row of ``Q``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_simplex
from .core import Memorization, MixingSolution, MixtureProblem, PowerLaw, Transfer, mixture_loss
from .memorization import water_fill
from .powerlaw import approximate_loss, solve_powerlaw
from .solver import SolverConfig, minimize_simplex
from .transfer import solve_transfer


def _rows(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return check_array(X, ensure_min_features=1)


def _broadcast(value, K):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(K, float(arr))
    if arr.shape != (K,):
        raise ValueError(f"parameter has {arr.size} entries, expected {K}")
    return arr


class _MixerBase(TransformerMixin, BaseEstimator):
    def _problem(self, p):
        raise NotImplementedError

    def _solve(self, problem):
        """Return a MixingSolution for ``problem``."""
        raise NotImplementedError

    def _loss(self, problem, q):
        return mixture_loss(problem, q)

    def fit(self, X, y=None):
        X = _rows(X)
        self.n_features_in_ = X.shape[1]
        p = check_simplex(X.mean(axis=0), "test proportions")
        self.problem_ = self._problem(p)
        self.solution_ = self._solve(self.problem_)
        self.q_star_ = np.asarray(self.solution_.q_star).copy()
        self.L_star_ = self.solution_.L_star
        self.L_same_ = self.solution_.L_same
        self.loss_ratio_ = self.solution_.loss_ratio
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = _rows(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return np.vstack([np.asarray(self._solve(self._problem(check_simplex(row))).q_star)
                          for row in X])

    def predict(self, X):
        check_is_fitted(self)
        Q = _rows(X)
        if Q.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {Q.shape[1]} columns, expected {self.n_features_in_}")
        return np.array([self._loss(self.problem_, check_simplex(q)) for q in Q])


class PowerLawMixer(_MixerBase):
    """Optimal mix for power-law curves ``A / (n**alpha + B)``.

    ``method`` is ``"lagrange"`` (exact optimum of the approximate loss) or
    ``"closed-form"`` (large-N leading term). Losses reported on the fitted
    solution are expected binomial losses; ``predict`` uses the approximate
    loss when ``approximate=True``.
    """

    def __init__(self, A=1.0, B=1.0, alpha=1.0, N=1000, method="lagrange", approximate=False):
        self.A = A
        self.B = B
        self.alpha = alpha
        self.N = N
        self.method = method
        self.approximate = approximate

    def _problem(self, p):
        K = p.size
        A, B, al = (_broadcast(v, K) for v in (self.A, self.B, self.alpha))
        return MixtureProblem(p, [PowerLaw(a, b, c) for a, b, c in zip(A, B, al)], self.N)

    def _solve(self, problem):
        if self.method not in ("lagrange", "closed-form"):
            raise ValueError(f"unknown method {self.method!r}")
        sol = solve_powerlaw(problem)
        out = sol.to_mixing_solution(problem, self.method, exact_loss=not self.approximate)
        self.lambda_ = sol.lam
        return out

    def _loss(self, problem, q):
        if self.approximate:
            return approximate_loss(problem, q)
        return mixture_loss(problem, q)


class WaterFillingMixer(_MixerBase):
    """Optimal mix when each component is learned from one sample."""

    def __init__(self, N=10):
        self.N = N

    def _problem(self, p):
        return MixtureProblem(p, [Memorization()] * p.size, self.N)

    def _solve(self, problem):
        res = water_fill(problem.p, problem.N)
        self.K_N_ = res.K_N
        self.beta_N_ = res.beta_N
        return res.to_mixing_solution()


class TransferMixer(_MixerBase):
    """Optimal mix for shared-plus-specific curves via the power-law reduction."""

    def __init__(self, A0=1.0, B0=1.0, A1=1.0, B1=1.0, alpha=1.0, N=1000):
        self.A0 = A0
        self.B0 = B0
        self.A1 = A1
        self.B1 = B1
        self.alpha = alpha
        self.N = N

    def _problem(self, p):
        K = p.size
        cols = [_broadcast(v, K) for v in (self.A0, self.B0, self.A1, self.B1, self.alpha)]
        return MixtureProblem(p, [Transfer(*row) for row in zip(*cols)], self.N)

    def _solve(self, problem):
        sol, dec = solve_transfer(problem)
        self.transfer_offset_ = dec.transfer_offset
        return sol


class NumericMixer(_MixerBase):
    """Optimal mix for arbitrary curves by direct minimisation of the
    expected loss."""

    def __init__(self, curves=(), N=1000, grid_resolution=0.02, max_iters=5000, tol=1e-7):
        self.curves = curves
        self.N = N
        self.grid_resolution = grid_resolution
        self.max_iters = max_iters
        self.tol = tol

    def _problem(self, p):
        return MixtureProblem(p, list(self.curves), self.N)

    def _solve(self, problem):
        cfg = SolverConfig(self.max_iters, self.tol, self.grid_resolution)
        res = minimize_simplex(lambda q: mixture_loss(problem, q), problem.K, cfg)
        self.converged_ = res.converged
        diag = {"residual": res.residual, "iterations": res.iterations,
                "converged": res.converged, "source": res.source}
        return MixingSolution(res.q, res.value, mixture_loss(problem, problem.p), "numeric", diag)
