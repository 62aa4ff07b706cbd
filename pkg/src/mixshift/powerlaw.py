"""Optimal mixing for power-law error curves.

Two routes are provided: the leading-order closed forms, valid for large
budgets, and an exact minimiser of the approximate loss
``sum_i p_i A_i / ((q_i N)**alpha_i + B_i)`` found by bisection on the
Lagrange multiplier.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_budget, check_probability
from .core import (
    MixingSolution,
    MixtureProblem,
    PowerLaw,
    SimplexVec,
    as_simplex,
    mixture_loss,
)

ALPHA_TIE_TOL = 1e-12
LOG_Q_FLOOR = -740.0


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver exhausts its budget."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def powerlaw_params(problem):
    """Return ``(p, A, B, alpha)`` arrays; every curve must be a PowerLaw."""
    bad = [i for i, c in enumerate(problem.curves) if not isinstance(c, PowerLaw)]
    if bad:
        raise TypeError(f"components {bad} are not power-law curves")
    A = np.array([c.A for c in problem.curves])
    B = np.array([c.B for c in problem.curves])
    alpha = np.array([c.alpha for c in problem.curves])
    return np.asarray(problem.p, dtype=float), A, B, alpha


def leading_group(alpha):
    """Mask of components sharing the smallest exponent, and that exponent."""
    a1 = alpha.min()
    return alpha <= a1 + ALPHA_TIE_TOL, a1


def _leading_terms(p, A, alpha):
    """``r_i = (alpha_i p_i A_i / C)**(1/(alpha_i+1))`` and the constant C."""
    lead, a1 = leading_group(alpha)
    if np.any(p[lead] == 0):
        raise ValueError(
            "a component with the smallest exponent has zero test weight; "
            "the closed form degenerates, use the numeric solver"
        )
    w = alpha * p * A
    C = np.sum(w[lead] ** (1.0 / (a1 + 1.0))) ** (a1 + 1.0)
    r = (w / C) ** (1.0 / (alpha + 1.0))
    return r, C, lead, a1


def asymptotic_q_star(problem):
    """Leading-order optimal training mix for large N."""
    p, A, _, alpha = powerlaw_params(problem)
    r, _, _, a1 = _leading_terms(p, A, alpha)
    q = problem.N ** (-(alpha - a1) / (alpha + 1.0)) * r
    return SimplexVec(q / q.sum())


def asymptotic_losses(problem):
    """Leading-order ``(L_same, L_star)``; only the slowest-decaying group enters."""
    p, A, _, alpha = powerlaw_params(problem)
    lead, a1 = leading_group(alpha)
    pl, Al, al = p[lead], A[lead], alpha[lead]
    scale = float(problem.N) ** (-a1)
    L_same = scale * np.sum(pl ** (1.0 - a1) * Al)
    s1 = np.sum((al * pl * Al) ** (1.0 / (al + 1.0)))
    s2 = np.sum((pl * Al) ** (1.0 / (al + 1.0)) / al ** (al / (al + 1.0)))
    L_star = scale * s1**a1 * s2
    return float(L_same), float(L_star)


def approximate_loss(problem, q):
    """``sum_i p_i A_i / ((q_i N)**alpha_i + B_i)``, the loss at the mean counts."""
    p, A, B, alpha = powerlaw_params(problem)
    q = np.asarray(q, dtype=float)
    return float(np.sum(p * A / ((q * problem.N) ** alpha + B)))


def _log_stationarity(log_q, logw, alpha, B, N):
    # log of p A alpha N^alpha q^(alpha-1) / ((Nq)^alpha + B)^2
    log_denom = np.logaddexp(alpha * (math.log(N) + log_q), np.log(B))
    return logw + alpha * math.log(N) + (alpha - 1.0) * log_q - 2.0 * log_denom


def stationarity_values(problem, q):
    """Per-component derivative magnitudes of the approximate loss at ``q``."""
    p, A, B, alpha = powerlaw_params(problem)
    q = np.asarray(q, dtype=float)
    N = problem.N
    with np.errstate(divide="ignore"):
        return p * A * alpha * N**alpha * q ** (alpha - 1.0) / ((N * q) ** alpha + B) ** 2


def _branch_floor(alpha, B, N):
    """Lower end (log q) of the range where stationarity decreases in q.

    For alpha <= 1 it decreases everywhere. For alpha > 1 it rises up to
    ``((alpha-1) B / (alpha+1))**(1/alpha) / N`` and falls after.
    """
    floor = np.full(alpha.shape, LOG_Q_FLOOR)
    hi = alpha > 1.0
    if np.any(hi):
        peak = np.log((alpha[hi] - 1.0) * B[hi] / (alpha[hi] + 1.0)) / alpha[hi] - math.log(N)
        floor[hi] = np.clip(peak, LOG_Q_FLOOR, 0.0)
    return floor


def _q_of_lambda(log_lam, logw, alpha, B, N, floor, iters=120):
    """Mass each component takes at multiplier ``exp(log_lam)``."""
    phi_top = _log_stationarity(np.zeros_like(alpha), logw, alpha, B, N)
    phi_floor = _log_stationarity(floor, logw, alpha, B, N)
    lo, hi = floor.copy(), np.zeros_like(alpha)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = _log_stationarity(mid, logw, alpha, B, N) >= log_lam
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    q = np.exp(0.5 * (lo + hi))
    q = np.where(phi_top >= log_lam, 1.0, q)
    q = np.where(phi_floor < log_lam, 0.0, q)
    return q


def solve_lambda(problem, tol=1e-12, max_iter=400, return_info=False):
    """Exact minimiser of the approximate loss via the Lagrange multiplier.

    Each component's stationarity condition is solved by bisection in
    ``log q`` for a candidate multiplier, and the multiplier is bisected in
    log space until the masses sum to one within ``tol``. Components with zero
    test weight receive no mass. Returns ``(q, lam)``, plus a diagnostics dict
    when ``return_info`` is set.
    """
    p, A, B, alpha = powerlaw_params(problem)
    N = problem.N
    K = p.size
    active = p > 0
    q = np.zeros(K)

    if active.sum() == 1:
        q[active] = 1.0
        lam = float(stationarity_values(problem, q)[active][0])
        info = {"iterations": 0, "sum_residual": 0.0, "beyond_theory": bool(np.any(alpha > 1))}
        return (SimplexVec(q), lam, info) if return_info else (SimplexVec(q), lam)

    logw = np.log(p[active] * A[active] * alpha[active])
    a, b = alpha[active], B[active]
    floor = _branch_floor(a, b, N)

    def mass(log_lam):
        return _q_of_lambda(log_lam, logw, a, b, N, floor)

    lam_lo = float(np.min(_log_stationarity(np.zeros_like(a), logw, a, b, N)))
    lam_hi = float(np.max(_log_stationarity(np.full_like(a, -math.log(K * N)), logw, a, b, N)))
    step = 1.0
    while mass(lam_lo).sum() < 1.0:
        lam_lo -= step
        step *= 2.0
    step = 1.0
    while mass(lam_hi).sum() > 1.0:
        lam_hi += step
        step *= 2.0

    it = 0
    log_lam = lam_lo
    qa = mass(lam_lo)
    resid = qa.sum() - 1.0
    while abs(resid) > tol and it < max_iter:
        mid = 0.5 * (lam_lo + lam_hi)
        if mid in (lam_lo, lam_hi):
            break
        log_lam = mid
        qa = mass(mid)
        resid = qa.sum() - 1.0
        if resid > 0:
            lam_lo = mid
        else:
            lam_hi = mid
        it += 1

    info = {
        "iterations": it,
        "sum_residual": float(resid),
        "beyond_theory": bool(np.any(alpha > 1)),
    }
    if abs(resid) > 1e-9 and not np.any(alpha > 1):
        raise ConvergenceError(
            f"multiplier bisection stalled with |sum q - 1| = {abs(resid):.3g}", info
        )
    q[active] = qa
    q = q / q.sum()
    lam = math.exp(log_lam)
    return (SimplexVec(q), lam, info) if return_info else (SimplexVec(q), lam)


def kkt_residual(problem, q, lam):
    """Largest relative gap ``|phi_i - lam| / lam`` over the support of ``q``."""
    phi = stationarity_values(problem, q)
    support = (np.asarray(q) > 0) & (np.asarray(problem.p) > 0)
    return float(np.max(np.abs(phi[support] - lam)) / lam)


def n0_thresholds(problem):
    """Budgets above which the large-N closed forms are guaranteed.

    Four sufficient conditions are reported with their thresholds and whether
    the current N clears them. They are diagnostics; nothing is enforced.
    """
    p, A, B, alpha = powerlaw_params(problem)
    N = problem.N
    out = {}
    try:
        r, _, lead, a1 = _leading_terms(p, A, alpha)
    except ValueError:
        return {"available": False}
    with np.errstate(divide="ignore", over="ignore"):
        # first: mass left for the leading component stays above half its share
        if lead.all():
            t1 = 0.0
        else:
            a_next = alpha[~lead].min()
            base = 2.0 * np.sum(r[~lead]) / r[np.argmax(lead)]
            t1 = float(base ** ((a_next + 1.0) / (a_next - a1)))
        # second: the balanced point beats any mix that drops a component
        X = float(np.sum(np.where(p > 0, p * A * r ** (-alpha), 0.0)))
        floor = float(np.min(np.minimum(1.0, A / B)))
        t2 = float(2.0 * (X / floor) ** (1.0 / a1))
        # third: the offsets B_i are negligible at the optimum
        Cp = 2.0**a1 * X
        ratio = np.where(p > 0, 2.0 * B * Cp / (p * A), 0.0)
        t3 = float(np.max(ratio) ** (1.0 / a1))
        t4 = float(np.max(B ** (1.0 / alpha)))
    for name, t in (("first", t1), ("second", t2), ("third", t3), ("fourth", t4)):
        out[name] = {"threshold": t, "satisfied": bool(N > t)}
    out["available"] = True
    out["all_satisfied"] = all(out[n]["satisfied"] for n in ("first", "second", "third", "fourth"))
    return out


def majority_minority_ratio(p_major, K, alpha):
    """One majority component of weight ``p_major`` and ``K-1`` equal minorities.

    Returns the optimal training mix and the ratio of budgets needed to reach
    the same loss with the optimal mix versus training on ``p``. The known
    upper bound on that ratio is attached as ``N_ratio_bound``.
    """
    p = check_probability(p_major, "p_major", open_interval=True)
    K = check_budget(K, "K", minimum=2)
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    e = 1.0 / (alpha + 1.0)
    minor = (1.0 - p) / (K - 1)
    w = np.full(K, minor**e)
    w[0] = p**e
    q = SimplexVec(w / w.sum())
    num = (p**e + (K - 1) * minor**e) ** (alpha + 1.0)
    den = p ** (1.0 - alpha) + (K - 1) ** alpha * (1.0 - p) ** (1.0 - alpha)
    ratio = (num / den) ** (1.0 / alpha)
    bound = (1.0 - p) + 2.0 ** ((alpha + 1.0) / alpha) * (p / (1.0 - p)) ** e * K ** (-alpha * e)
    return MajorityMinority(q, float(ratio), float(bound))


@dataclass(frozen=True)
class MajorityMinority:
    q_star: SimplexVec
    N_ratio: float
    N_ratio_bound: float

    def __iter__(self):
        return iter((self.q_star, self.N_ratio))


@dataclass
class PowerLawSolution:
    q_star_asymptotic: SimplexVec
    q_star_numeric: SimplexVec
    L_same_leading: float
    L_star_leading: float
    lam: float
    S: int
    N0: dict = field(default_factory=dict)
    order: np.ndarray = None
    beyond_theory: bool = False
    kkt_residual: float = float("nan")

    def to_mixing_solution(self, problem, method="lagrange", exact_loss=True):
        """Wrap as a :class:`MixingSolution`.

        With ``exact_loss`` the losses are expected binomial losses of the
        chosen mix and of training on ``p``; otherwise the leading terms.
        """
        q = self.q_star_asymptotic if method == "closed-form" else self.q_star_numeric
        if exact_loss:
            L_star = mixture_loss(problem, q)
            L_same = mixture_loss(problem, problem.p)
        else:
            L_same, L_star = self.L_same_leading, self.L_star_leading
        diag = {
            "lambda": self.lam,
            "S": self.S,
            "N0": self.N0,
            "kkt_residual": self.kkt_residual,
            "beyond_theory": self.beyond_theory,
            "L_same_leading": self.L_same_leading,
            "L_star_leading": self.L_star_leading,
            "approx_loss_star": approximate_loss(problem, q),
            "approx_loss_same": approximate_loss(problem, problem.p),
        }
        return MixingSolution(q, L_star, L_same, method, diag)


def solve_powerlaw(problem):
    """Closed-form and numeric optima together with diagnostics."""
    p, A, B, alpha = powerlaw_params(problem)
    lead, _ = leading_group(alpha)
    order = np.argsort(alpha, kind="stable")
    q_num, lam = solve_lambda(problem)
    try:
        q_asym = asymptotic_q_star(problem)
        L_same, L_star = asymptotic_losses(problem)
    except ValueError:
        q_asym, L_same, L_star = q_num, float("nan"), float("nan")
    return PowerLawSolution(
        q_star_asymptotic=q_asym,
        q_star_numeric=q_num,
        L_same_leading=L_same,
        L_star_leading=L_star,
        lam=lam,
        S=int(lead.sum()),
        N0=n0_thresholds(problem),
        order=order,
        beyond_theory=bool(np.any(alpha > 1)),
        kkt_residual=kkt_residual(problem, q_num, lam),
    )


def powerlaw_problem(p, A, B, alpha, N):
    """Build a MixtureProblem of power-law curves, broadcasting scalars."""
    p = as_simplex(p)
    K = p.K
    A, B, alpha = (np.broadcast_to(np.asarray(x, dtype=float), (K,)) for x in (A, B, alpha))
    curves = [PowerLaw(a, b, al) for a, b, al in zip(A, B, alpha)]
    return MixtureProblem(p, curves, N)
