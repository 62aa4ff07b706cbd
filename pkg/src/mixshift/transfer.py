"""Shared-plus-specific learning curves.

Every sample lowers a shared error term that depends only on the total budget,
so that term adds the same offset to the loss of every mix. The optimal mix is
therefore the optimal mix of the component-specific power laws alone.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_budget
from .core import MixtureProblem, PowerLaw, Transfer, mixture_loss


def transfer_component_error(curve, n_k, N_total):
    """Error on a component after ``n_k`` own samples out of ``N_total``."""
    if not isinstance(curve, Transfer):
        raise TypeError("expected a Transfer curve")
    N_total = check_budget(N_total, "N_total", minimum=0)
    n_k = check_budget(n_k, "n_k", minimum=0)
    if n_k > N_total:
        raise ValueError(f"n_k={n_k} exceeds N_total={N_total}")
    return curve.shared_error(N_total) + float(curve.specific.error(n_k))


@dataclass(frozen=True)
class TransferDecomposition:
    transfer_offset: float
    reduced_problem: MixtureProblem

    def loss(self, q, **kwargs):
        """Transfer loss at ``q``: reduced loss plus the constant offset."""
        return mixture_loss(self.reduced_problem, q, **kwargs) + self.transfer_offset


def transfer_offset(problem):
    """``sum_i p_i A0_i / (N**alpha_i + B0_i)``, independent of the training mix."""
    return float(sum(p * c.shared_error(problem.N) for p, c in zip(problem.p, problem.curves)))


def reduce_to_powerlaw(problem):
    bad = [i for i, c in enumerate(problem.curves) if not isinstance(c, Transfer)]
    if bad:
        raise TypeError(f"components {bad} are not transfer curves")
    reduced = MixtureProblem(
        problem.p, [PowerLaw(c.A1, c.B1, c.alpha) for c in problem.curves], problem.N
    )
    return TransferDecomposition(transfer_offset(problem), reduced)


def solve_transfer(problem):
    """Optimal mix for a transfer problem through its power-law reduction."""
    from .powerlaw import solve_powerlaw

    dec = reduce_to_powerlaw(problem)
    reduced = solve_powerlaw(dec.reduced_problem).to_mixing_solution(dec.reduced_problem)
    sol = reduced.__class__(
        q_star=reduced.q_star,
        L_star=reduced.L_star + dec.transfer_offset,
        L_same=reduced.L_same + dec.transfer_offset,
        method=reduced.method,
        diagnostics=dict(reduced.diagnostics, transfer_offset=dec.transfer_offset,
                         reduced_solution=reduced.to_dict()),
    )
    return sol, dec


def offset_spread(problem, qs):
    """Range of ``transfer loss - reduced loss`` over the rows of ``qs``; zero
    up to rounding when the decomposition holds."""
    dec = reduce_to_powerlaw(problem)
    diffs = [mixture_loss(problem, q) - mixture_loss(dec.reduced_problem, q) for q in qs]
    return float(np.ptp(diffs))
