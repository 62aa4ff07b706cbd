"""Domain types and mixture-loss assembly.

A training budget ``N`` may be read either as a number of examples or as a
number of optimisation steps; every routine in the package treats the two
readings identically.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ._validation import (
    check_budget,
    check_positive,
    check_probability,
    check_same_length,
    check_simplex,
)

B_FLOOR = 1e-12
A0_FLOOR = 1e-15
EXACT_BINOMIAL_MAX_N = 10_000


@dataclass(frozen=True)
class SimplexVec:
    """A probability vector over ``K`` mixture components (immutable)."""

    entries: np.ndarray

    def __post_init__(self):
        arr = check_simplex(self.entries, name="simplex vector").copy()
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def K(self):
        return self.entries.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)

    def __len__(self):
        return self.entries.size

    def __getitem__(self, item):
        return self.entries[item]

    def __iter__(self):
        return iter(self.entries.tolist())

    def __eq__(self, other):
        if not isinstance(other, SimplexVec):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())

    def tolist(self):
        return self.entries.tolist()


def as_simplex(x):
    return x if isinstance(x, SimplexVec) else SimplexVec(x)


# -- learning curves ---------------------------------------------------------


@dataclass(frozen=True)
class PowerLaw:
    """``e(n) = A / (n**alpha + B)``.

    ``B`` values below ``1e-12`` are clamped up to it. Exponents above 1 are
    accepted but lie outside the range where the asymptotic theory holds;
    ``beyond_theory`` reports this.
    """

    A: float
    B: float
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "A", check_positive(self.A, "A"))
        B = check_positive(self.B, "B", strict=False)
        object.__setattr__(self, "B", max(B, B_FLOOR))
        object.__setattr__(self, "alpha", check_positive(self.alpha, "alpha"))

    kind = "powerlaw"

    @property
    def beyond_theory(self):
        return self.alpha > 1.0

    def error(self, n):
        n = np.asarray(n, dtype=float)
        return self.A / (n**self.alpha + self.B)

    def to_dict(self):
        return {"kind": "powerlaw", "A": self.A, "B": self.B, "alpha": self.alpha}


@dataclass(frozen=True)
class Memorization:
    """Error 1 until the component has been seen once, then 0."""

    kind = "memorization"

    def error(self, n):
        return (np.asarray(n) == 0).astype(float)

    def to_dict(self):
        return {"kind": "memorization"}


@dataclass(frozen=True)
class Transfer:
    """Shared-plus-specific learning curve.

    The error on a component is ``A0 / (n_total**alpha + B0)`` (driven by
    every sample) plus ``A1 / (n_k**alpha + B1)`` (driven by its own
    samples). It cannot be evaluated from ``n_k`` alone; use
    :func:`mixshift.transfer.transfer_component_error`.
    """

    A0: float
    B0: float
    A1: float
    B1: float
    alpha: float

    kind = "transfer"

    def __post_init__(self):
        A0 = check_positive(self.A0, "A0", strict=False)
        object.__setattr__(self, "A0", max(A0, A0_FLOOR))
        B0 = check_positive(self.B0, "B0", strict=False)
        object.__setattr__(self, "B0", max(B0, B_FLOOR))
        object.__setattr__(self, "A1", check_positive(self.A1, "A1"))
        B1 = check_positive(self.B1, "B1", strict=False)
        object.__setattr__(self, "B1", max(B1, B_FLOOR))
        object.__setattr__(self, "alpha", check_positive(self.alpha, "alpha"))

    @property
    def specific(self):
        return PowerLaw(self.A1, self.B1, self.alpha)

    def shared_error(self, n_total):
        return self.A0 / (float(n_total) ** self.alpha + self.B0)

    def to_dict(self):
        return {
            "kind": "transfer",
            "A0": self.A0,
            "B0": self.B0,
            "A1": self.A1,
            "B1": self.B1,
            "alpha": self.alpha,
        }


@dataclass(frozen=True)
class Tabulated:
    """Error values tabulated at a set of sample counts.

    Between tabulated counts the value of the nearest count below is used,
    which preserves monotonicity. Outside the table, ``extrapolation="clamp"``
    uses the first/last value and ``"strict"`` raises.
    """

    values: dict
    extrapolation: str = "clamp"

    kind = "tabulated"

    def __post_init__(self):
        if not self.values:
            raise ValueError("tabulated curve needs at least one value")
        if self.extrapolation not in ("clamp", "strict"):
            raise ValueError(f"unknown extrapolation rule {self.extrapolation!r}")
        items = sorted((int(k), float(v)) for k, v in self.values.items())
        ns = np.array([k for k, _ in items], dtype=np.int64)
        vs = np.array([v for _, v in items])
        if ns[0] < 0:
            raise ValueError("tabulated sample counts must be non-negative")
        if np.any((vs < 0) | (vs > 1)):
            raise ValueError("tabulated errors must lie in [0, 1]")
        if np.any(np.diff(vs) > 0):
            raise ValueError("tabulated errors must be non-increasing in n")
        object.__setattr__(self, "values", dict(items))
        object.__setattr__(self, "_ns", ns)
        object.__setattr__(self, "_vs", vs)

    def error(self, n):
        n = np.asarray(n)
        if self.extrapolation == "strict" and (
            np.any(n < self._ns[0]) or np.any(n > self._ns[-1])
        ):
            raise ValueError(
                f"sample count outside tabulated range [{self._ns[0]}, {self._ns[-1]}]"
            )
        idx = np.searchsorted(self._ns, n, side="right") - 1
        return self._vs[np.clip(idx, 0, self._ns.size - 1)]

    def to_dict(self):
        return {
            "kind": "tabulated",
            "values": {str(k): v for k, v in self.values.items()},
            "extrapolation": self.extrapolation,
        }


LearningCurve = Union[PowerLaw, Memorization, Transfer, Tabulated]

_CURVE_FIELDS = {
    "powerlaw": (PowerLaw, ("A", "B", "alpha")),
    "memorization": (Memorization, ()),
    "transfer": (Transfer, ("A0", "B0", "A1", "B1", "alpha")),
    "tabulated": (Tabulated, ("values",)),
}


def curve_from_dict(d):
    if not isinstance(d, dict) or "kind" not in d:
        raise ValueError("curve must be an object with a 'kind' field")
    kind = d["kind"]
    if kind not in _CURVE_FIELDS:
        raise ValueError(f"unknown curve kind {kind!r}")
    cls, required = _CURVE_FIELDS[kind]
    missing = [k for k in required if k not in d]
    if missing:
        raise ValueError(f"{kind} curve is missing field(s) {missing}")
    kwargs = {k: d[k] for k in required}
    if kind == "tabulated" and "extrapolation" in d:
        kwargs["extrapolation"] = d["extrapolation"]
    return cls(**kwargs)


# -- problems and solutions --------------------------------------------------


@dataclass(frozen=True)
class MixtureProblem:
    """Test ratios ``p``, one learning curve per component, budget ``N``."""

    p: SimplexVec
    curves: tuple
    N: int

    def __post_init__(self):
        object.__setattr__(self, "p", as_simplex(self.p))
        object.__setattr__(self, "curves", tuple(self.curves))
        object.__setattr__(self, "N", check_budget(self.N))
        check_same_length(self.curves, self.p, "curves", "p")

    @property
    def K(self):
        return self.p.K

    def kinds(self):
        return {c.kind for c in self.curves}

    def with_budget(self, N):
        return MixtureProblem(self.p, self.curves, N)

    def to_dict(self):
        return {
            "p": self.p.tolist(),
            "N": self.N,
            "curves": [c.to_dict() for c in self.curves],
        }

    @classmethod
    def from_dict(cls, d):
        for key in ("p", "N", "curves"):
            if key not in d:
                raise ValueError(f"problem is missing field {key!r}")
        curves = [curve_from_dict(c) for c in d["curves"]]
        return cls(p=d["p"], curves=curves, N=d["N"])

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class MixingSolution:
    q_star: SimplexVec
    L_star: float
    L_same: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.q_star = as_simplex(self.q_star)

    @property
    def loss_ratio(self):
        if self.L_same > 0:
            return self.L_star / self.L_same
        return 1.0

    def to_dict(self):
        return {
            "q_star": self.q_star.tolist(),
            "L_star": float(self.L_star),
            "L_same": float(self.L_same),
            "loss_ratio": float(self.loss_ratio),
            "method": self.method,
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            q_star=d["q_star"],
            L_star=float(d["L_star"]),
            L_same=float(d["L_same"]),
            method=d["method"],
            diagnostics=dict(d.get("diagnostics", {})),
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, SimplexVec):
        return obj.tolist()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


# -- evaluation --------------------------------------------------------------


def eval_curve(curve, n):
    """Error of ``curve`` after ``n`` samples from its component."""
    if isinstance(curve, Transfer):
        raise TypeError(
            "transfer curves depend on the total budget as well as n_k; "
            "use mixshift.transfer.transfer_component_error"
        )
    if np.any(np.asarray(n) < 0):
        raise ValueError("sample count must be non-negative")
    out = curve.error(n)
    return float(out) if np.ndim(out) == 0 else out


def binomial_pmf(N, q):
    """Binomial(N, q) probabilities for n = 0..N, via a log-space recurrence."""
    if q <= 0.0:
        pmf = np.zeros(N + 1)
        pmf[0] = 1.0
        return pmf
    if q >= 1.0:
        pmf = np.zeros(N + 1)
        pmf[N] = 1.0
        return pmf
    n = np.arange(N, dtype=float)
    steps = np.log(N - n) - np.log(n + 1) + (math.log(q) - math.log1p(-q))
    logpmf = np.empty(N + 1)
    logpmf[0] = N * math.log1p(-q)
    np.cumsum(steps, out=logpmf[1:])
    logpmf[1:] += logpmf[0]
    pmf = np.exp(logpmf - logpmf.max())
    return pmf / pmf.sum()


def binomial_expectation(error_fn, q_k, N):
    """Exact ``E[error_fn(n)]`` for ``n ~ Binomial(N, q_k)``."""
    if q_k <= 0.0:
        return float(error_fn(np.array([0]))[0])
    if q_k >= 1.0:
        return float(error_fn(np.array([N]))[0])
    pmf = binomial_pmf(N, q_k)
    return float(pmf @ error_fn(np.arange(N + 1)))


def expected_component_error(curve, q_k, N, max_exact=EXACT_BINOMIAL_MAX_N, mc=None):
    """Expected error on one component when a fraction ``q_k`` of ``N`` samples
    comes from it.

    Memorization has the closed form ``(1 - q_k)**N``. Other curves use the
    exact Binomial expectation up to ``max_exact`` samples and a seeded Monte
    Carlo estimate beyond. For transfer curves the shared term depends only on
    ``N`` and is added exactly.
    """
    q_k = check_probability(q_k, "q_k")
    N = check_budget(N)
    if isinstance(curve, Memorization):
        return (1.0 - q_k) ** N
    if isinstance(curve, Transfer):
        shared = curve.shared_error(N)
        return shared + expected_component_error(curve.specific, q_k, N, max_exact, mc)
    if N <= max_exact:
        return binomial_expectation(curve.error, q_k, N)

    from .simulate import McConfig, multinomial_estimate

    proxy = MixtureProblem(p=[1.0, 0.0], curves=[curve, Memorization()], N=N)
    estimate, _ = multinomial_estimate(proxy, [q_k, 1.0 - q_k], mc or McConfig())
    return estimate


def mixture_loss(problem, q, **kwargs):
    """Expected test loss ``sum_k p_k * E[e_k(n_k)]`` when training on ``q``."""
    q = as_simplex(q)
    if q.K != problem.K:
        raise ValueError(f"q has {q.K} components but the problem has {problem.K}")
    total = 0.0
    for p_k, curve, q_k in zip(problem.p, problem.curves, q):
        if p_k == 0.0:
            continue
        total += p_k * expected_component_error(curve, q_k, problem.N, **kwargs)
    return total
