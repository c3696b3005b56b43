"""Domain types and elementary operations for entropy-regularized optimal transport.

Conventions used throughout the package:

* natural logarithms everywhere (entropy, regularization schedule, log-domain
  kernels);
* probability vectors live on the standard simplex with an absolute sum
  tolerance of 1e-12;
* matrices are dense, row-major, square; the design envelope is n <= ~2048.

All types are immutable after construction (arrays are stored read-only), so
instances can be shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SIMPLEX_SUM_TOL = 1e-12


class OTError(Exception):
    """Base class for errors raised by this package."""


class NegativeEntryError(OTError):
    """A vector or matrix that must be nonnegative has a negative entry."""


class SumNotOneError(OTError):
    """A probability vector does not sum to one within tolerance."""


class ShapeMismatchError(OTError):
    """Operands have incompatible shapes."""


class TooSmallProblemError(OTError):
    """The problem size is below the minimum the formulas support."""


class ZeroCostError(OTError):
    """The cost matrix is identically zero, so the entropic scaling is undefined."""


class BadEpsPrimeError(OTError):
    """The marginal-smoothing parameter is outside its valid range."""


class NonFiniteError(OTError):
    """An iterate overflowed; the regularization is too small for float64."""


class DegenerateRowError(OTError):
    """A plan has a zero row or column sum where a positive one is required."""


class AllZeroError(OTError):
    """A weight vector that must have positive total weight is identically zero."""


class TooLargeError(OTError):
    """The instance exceeds the size limit of an exact method."""


class DegenerateInputError(OTError):
    """Input data is degenerate (e.g. fewer than two distinct abscissae)."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SimplexVector:
    """Nonnegative vector summing to one: a probability mass vector."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = _readonly(np.asarray(self.values, dtype=np.float64).reshape(-1))
        if not np.all(np.isfinite(values)):
            raise OTError("simplex vector has non-finite entries")
        if np.any(values < 0.0):
            raise NegativeEntryError(f"negative entry {values.min()!r}")
        total = float(values.sum())
        if abs(total - 1.0) > SIMPLEX_SUM_TOL:
            raise SumNotOneError(f"entries sum to {total!r}, not 1")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CostMatrix:
    """Nonnegative square cost matrix with its max-abs entry cached."""

    entries: np.ndarray
    max_abs: float = 0.0

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ShapeMismatchError(f"cost matrix must be square, got {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise OTError("cost matrix has non-finite entries")
        if np.any(entries < 0.0):
            raise NegativeEntryError("cost matrix has a negative entry")
        object.__setattr__(self, "entries", _readonly(entries))
        object.__setattr__(self, "max_abs", float(np.abs(entries).max()))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class TransportPlan:
    """Nonnegative square matrix: a candidate or feasible coupling.

    Feasible couplings carry total mass one; intermediate candidates (for
    example raw Sinkhorn scalings) may carry any finite nonnegative mass, so
    only nonnegativity and finiteness are enforced here.  Feasibility is
    asserted where it is promised: solver outputs and rounding outputs.
    """

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ShapeMismatchError(f"plan must be square, got {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise OTError("plan has non-finite entries")
        if np.any(entries < 0.0):
            raise NegativeEntryError("plan has a negative entry")
        object.__setattr__(self, "entries", _readonly(entries))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.entries.sum())


@dataclass(frozen=True)
class EntropicProblem:
    """Entropy-regularized transport instance: cost, smoothed marginals, strength.

    The marginals must be strictly positive, which :func:`smooth_marginals`
    guarantees; solvers rely on it (logs of marginal entries appear in the
    kernels).
    """

    cost: CostMatrix
    row_marginal: SimplexVector
    col_marginal: SimplexVector
    eta: float

    def __post_init__(self) -> None:
        n = self.cost.n
        if self.row_marginal.n != n or self.col_marginal.n != n:
            raise ShapeMismatchError("marginal lengths must match the cost matrix size")
        if self.row_marginal.values.min() <= 0.0 or self.col_marginal.values.min() <= 0.0:
            raise NegativeEntryError("marginals must be strictly positive")
        if not self.eta > 0.0:
            raise OTError(f"eta must be positive, got {self.eta!r}")

    @property
    def n(self) -> int:
        return self.cost.n


@dataclass(frozen=True)
class ApproxParams:
    """Regularization strength and smoothing level derived from a target accuracy."""

    eps: float
    eps_prime: float
    eta: float

    def __post_init__(self) -> None:
        if not (self.eps > 0.0 and self.eps_prime > 0.0 and self.eta > 0.0):
            raise OTError("eps, eps_prime and eta must all be positive")


def validate_simplex(values: Sequence[float] | np.ndarray) -> SimplexVector:
    """Check simplex membership; never renormalizes silently."""
    return SimplexVector(np.asarray(values, dtype=np.float64))


def entropy(plan: TransportPlan | np.ndarray) -> float:
    """Shannon entropy -sum x log x with the 0 log 0 = 0 convention."""
    x = plan.entries if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    if np.any(x < 0.0):
        raise NegativeEntryError("entropy requires nonnegative entries")
    pos = x[x > 0.0]
    return float(-(pos * np.log(pos)).sum())


def transport_cost(cost: CostMatrix, plan: TransportPlan) -> float:
    """Frobenius inner product of the cost matrix with the plan."""
    if cost.n != plan.n:
        raise ShapeMismatchError(f"cost is {cost.n}x{cost.n} but plan is {plan.n}x{plan.n}")
    return float((cost.entries * plan.entries).sum())


def marginal_residual(plan: TransportPlan, p: SimplexVector, q: SimplexVector) -> float:
    """l1 distance of the plan's row and column sums from the target marginals."""
    if plan.n != p.n or plan.n != q.n:
        raise ShapeMismatchError("plan and marginals have mismatched sizes")
    row = np.abs(plan.entries.sum(axis=1) - p.values).sum()
    col = np.abs(plan.entries.sum(axis=0) - q.values).sum()
    return float(row + col)


def objective_value(prob: EntropicProblem, plan: TransportPlan | np.ndarray) -> float:
    """Entropy-regularized objective <C, X> - eta * H(X)."""
    x = plan.entries if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    if x.shape != prob.cost.entries.shape:
        raise ShapeMismatchError("plan shape does not match the problem")
    return float((prob.cost.entries * x).sum()) - prob.eta * entropy(x)


def derive_params(eps: float, cost: CostMatrix, n: int) -> ApproxParams:
    """Accuracy split for the two-step approximation scheme.

    eta = eps / (4 ln n) and eps' = eps / (8 max|C|), natural log.  A size-one
    problem is rejected (ln 1 = 0) and an all-zero cost matrix is rejected
    (any feasible plan is already optimal; callers should special-case it).
    """
    if n < 2:
        raise TooSmallProblemError(f"need n >= 2, got {n}")
    if cost.max_abs == 0.0:
        raise ZeroCostError("max|C| = 0: every feasible plan is optimal")
    if not eps > 0.0:
        raise OTError(f"eps must be positive, got {eps!r}")
    return ApproxParams(
        eps=float(eps),
        eps_prime=float(eps / (8.0 * cost.max_abs)),
        eta=float(eps / (4.0 * np.log(n))),
    )


def smooth_marginals(
    p: SimplexVector, q: SimplexVector, eps_prime: float
) -> tuple[SimplexVector, SimplexVector]:
    """Shrink both marginals toward uniform so every entry is strictly positive.

    Returns (1 - eps'/8) (p, q) + (eps'/(8n)) (1, 1); each output entry is at
    least eps'/(8n).
    """
    if not (0.0 < eps_prime and eps_prime / 8.0 < 1.0):
        raise BadEpsPrimeError(f"eps_prime must lie in (0, 8), got {eps_prime!r}")
    shrink = 1.0 - eps_prime / 8.0
    n = p.n
    floor = eps_prime / (8.0 * n)
    p2 = SimplexVector(shrink * p.values + floor)
    q2 = SimplexVector(shrink * q.values + floor)
    return p2, q2


# -- problem / plan JSON interchange ------------------------------------------
#
# Problem files: {"n": int, "cost": [n*n floats, row-major], "p": [...], "q": [...]}
# Plan files carry the matrix under "plan" in the same row-major layout.


def problem_to_dict(cost: CostMatrix, p: SimplexVector, q: SimplexVector) -> dict:
    return {
        "n": cost.n,
        "cost": cost.entries.reshape(-1).tolist(),
        "p": p.values.tolist(),
        "q": q.values.tolist(),
    }


def problem_from_dict(data: dict) -> tuple[CostMatrix, SimplexVector, SimplexVector]:
    try:
        n = int(data["n"])
        cost = np.asarray(data["cost"], dtype=np.float64).reshape(n, n)
        p = np.asarray(data["p"], dtype=np.float64)
        q = np.asarray(data["q"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise OTError(f"malformed problem data: {exc}") from exc
    return CostMatrix(cost), validate_simplex(p), validate_simplex(q)


def plan_to_dict(plan: TransportPlan) -> dict:
    return {"n": plan.n, "plan": plan.entries.reshape(-1).tolist()}


def plan_from_dict(data: dict) -> TransportPlan:
    try:
        n = int(data["n"])
        entries = np.asarray(data["plan"], dtype=np.float64).reshape(n, n)
    except (KeyError, TypeError, ValueError) as exc:
        raise OTError(f"malformed plan data: {exc}") from exc
    return TransportPlan(entries)


def load_problem(path: str) -> tuple[CostMatrix, SimplexVector, SimplexVector]:
    with open(path, "r", encoding="utf-8") as fh:
        return problem_from_dict(json.load(fh))


def save_problem(path: str, cost: CostMatrix, p: SimplexVector, q: SimplexVector) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(problem_to_dict(cost, p, q), fh, sort_keys=True)
        fh.write("\n")
