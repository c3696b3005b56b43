"""Semi-dual objective of entropic OT and its gradients.

After eliminating the row block of dual variables analytically, the dual of
the entropy-regularized problem becomes a smooth function of a single vector
``lambda`` of length n.  It splits into n convex components, one per cost
row, each weighted by the corresponding row-marginal mass:

    phi_i(lam) = n p'_i ( -<q', lam> - eta log p'_i
                          + eta log sum_j exp((lam_j - C_ij - eta)/eta) + eta )

and phi = (1/n) sum_i phi_i.  Component gradients are scaled softmax rows,
which is what makes per-component stochastic updates O(n).

Every kernel subtracts the row maximum before exponentiating, so values and
gradients stay finite for arbitrarily large ``lambda`` entries.  Optional
``ops`` arguments tally scalar-operation counts (see :mod:`otmd.counting`).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import EntropicProblem, OTError, TransportPlan
from .counting import OpCounter


class NormKind(enum.Enum):
    """Geometry the solver smoothness constants and proximal step refer to."""

    L2 = "l2"
    LINF = "linf"


@dataclass(frozen=True)
class DualPoint:
    """Semi-dual variable: a finite real vector of length n."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(np.asarray(self.values, dtype=np.float64).reshape(-1), copy=True)
        if not np.all(np.isfinite(values)):
            raise OTError("dual point has non-finite entries")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SmoothnessProfile:
    """Per-component Lipschitz-smoothness constants and their mean.

    The component sampling weights L_i / (n Lbar) reduce to the row marginal
    for both geometries, exposed as a cumulative distribution for
    inverse-CDF sampling.
    """

    per_component: np.ndarray
    mean: float
    norm_kind: NormKind

    def __post_init__(self) -> None:
        per = np.array(np.asarray(self.per_component, dtype=np.float64).reshape(-1), copy=True)
        if np.any(per <= 0.0):
            raise OTError("smoothness constants must be positive")
        computed = float(per.mean())
        if abs(computed - self.mean) > 1e-12 * max(1.0, abs(self.mean)):
            raise OTError(f"mean {self.mean!r} does not match components (expected {computed!r})")
        per.flags.writeable = False
        object.__setattr__(self, "per_component", per)

    @property
    def n(self) -> int:
        return self.per_component.shape[0]

    @cached_property
    def sampling_cdf(self) -> np.ndarray:
        weights = self.per_component / (self.n * self.mean)
        cdf = np.cumsum(weights)
        cdf[-1] = 1.0
        cdf.flags.writeable = False
        return cdf


def _lam_array(lam: DualPoint | np.ndarray) -> np.ndarray:
    return lam.values if isinstance(lam, DualPoint) else np.asarray(lam, dtype=np.float64)


def _softmax_matrix(lam: np.ndarray, prob: EntropicProblem, ops: OpCounter | None) -> np.ndarray:
    """Row-wise softmax of (lam - C_i)/eta for every row i; (n, n)."""
    n = prob.n
    logits = (lam[None, :] - prob.cost.entries) / prob.eta
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    out = shifted / shifted.sum(axis=1, keepdims=True)
    if ops is not None:
        nn = n * n
        ops.tally(adds=3 * nn, divs=2 * nn, exps=nn, compares=nn)
    return out

def _softmax_row(i: int, lam: np.ndarray, prob: EntropicProblem, ops: OpCounter | None) -> np.ndarray:
    n = prob.n
    logits = (lam - prob.cost.entries[i]) / prob.eta
    shifted = np.exp(logits - logits.max())
    out = shifted / shifted.sum()
    if ops is not None:
        ops.tally(adds=3 * n, divs=2 * n, exps=n, compares=n)
    return out

def _lse_rows(lam: np.ndarray, prob: EntropicProblem, ops: OpCounter | None) -> np.ndarray:
    """log sum_j exp((lam_j - C_ij)/eta) per row, max-shift stabilized; (n,)."""
    n = prob.n
    logits = (lam[None, :] - prob.cost.entries) / prob.eta
    peak = logits.max(axis=1)
    out = peak + np.log(np.exp(logits - peak[:, None]).sum(axis=1))
    if ops is not None:
        nn = n * n
        ops.tally(adds=3 * nn + n, divs=nn, exps=nn, compares=nn, logs=n)
    return out


def tau_of_lambda(
    lam: DualPoint | np.ndarray, prob: EntropicProblem, ops: OpCounter | None = None
) -> np.ndarray:
    """Eliminated row-dual block: tau_i = eta (log p'_i - lse_i + 1).

    The +1 folds in the constant -eta inside the exponent; with this tau the
    recovered plan's row sums match the row marginal exactly.
    """
    lam = _lam_array(lam)
    lse = _lse_rows(lam, prob, ops)
    n = prob.n
    out = prob.eta * (np.log(prob.row_marginal.values) - lse + 1.0)
    if ops is not None:
        ops.tally(adds=2 * n, muls=n, logs=n)
    return out


def semidual_value(
    lam: DualPoint | np.ndarray, prob: EntropicProblem, ops: OpCounter | None = None
) -> float:
    """Semi-dual objective phi(lambda); translation invariant."""
    lam = _lam_array(lam)
    lse = _lse_rows(lam, prob, ops)
    p = prob.row_marginal.values
    q = prob.col_marginal.values
    value = float(-q.dot(lam) - prob.eta * p.dot(np.log(p)) + prob.eta * p.dot(lse))
    if ops is not None:
        n = prob.n
        ops.tally(adds=6 * n + 2, muls=6 * n + 2, logs=n)
    return value


def semidual_component_grad(
    i: int, lam: DualPoint | np.ndarray, prob: EntropicProblem, ops: OpCounter | None = None
) -> np.ndarray:
    """Gradient of phi_i: n p'_i (softmax((lam - C_i)/eta) - q')."""
    n = prob.n
    if not 0 <= i < n:
        raise IndexError(f"component index {i} out of range for n={n}")
    lam = _lam_array(lam)
    sm = _softmax_row(i, lam, prob, ops)
    out = (n * prob.row_marginal.values[i]) * (sm - prob.col_marginal.values)
    if ops is not None:
        ops.tally(adds=n, muls=n + 1)
    return out


def semidual_full_grad(
    lam: DualPoint | np.ndarray, prob: EntropicProblem, ops: OpCounter | None = None
) -> np.ndarray:
    """Full gradient (1/n) sum_i grad phi_i = X(lam)^T 1 - q'; O(n^2)."""
    lam = _lam_array(lam)
    sm = _softmax_matrix(lam, prob, ops)
    out = sm.T.dot(prob.row_marginal.values) - prob.col_marginal.values
    if ops is not None:
        nn = prob.n * prob.n
        ops.tally(adds=nn + prob.n, muls=nn)
    return out


def primal_from_dual(
    lam: DualPoint | np.ndarray, prob: EntropicProblem, ops: OpCounter | None = None
) -> TransportPlan:
    """Plan recovered from the dual point: X_ij = p'_i softmax_j((lam_j - C_ij)/eta).

    Row sums equal the row marginal by construction; the column residual
    equals the full semi-dual gradient.
    """
    x = primal_array_from_dual(_lam_array(lam), prob, ops)
    return TransportPlan(x)


def primal_array_from_dual(
    lam: np.ndarray, prob: EntropicProblem, ops: OpCounter | None = None
) -> np.ndarray:
    """Same as :func:`primal_from_dual` but returns the raw array (hot path)."""
    sm = _softmax_matrix(lam, prob, ops)
    out = prob.row_marginal.values[:, None] * sm
    if ops is not None:
        ops.tally(muls=prob.n * prob.n)
    return out


def smoothness_constants(prob: EntropicProblem, norm_kind: NormKind) -> SmoothnessProfile:
    """Component smoothness: n p'_i / eta (L2 geometry) or 5 n p'_i / eta (LInf)."""
    scale = 1.0 if norm_kind is NormKind.L2 else 5.0
    n = prob.n
    per = scale * n * prob.row_marginal.values / prob.eta
    return SmoothnessProfile(per_component=per, mean=scale / prob.eta, norm_kind=norm_kind)
