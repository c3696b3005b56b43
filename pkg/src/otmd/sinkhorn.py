"""Classical and stochastic Sinkhorn solvers for entropic OT.

The classical solver alternates exact row and column rescalings of the
kernel matrix exp(-C/eta), entirely in the log domain.  The stochastic
variant rescales one row or column at a time, choosing the coordinate at
random with probability proportional to an increasing function of its
per-coordinate KL marginal violation; row and column sums are maintained
incrementally so one update costs O(n).

Stochastic updates run in the multiplicative domain, with a log-domain
fallback for a row/column whose linear-domain mass underflows or overflows
(scalings beyond e**+-300); both scalings and their logs are kept in sync so
the fallback is exact.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    AllZeroError,
    CostMatrix,
    DegenerateRowError,
    EntropicProblem,
    NegativeEntryError,
    NonFiniteError,
    OTError,
    SimplexVector,
    TransportPlan,
    derive_params,
    smooth_marginals,
)
from .counting import OpCounter
from .pdasmd import ApproxResult, SolveResult
from .rounding import round_to_feasible
from .semidual import DualPoint

_SCALE_LOG_LIMIT = 300.0


class Side(enum.Enum):
    ROW = "row"
    COL = "col"


@dataclass(frozen=True)
class ScalingPair:
    """Log-domain Sinkhorn scaling vectors."""

    log_u: np.ndarray
    log_v: np.ndarray

    def __post_init__(self) -> None:
        log_u = np.array(np.asarray(self.log_u, dtype=np.float64).reshape(-1), copy=True)
        log_v = np.array(np.asarray(self.log_v, dtype=np.float64).reshape(-1), copy=True)
        if log_u.shape != log_v.shape:
            raise OTError("scaling vectors must have equal length")
        if not (np.all(np.isfinite(log_u)) and np.all(np.isfinite(log_v))):
            raise OTError("scalings must be finite")
        log_u.flags.writeable = False
        log_v.flags.writeable = False
        object.__setattr__(self, "log_u", log_u)
        object.__setattr__(self, "log_v", log_v)

    @property
    def n(self) -> int:
        return self.log_u.shape[0]


@dataclass(frozen=True)
class ViolationVector:
    """Per-coordinate KL divergences of plan marginals from their targets; length 2n."""

    rho: np.ndarray

    def __post_init__(self) -> None:
        rho = np.array(np.asarray(self.rho, dtype=np.float64).reshape(-1), copy=True)
        if np.any(rho < 0.0):
            raise NegativeEntryError("KL violations cannot be negative")
        rho.flags.writeable = False
        object.__setattr__(self, "rho", rho)


def plan_from_scalings(
    scalings: ScalingPair, prob: EntropicProblem, ops: OpCounter | None = None
) -> TransportPlan:
    """X_ij = exp(log_u_i - C_ij/eta + log_v_j), assembled in the log domain."""
    if scalings.n != prob.n:
        raise OTError("scaling length does not match the problem size")
    log_x = scalings.log_u[:, None] - prob.cost.entries / prob.eta + scalings.log_v[None, :]
    if ops is not None:
        nn = prob.n * prob.n
        ops.tally(adds=2 * nn, divs=nn, exps=nn)
    return TransportPlan(np.exp(log_x))


def _half_step(
    log_u: np.ndarray,
    log_v: np.ndarray,
    neg_cost_over_eta: np.ndarray,
    log_target: np.ndarray,
    side: Side,
    ops: OpCounter | None,
) -> np.ndarray:
    """New log scaling for one side, so that side's marginal matches exactly."""
    if side is Side.ROW:
        logits = neg_cost_over_eta + log_v[None, :]
        peak = logits.max(axis=1)
        lse = peak + np.log(np.exp(logits - peak[:, None]).sum(axis=1))
    else:
        logits = neg_cost_over_eta + log_u[:, None]
        peak = logits.max(axis=0)
        lse = peak + np.log(np.exp(logits - peak[None, :]).sum(axis=0))
    n = log_target.shape[0]
    if ops is not None:
        nn = n * n
        ops.tally(adds=3 * nn + 2 * n, compares=nn, exps=nn, logs=n)
    return log_target - lse


def sinkhorn_step(
    scalings: ScalingPair, prob: EntropicProblem, side: Side, ops: OpCounter | None = None
) -> ScalingPair:
    """One exact rescaling of the chosen side; the other scaling is untouched."""
    k = -prob.cost.entries / prob.eta
    if ops is not None:
        ops.tally(divs=prob.n * prob.n)
    if side is Side.ROW:
        log_p = np.log(prob.row_marginal.values)
        if ops is not None:
            ops.tally(logs=prob.n)
        new_u = _half_step(scalings.log_u, scalings.log_v, k, log_p, Side.ROW, ops)
        return ScalingPair(log_u=new_u, log_v=scalings.log_v)
    log_q = np.log(prob.col_marginal.values)
    if ops is not None:
        ops.tally(logs=prob.n)
    new_v = _half_step(scalings.log_u, scalings.log_v, k, log_q, Side.COL, ops)
    return ScalingPair(log_u=scalings.log_u, log_v=new_v)


def _radius_bound(prob: EntropicProblem) -> float:
    """Computable bound on the sup norm of optimal log scalings."""
    pmin = min(prob.row_marginal.values.min(), prob.col_marginal.values.min())
    return prob.cost.max_abs / prob.eta + math.log(prob.n) - 2.0 * math.log(pmin)


def sinkhorn_solve(
    prob: EntropicProblem,
    tol: float,
    max_iters: int | None = None,
    ops: OpCounter | None = None,
) -> SolveResult:
    """Alternate exact row/column rescalings until the l1 marginal residual <= tol.

    Deterministic; one iteration is a row step followed by a column step.
    When the iteration cap is hit the best plan so far is still returned,
    flagged with ``converged=False``.
    """
    if not tol > 0.0:
        raise OTError("tol must be positive")
    if ops is None:
        ops = OpCounter()
    n = prob.n
    if max_iters is None:
        max_iters = 10 * int(math.ceil(2.0 + 4.0 * _radius_bound(prob) / tol))
    k = -prob.cost.entries / prob.eta
    ops.tally(divs=n * n)
    log_p = np.log(prob.row_marginal.values)
    log_q = np.log(prob.col_marginal.values)
    ops.tally(logs=2 * n)
    p_vals = prob.row_marginal.values
    q_vals = prob.col_marginal.values

    log_u = np.zeros(n)
    log_v = np.zeros(n)
    history: list[float] = []
    converged = False
    iters = 0
    plan = np.exp(k + log_u[:, None] + log_v[None, :])
    for _ in range(max_iters):
        log_u = _half_step(log_u, log_v, k, log_p, Side.ROW, ops)
        log_v = _half_step(log_u, log_v, k, log_q, Side.COL, ops)
        iters += 1
        # residual monitoring, not counted
        plan = np.exp(k + log_u[:, None] + log_v[None, :])
        resid = float(
            np.abs(plan.sum(axis=1) - p_vals).sum() + np.abs(plan.sum(axis=0) - q_vals).sum()
        )
        history.append(resid)
        if resid <= tol:
            converged = True
            break
    if not np.isfinite(plan).all():
        raise NonFiniteError("Sinkhorn plan overflowed; eta is too small for float64")
    return SolveResult(
        plan=TransportPlan(plan),
        dual=DualPoint(prob.eta * log_v),
        epochs_run=iters,
        residual_history=tuple(history),
        ops=ops.snapshot(),
        converged=converged,
    )


def kl_violation(
    plan: TransportPlan, p: SimplexVector, q: SimplexVector, ops: OpCounter | None = None
) -> ViolationVector:
    """Scalar KL divergence of each target marginal entry from the plan's; length 2n."""
    if plan.n != p.n or plan.n != q.n:
        raise OTError("plan and marginals have mismatched sizes")
    row_sums = plan.entries.sum(axis=1)
    col_sums = plan.entries.sum(axis=0)
    if ops is not None:
        nn = plan.n * plan.n
        ops.tally(adds=2 * nn)
    return _kl_from_sums(row_sums, col_sums, p.values, q.values, ops)


def _kl_from_sums(
    row_sums: np.ndarray,
    col_sums: np.ndarray,
    p_vals: np.ndarray,
    q_vals: np.ndarray,
    ops: OpCounter | None,
) -> ViolationVector:
    if row_sums.min() <= 0.0 or col_sums.min() <= 0.0:
        raise DegenerateRowError("plan has a zero row or column sum")
    rho_rows = p_vals * np.log(p_vals / row_sums) - p_vals + row_sums
    rho_cols = q_vals * np.log(q_vals / col_sums) - q_vals + col_sums
    rho = np.maximum(np.concatenate([rho_rows, rho_cols]), 0.0)
    if ops is not None:
        n = p_vals.shape[0]
        ops.tally(adds=4 * n, muls=2 * n, divs=2 * n, logs=2 * n, compares=2 * n)
    return ViolationVector(rho)


def increasing_probability(
    h: np.ndarray, g: Callable[[np.ndarray], np.ndarray] | None = None
) -> SimplexVector:
    """Sampling distribution proportional to g(h) for an increasing positive g.

    ``g`` must accept a numpy array (the default is the identity).
    """
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0.0):
        raise NegativeEntryError("violation weights must be nonnegative")
    weights = h if g is None else np.asarray(g(h), dtype=np.float64)
    total = float(weights.sum())
    if total <= 0.0:
        raise AllZeroError("all sampling weights are zero")
    return SimplexVector(weights / total)


def stochastic_sinkhorn_solve(
    prob: EntropicProblem,
    tol: float,
    seed: int | np.random.Generator = 0,
    max_iters: int | None = None,
    g: Callable[[np.ndarray], np.ndarray] | None = None,
    ops: OpCounter | None = None,
) -> SolveResult:
    """Rescale one randomly chosen row or column per iteration until residual <= tol.

    The coordinate is sampled with probability proportional to ``g`` of its
    KL marginal violation (identity by default).  Row and column sums of the
    plan are maintained incrementally, so each iteration costs O(n) counted
    operations after the O(n^2) kernel setup.
    """
    if not tol > 0.0:
        raise OTError("tol must be positive")
    if ops is None:
        ops = OpCounter()
    n = prob.n
    rng = np.random.default_rng(seed)
    p_vals = prob.row_marginal.values
    q_vals = prob.col_marginal.values
    if max_iters is None:
        max_iters = 10 * int(math.ceil(2.0 + 112.0 * n * _radius_bound(prob) / tol))

    kernel = np.exp(-prob.cost.entries / prob.eta)
    ops.tally(divs=n * n, exps=n * n)
    u = np.ones(n)
    v = np.ones(n)
    log_u = np.zeros(n)
    log_v = np.zeros(n)
    row_sums = kernel.sum(axis=1).astype(np.float64)
    col_sums = kernel.sum(axis=0).astype(np.float64)
    ops.tally(adds=2 * n * n)

    history: list[float] = []
    converged = False
    iters = 0
    for _ in range(max_iters):
        resid = float(np.abs(row_sums - p_vals).sum() + np.abs(col_sums - q_vals).sum())
        history.append(resid)
        if resid <= tol:
            converged = True
            break
        if not (np.isfinite(row_sums).all() and np.isfinite(col_sums).all()):
            raise NonFiniteError("scalings overflowed; eta is too small for float64")

        rho = _kl_from_sums(row_sums, col_sums, p_vals, q_vals, ops).rho
        weights = rho if g is None else np.asarray(g(rho), dtype=np.float64)
        cdf = np.cumsum(weights)
        total = cdf[-1]
        ops.tally(adds=2 * n, muls=(0 if g is None else 2 * n))
        if total <= 0.0:
            converged = True
            break
        pick = int(np.searchsorted(cdf, rng.random() * total, side="right"))
        pick = min(pick, 2 * n - 1)
        ops.tally(muls=1, compares=max(1, int(math.ceil(math.log2(2 * n)))))

        if pick < n:
            i = pick
            w = kernel[i, :] * v
            mass = float(w.sum())
            ops.tally(muls=n, adds=n)
            if mass > 0.0 and math.isfinite(mass):
                new_log = math.log(p_vals[i]) - math.log(mass)
                ops.tally(logs=2, adds=1)
            else:
                peak = float(np.max(-prob.cost.entries[i] / prob.eta + log_v))
                lse = peak + math.log(np.exp(-prob.cost.entries[i] / prob.eta + log_v - peak).sum())
                new_log = math.log(p_vals[i]) - lse
                ops.tally(adds=4 * n, divs=2 * n, exps=n, logs=2, compares=n)
            new_u = math.exp(min(max(new_log, -_SCALE_LOG_LIMIT), _SCALE_LOG_LIMIT))
            ops.tally(exps=1, compares=2)
            col_sums = col_sums + (new_u - u[i]) * w
            ops.tally(adds=2 * n + 1, muls=n)
            u[i] = new_u
            log_u[i] = new_log
            row_sums[i] = p_vals[i]
        else:
            j = pick - n
            w = kernel[:, j] * u
            mass = float(w.sum())
            ops.tally(muls=n, adds=n)
            if mass > 0.0 and math.isfinite(mass):
                new_log = math.log(q_vals[j]) - math.log(mass)
                ops.tally(logs=2, adds=1)
            else:
                peak = float(np.max(-prob.cost.entries[:, j] / prob.eta + log_u))
                lse = peak + math.log(np.exp(-prob.cost.entries[:, j] / prob.eta + log_u - peak).sum())
                new_log = math.log(q_vals[j]) - lse
                ops.tally(adds=4 * n, divs=2 * n, exps=n, logs=2, compares=n)
            new_v = math.exp(min(max(new_log, -_SCALE_LOG_LIMIT), _SCALE_LOG_LIMIT))
            ops.tally(exps=1, compares=2)
            row_sums = row_sums + (new_v - v[j]) * w
            ops.tally(adds=2 * n + 1, muls=n)
            v[j] = new_v
            log_v[j] = new_log
            col_sums[j] = q_vals[j]
        iters += 1

    plan = u[:, None] * kernel * v[None, :]
    ops.tally(muls=2 * n * n)
    if not np.isfinite(plan).all():
        raise NonFiniteError("plan overflowed; eta is too small for float64")
    return SolveResult(
        plan=TransportPlan(plan),
        dual=DualPoint(prob.eta * log_v),
        epochs_run=iters,
        residual_history=tuple(history),
        ops=ops.snapshot(),
        converged=converged,
    )


def _zero_cost_result(cost: CostMatrix, p: SimplexVector, q: SimplexVector, ops: OpCounter) -> ApproxResult:
    plan = TransportPlan(np.outer(p.values, q.values))
    ops.tally(muls=cost.n * cost.n)
    return ApproxResult(plan=plan, solve=None, params=None, converged=True)


def approximate_ot_stochastic(
    cost: CostMatrix,
    p: SimplexVector,
    q: SimplexVector,
    eps: float,
    seed: int | np.random.Generator = 0,
    max_iters: int | None = None,
    ops: OpCounter | None = None,
) -> ApproxResult:
    """End-to-end eps-solution via Stochastic Sinkhorn plus rounding."""
    if ops is None:
        ops = OpCounter()
    if cost.max_abs == 0.0:
        return _zero_cost_result(cost, p, q, ops)
    params = derive_params(eps, cost, cost.n)
    p2, q2 = smooth_marginals(p, q, params.eps_prime)
    prob = EntropicProblem(cost=cost, row_marginal=p2, col_marginal=q2, eta=params.eta)
    result = stochastic_sinkhorn_solve(
        prob, tol=params.eps_prime / 2.0, seed=seed, max_iters=max_iters, ops=ops
    )
    rounded = round_to_feasible(result.plan, p, q, ops)
    return ApproxResult(plan=rounded, solve=result, params=params, converged=result.converged)


def approximate_ot_classical(
    cost: CostMatrix,
    p: SimplexVector,
    q: SimplexVector,
    eps: float,
    max_iters: int | None = None,
    ops: OpCounter | None = None,
) -> ApproxResult:
    """End-to-end eps-solution via classical Sinkhorn plus rounding."""
    if ops is None:
        ops = OpCounter()
    if cost.max_abs == 0.0:
        return _zero_cost_result(cost, p, q, ops)
    params = derive_params(eps, cost, cost.n)
    p2, q2 = smooth_marginals(p, q, params.eps_prime)
    prob = EntropicProblem(cost=cost, row_marginal=p2, col_marginal=q2, eta=params.eta)
    result = sinkhorn_solve(prob, tol=params.eps_prime / 2.0, max_iters=max_iters, ops=ops)
    rounded = round_to_feasible(result.plan, p, q, ops)
    return ApproxResult(plan=rounded, solve=result, params=params, converged=result.converged)
