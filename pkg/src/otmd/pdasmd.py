"""Accelerated variance-reduced stochastic mirror descent on the semi-dual.

The solver runs epochs of cheap stochastic inner iterations around one full
gradient per epoch.  Each inner iteration couples three dual sequences

    v = tau1 z + tau2 anchor + (1 - tau1 - tau2) y,

samples components by their smoothness weights, forms an anchored
variance-reduced gradient estimate, then takes a mirror step on ``z`` and a
proximal step on ``y`` whose closed form depends on the chosen norm
geometry.  After each epoch the anchor moves to the average of the epoch's
``y`` iterates, and one uniformly chosen iterate contributes its recovered
primal plan to a weighted running average, which is the solver's output.

With batch size 1 this is the plain method; larger batches average the
stochastic correction over independently drawn components and shrink
``tau2`` to 1/(2B).  Both share one code path, so batch size 1 reproduces
the plain solver bit for bit.

RNG stream order (fixed, documented contract): per epoch, first one uniform
integer draw in [0, l) selecting which inner iterate feeds the primal
average, then l batches of B inverse-CDF uniform draws for component
sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (
    ApproxParams,
    CostMatrix,
    EntropicProblem,
    NonFiniteError,
    OTError,
    SimplexVector,
    TransportPlan,
    derive_params,
    objective_value,
    smooth_marginals,
)
from .counting import OpCounter
from .rounding import round_to_feasible
from .semidual import (
    DualPoint,
    NormKind,
    SmoothnessProfile,
    _softmax_matrix,
    primal_array_from_dual,
    semidual_component_grad,
    semidual_full_grad,
    semidual_value,
    smoothness_constants,
)

DEFAULT_MAX_EPOCHS = 1000


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the stochastic solver.

    ``inner_loops`` defaults to ceil(n / batch) and ``max_epochs`` to a
    theory-shaped cap when driven through :func:`approximate_ot` (or
    ``DEFAULT_MAX_EPOCHS`` for a bare solve).  The solver stops early once
    the epoch residual is at most ``stop_residual`` and the duality-gap
    surrogate is at most ``stop_gap``; the defaults never trigger, so a bare
    solve runs all epochs.
    """

    norm_kind: NormKind = NormKind.LINF
    inner_loops: int | None = None
    max_epochs: int | None = None
    batch: int = 1
    seed: int = 0
    stop_residual: float = 0.0
    stop_gap: float = math.inf

    def __post_init__(self) -> None:
        if self.inner_loops is not None and self.inner_loops < 1:
            raise OTError("inner_loops must be >= 1")
        if self.max_epochs is not None and self.max_epochs < 1:
            raise OTError("max_epochs must be >= 1")
        if self.batch < 1:
            raise OTError("batch must be >= 1")


@dataclass
class IterateState:
    """Mutable dual/primal running state of one solve (one epoch granularity)."""

    y: np.ndarray
    z: np.ndarray
    v: np.ndarray
    v_tilde: np.ndarray
    mu: np.ndarray
    C_acc: float
    D_acc: np.ndarray
    epoch: int


@dataclass(frozen=True)
class SolveResult:
    """Outcome of a solve: averaged primal plan, last dual anchor, diagnostics.

    ``epochs_run`` counts epochs for this solver and plain iterations for the
    Sinkhorn-family solvers that reuse this type.  ``ops`` is a snapshot of
    the operation counter taken when the solve returned.
    """

    plan: TransportPlan
    dual: DualPoint
    epochs_run: int
    residual_history: tuple[float, ...]
    ops: OpCounter
    converged: bool


@dataclass(frozen=True)
class ApproxResult:
    """Feasible plan from the end-to-end accuracy pipeline plus diagnostics."""

    plan: TransportPlan
    solve: SolveResult | None
    params: ApproxParams | None
    converged: bool


def schedule(s: int, L_bar: float, B: int, ops: OpCounter | None = None) -> tuple[float, float, float]:
    """Epoch step parameters: tau1 = 2/(s+4), tau2 = 1/(2B), alpha = 1/(9 tau1 Lbar)."""
    if s < 0 or B < 1 or not L_bar > 0.0:
        raise OTError("schedule needs s >= 0, B >= 1, L_bar > 0")
    tau1 = 2.0 / (s + 4)
    tau2 = 1.0 / (2.0 * B)
    alpha = 1.0 / (9.0 * tau1 * L_bar)
    if ops is not None:
        ops.tally(adds=1, muls=3, divs=3)
    return tau1, tau2, alpha


def sample_components(
    profile: SmoothnessProfile,
    B: int,
    rng: np.random.Generator,
    ops: OpCounter | None = None,
) -> np.ndarray:
    """Draw B component indices i.i.d. with probability L_i / (n Lbar).

    Inverse-CDF sampling: binary search of uniform draws against the
    profile's precomputed cumulative weights, so the sequence is a pure
    function of the generator state.
    """
    if B < 1:
        raise OTError("B must be >= 1")
    u = rng.random(B)
    idx = np.searchsorted(profile.sampling_cdf, u, side="right")
    if ops is not None:
        ops.tally(compares=B * max(1, int(math.ceil(math.log2(profile.n)))))
    return idx


def reduced_gradient(
    v: np.ndarray,
    v_tilde: np.ndarray,
    mu: np.ndarray,
    indices: Sequence[int] | np.ndarray,
    profile: SmoothnessProfile,
    prob: EntropicProblem,
    ops: OpCounter | None = None,
) -> np.ndarray:
    """Anchored estimate mu + mean_i (Lbar/L_i)(grad_i(v) - grad_i(anchor)).

    Unbiased for the full gradient at ``v``: the importance weight Lbar/L_i
    is exactly 1/(n p_i) under the sampling distribution of
    :func:`sample_components`.
    """
    if len(indices) == 0:
        raise OTError("indices must be non-empty")
    n = prob.n
    corr = np.zeros(n)
    for i in indices:
        i = int(i)
        gi_v = semidual_component_grad(i, v, prob, ops)
        gi_a = semidual_component_grad(i, v_tilde, prob, ops)
        corr += (profile.mean / profile.per_component[i]) * (gi_v - gi_a)
        if ops is not None:
            ops.tally(adds=2 * n, muls=n, divs=1)
    out = mu + corr / len(indices)
    if ops is not None:
        ops.tally(adds=n, divs=n)
    return out


def mirror_step_z(
    z: np.ndarray, grad: np.ndarray, alpha: float, ops: OpCounter | None = None
) -> np.ndarray:
    """Mirror step for the half-squared-Euclidean mirror: z - alpha grad."""
    if not alpha > 0.0:
        raise OTError("alpha must be positive")
    out = z - alpha * grad
    if ops is not None:
        n = z.shape[0]
        ops.tally(adds=n, muls=n)
    return out


def prox_step_y(
    v: np.ndarray,
    grad: np.ndarray,
    L_bar: float,
    norm_kind: NormKind,
    ops: OpCounter | None = None,
) -> np.ndarray:
    """Proximal step around v with stiffness 9 Lbar, in closed form.

    L2 geometry moves along the gradient by 1/(9 Lbar); LInf geometry moves
    every coordinate by |grad|_1/(9 Lbar) against the gradient signs, with
    sign(0) taken as -1.
    """
    if not L_bar > 0.0:
        raise OTError("L_bar must be positive")
    n = v.shape[0]
    if norm_kind is NormKind.L2:
        out = v - grad / (9.0 * L_bar)
        if ops is not None:
            ops.tally(adds=n, muls=1, divs=n)
        return out
    step = np.abs(grad).sum() / (9.0 * L_bar)
    signs = np.where(grad > 0.0, 1.0, -1.0)
    out = v - step * signs
    if ops is not None:
        ops.tally(adds=2 * n, muls=n + 1, divs=1, compares=2 * n)
    return out


def _resolved_inner_loops(cfg: SolverConfig, n: int) -> int:
    return cfg.inner_loops if cfg.inner_loops is not None else int(math.ceil(n / cfg.batch))


def _run(prob: EntropicProblem, cfg: SolverConfig, ops: OpCounter) -> SolveResult:
    n = prob.n
    B = cfg.batch
    if B > n:
        raise OTError(f"batch {B} exceeds problem size {n}")
    l = _resolved_inner_loops(cfg, n)
    cap = cfg.max_epochs if cfg.max_epochs is not None else DEFAULT_MAX_EPOCHS
    profile = smoothness_constants(prob, cfg.norm_kind)
    L_bar = profile.mean
    rng = np.random.default_rng(cfg.seed)

    state = IterateState(
        y=np.zeros(n),
        z=np.zeros(n),
        v=np.zeros(n),
        v_tilde=np.zeros(n),
        mu=np.zeros(n),
        C_acc=0.0,
        D_acc=np.zeros((n, n)),
        epoch=0,
    )
    p_vals = prob.row_marginal.values
    q_vals = prob.col_marginal.values
    residual_history: list[float] = []
    converged = False
    x_s = np.full((n, n), np.nan)

    for s in range(cap):
        tau1, tau2, alpha = schedule(s, L_bar, B, ops)
        # one stabilized softmax pass yields the epoch's full gradient and a
        # cache of all component gradients at the anchor, so each inner
        # iteration evaluates just one fresh component
        sm_anchor = _softmax_matrix(state.v_tilde, prob, ops)
        state.mu = sm_anchor.T.dot(p_vals) - q_vals
        anchor_grads = (n * p_vals)[:, None] * (sm_anchor - q_vals[None, :])
        ops.tally(adds=3 * n * n + n, muls=3 * n * n + n)
        pick = int(rng.integers(l))
        y_sum = np.zeros(n)
        y_pick = state.y
        for j in range(l):
            state.v = tau1 * state.z + tau2 * state.v_tilde + (1.0 - tau1 - tau2) * state.y
            ops.tally(adds=2 * n + 2, muls=3 * n)
            idx = sample_components(profile, B, rng, ops)
            corr = np.zeros(n)
            for i in idx:
                i = int(i)
                gi_v = semidual_component_grad(i, state.v, prob, ops)
                corr += (L_bar / profile.per_component[i]) * (gi_v - anchor_grads[i])
                ops.tally(adds=2 * n, muls=n, divs=1)
            g = state.mu + corr / B
            ops.tally(adds=n, divs=n)
            state.z = mirror_step_z(state.z, g, alpha, ops)
            state.y = prox_step_y(state.v, g, L_bar, cfg.norm_kind, ops)
            y_sum += state.y
            ops.tally(adds=n)
            if j == pick:
                y_pick = state.y
        state.v_tilde = y_sum / l
        ops.tally(divs=n)
        if not (np.isfinite(state.v_tilde).all() and np.isfinite(state.z).all()):
            raise NonFiniteError("dual iterates overflowed; eta is too small for float64")

        x_pick = primal_array_from_dual(y_pick, prob, ops)
        state.C_acc += 1.0 / tau1
        state.D_acc += x_pick / tau1
        x_s = state.D_acc / state.C_acc
        ops.tally(adds=1 + n * n, divs=2 + 2 * n * n)
        state.epoch = s + 1

        # stopping-rule monitoring below is not part of the counted kernels
        resid = float(
            np.abs(x_s.sum(axis=1) - p_vals).sum() + np.abs(x_s.sum(axis=0) - q_vals).sum()
        )
        residual_history.append(resid)
        if resid <= cfg.stop_residual:
            gap = objective_value(prob, x_s) + semidual_value(state.v_tilde, prob)
            if gap <= cfg.stop_gap:
                converged = True
                break

    return SolveResult(
        plan=TransportPlan(x_s),
        dual=DualPoint(state.v_tilde),
        epochs_run=state.epoch,
        residual_history=tuple(residual_history),
        ops=ops.snapshot(),
        converged=converged,
    )


def pdasmd_solve(
    prob: EntropicProblem, cfg: SolverConfig, ops: OpCounter | None = None
) -> SolveResult:
    """Run the plain (batch-1) solver on an entropic instance."""
    if cfg.batch != 1:
        raise OTError("pdasmd_solve requires batch == 1; use pdasmd_batch_solve")
    return _run(prob, cfg, ops if ops is not None else OpCounter())


def pdasmd_batch_solve(
    prob: EntropicProblem, cfg: SolverConfig, ops: OpCounter | None = None
) -> SolveResult:
    """Run the batched solver; batch 1 matches :func:`pdasmd_solve` bit for bit."""
    return _run(prob, cfg, ops if ops is not None else OpCounter())


def _default_epoch_cap(
    prob: EntropicProblem,
    norm_kind: NormKind,
    inner_loops: int,
    stop_residual: float,
    stop_gap: float,
) -> int:
    """Ten times the epoch count the convergence bound needs (safety net only).

    Uses the computable dual-radius bound R = eta (max|C|/eta + ln n
    - 2 ln min marginal + 1/2), scaled by sqrt(n) for the L2 geometry, and
    the bound constants (2 Lbar R / S^2)(1 + 18 gamma / l) for the residual
    and its R^2 analogue for the gap.  Early stopping on the realized
    criteria fires far sooner in practice.
    """
    n = prob.n
    eta = prob.eta
    pmin = min(prob.row_marginal.values.min(), prob.col_marginal.values.min())
    radius = eta * (prob.cost.max_abs / eta + math.log(n) - 2.0 * math.log(pmin) + 0.5)
    if norm_kind is NormKind.L2:
        L_bar = 1.0 / eta
        gamma = 1.0
        radius *= math.sqrt(n)
        residual_target = stop_residual / math.sqrt(2.0 * n)
    else:
        L_bar = 5.0 / eta
        gamma = float(n)
        residual_target = stop_residual
    factor = 1.0 + 18.0 * gamma / inner_loops
    s_resid = math.sqrt(2.0 * L_bar * radius * factor / residual_target)
    s_gap = math.sqrt(2.0 * L_bar * radius * radius * factor / stop_gap)
    return 10 * max(1, int(math.ceil(max(s_resid, s_gap))))


def approximate_ot(
    cost: CostMatrix,
    p: SimplexVector,
    q: SimplexVector,
    eps: float,
    cfg: SolverConfig | None = None,
    ops: OpCounter | None = None,
) -> ApproxResult:
    """Feasible plan whose cost exceeds the optimum by at most eps.

    Pipeline: derive (eta, eps'), smooth the marginals, solve the entropic
    problem until the realized residual is at most eps'/2 and the
    duality-gap surrogate (primal objective plus semi-dual value) is at most
    eps/4, then round onto the transport polytope of the original marginals.
    A hit epoch cap is reported through ``converged=False`` rather than an
    exception; the rounded plan is still returned.

    An all-zero cost matrix makes every feasible plan optimal; the
    independent coupling p q^T is returned directly.
    """
    if cfg is None:
        cfg = SolverConfig()
    if ops is None:
        ops = OpCounter()
    if cost.max_abs == 0.0:
        n = cost.n
        plan = TransportPlan(np.outer(p.values, q.values))
        ops.tally(muls=n * n)
        return ApproxResult(plan=plan, solve=None, params=None, converged=True)

    params = derive_params(eps, cost, cost.n)
    p2, q2 = smooth_marginals(p, q, params.eps_prime)
    prob = EntropicProblem(cost=cost, row_marginal=p2, col_marginal=q2, eta=params.eta)
    stop_residual = params.eps_prime / 2.0
    stop_gap = eps / 4.0
    run_cfg = replace(
        cfg,
        stop_residual=stop_residual,
        stop_gap=stop_gap,
        max_epochs=cfg.max_epochs
        if cfg.max_epochs is not None
        else _default_epoch_cap(
            prob, cfg.norm_kind, _resolved_inner_loops(cfg, cost.n), stop_residual, stop_gap
        ),
    )
    result = _run(prob, run_cfg, ops)
    rounded = round_to_feasible(result.plan, p, q, ops)
    return ApproxResult(plan=rounded, solve=result, params=params, converged=result.converged)
