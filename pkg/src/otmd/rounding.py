"""Round a near-feasible nonnegative plan onto the transport polytope.

Three stages: clip row sums down to the row marginal, clip column sums down
to the column marginal, then restore the missing mass with a rank-one
correction built from the remaining marginal errors.  The l1 change is at
most twice the input's marginal residual, which is the property the
epsilon-solution wrappers rely on.
"""

from __future__ import annotations

import numpy as np

from .core import ShapeMismatchError, SimplexVector, TransportPlan
from .counting import OpCounter


def round_to_feasible(
    plan: TransportPlan,
    p: SimplexVector,
    q: SimplexVector,
    ops: OpCounter | None = None,
) -> TransportPlan:
    """Return a plan with row sums exactly p and column sums exactly q.

    Zero rows or columns scale by one (nothing to clip); the rank-one stage
    then supplies their mass.  Feasible inputs pass through unchanged.
    """
    if plan.n != p.n or plan.n != q.n:
        raise ShapeMismatchError("plan and marginals have mismatched sizes")
    x = np.array(plan.entries, copy=True)
    n = plan.n

    row_sums = x.sum(axis=1)
    row_scale = np.where(row_sums > 0.0, np.minimum(p.values / np.maximum(row_sums, 1e-300), 1.0), 1.0)
    x *= row_scale[:, None]

    col_sums = x.sum(axis=0)
    col_scale = np.where(col_sums > 0.0, np.minimum(q.values / np.maximum(col_sums, 1e-300), 1.0), 1.0)
    x *= col_scale[None, :]

    err_p = p.values - x.sum(axis=1)
    err_q = q.values - x.sum(axis=0)
    missing = err_p.sum()
    if missing > 0.0:
        x += np.outer(err_p, err_q) / missing
    if ops is not None:
        nn = n * n
        # row/col sums 2nn, scale factors ~6n, two scalings 2nn, errors 2nn + 3n,
        # rank-one correction 2nn
        ops.tally(adds=4 * nn + 3 * n, muls=3 * nn, divs=2 * n + 1, compares=4 * n)

    # clipping keeps entries nonnegative and the correction term is a product
    # of nonnegative vectors, but guard against -0.0 and rounding dust
    np.maximum(x, 0.0, out=x)
    return TransportPlan(x)
