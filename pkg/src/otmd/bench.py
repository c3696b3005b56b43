"""Benchmark harness: synthetic instances, an exact small-instance oracle,
log-log slope fits, and operation-count scaling experiments.

Instances are pairs of random square grey-scale images used as marginals,
with the l1 distance between pixel locations as the ground cost.  Each
experiment cell (algorithm, size, batch, accuracy, seed) runs the full
eps-solution pipeline with a private operation counter and RNG stream, so
cells are independent and the aggregated table is deterministic regardless
of scheduling.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .core import (
    CostMatrix,
    DegenerateInputError,
    OTError,
    ShapeMismatchError,
    SimplexVector,
    TooLargeError,
    marginal_residual,
    transport_cost,
)
from .counting import OpCounter
from .pdasmd import ApproxResult, SolverConfig, approximate_ot
from .semidual import NormKind
from .sinkhorn import approximate_ot_classical, approximate_ot_stochastic

ALGO_PDASMD_L2 = "pdasmd_l2"
ALGO_PDASMD_LINF = "pdasmd_linf"
ALGO_SINKHORN = "sinkhorn"
ALGO_STOCHASTIC_SINKHORN = "stochastic_sinkhorn"
ALL_ALGOS = (ALGO_PDASMD_L2, ALGO_PDASMD_LINF, ALGO_SINKHORN, ALGO_STOCHASTIC_SINKHORN)

CSV_HEADER = "algo,n,B,eps,ops_total,iterations,residual,cost,seed,wall_ms"


@dataclass(frozen=True)
class ExperimentRecord:
    """One completed pipeline run: problem key, counted work, solution quality."""

    algo: str
    n: int
    B: int
    eps: float
    ops_total: int
    iterations: int
    residual: float
    cost: float
    seed: int
    wall_ms: float
    converged: bool = True


@dataclass(frozen=True)
class ImageMarginal:
    """Square random image and its strictly positive normalized mass vector."""

    pixels: np.ndarray
    normalized: SimplexVector

    @property
    def side(self) -> int:
        return self.pixels.shape[0]


def gen_synthetic_image(side: int, seed) -> ImageMarginal:
    """Random image: a bright square foreground over a dim background.

    The foreground side is floor(side * sqrt(0.2)) (at least one pixel), so
    it covers roughly a fifth of the area; its position is uniform.
    Background pixels are U[0, 1], foreground pixels U[0, 3].  After
    normalization a uniform floor of 1e-6/n total mass is mixed in so every
    entry is strictly positive.  Draw order per seed: background values,
    foreground corner, foreground values.
    """
    if side < 2:
        raise OTError(f"side must be >= 2, got {side}")
    rng = np.random.default_rng(seed)
    pixels = rng.uniform(0.0, 1.0, size=(side, side))
    fg = max(1, int(math.floor(side * math.sqrt(0.2))))
    r0 = int(rng.integers(0, side - fg + 1))
    c0 = int(rng.integers(0, side - fg + 1))
    pixels[r0 : r0 + fg, c0 : c0 + fg] = rng.uniform(0.0, 3.0, size=(fg, fg))
    n = side * side
    mass = pixels.reshape(-1) / pixels.sum()
    mass = (mass + 1e-6 / n) / (1.0 + 1e-6)
    return ImageMarginal(pixels=pixels, normalized=SimplexVector(mass))


def image_pair_to_problem(
    a: ImageMarginal, b: ImageMarginal
) -> tuple[SimplexVector, SimplexVector, CostMatrix]:
    """Marginals from two images plus the l1 ground cost on the pixel grid."""
    if a.side != b.side:
        raise ShapeMismatchError("images must share the side length")
    s = a.side
    idx = np.arange(s * s)
    rows = idx // s
    cols = idx % s
    cost = np.abs(rows[:, None] - rows[None, :]) + np.abs(cols[:, None] - cols[None, :])
    return a.normalized, b.normalized, CostMatrix(cost.astype(np.float64))


# -- exact small-instance oracle ----------------------------------------------


def _exact_ot_2x2(cost: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    lo = max(0.0, p[0] + q[0] - 1.0)
    hi = min(p[0], q[0])
    d = cost[0, 0] - cost[0, 1] - cost[1, 0] + cost[1, 1]
    t = hi if d < 0.0 else lo
    return float(
        d * t + cost[0, 1] * p[0] + cost[1, 0] * q[0] + cost[1, 1] * (1.0 - p[0] - q[0])
    )


def _northwest_corner(a: np.ndarray, b: np.ndarray) -> tuple[dict, list]:
    """Initial basic feasible solution with exactly 2n-1 (possibly zero) cells."""
    n = a.shape[0]
    ar = a.copy()
    bc = b.copy()
    x: dict[tuple[int, int], float] = {}
    cells: list[tuple[int, int]] = []
    i = j = 0
    while True:
        t = min(ar[i], bc[j])
        x[(i, j)] = t
        cells.append((i, j))
        ar[i] -= t
        bc[j] -= t
        if i == n - 1 and j == n - 1:
            break
        if j == n - 1 or (ar[i] <= bc[j] and i < n - 1):
            i += 1
        else:
            j += 1
    return x, cells


def _tree_adjacency(cells: Iterable[tuple[int, int]], n: int) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(2 * n)]
    for i, j in cells:
        adj[i].append(n + j)
        adj[n + j].append(i)
    return adj


def _tree_path(adj: list[list[int]], start: int, goal: int) -> list[int]:
    """Unique path between two nodes of a tree, via BFS parents."""
    parent = {start: -1}
    queue = [start]
    while queue:
        node = queue.pop(0)
        if node == goal:
            break
        for nxt in adj[node]:
            if nxt not in parent:
                parent[nxt] = node
                queue.append(nxt)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    path.reverse()
    return path


def _transportation_simplex(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Exact dense transportation simplex with Bland's pivoting rule."""
    n = a.shape[0]
    x, cells = _northwest_corner(a, b)
    basis = set(cells)
    tol = 1e-11 * max(1.0, float(np.abs(cost).max()))

    for _ in range(200000):
        # duals from the basis tree: u_i + v_j = C_ij on basic cells
        u = np.full(n, np.nan)
        v = np.full(n, np.nan)
        u[0] = 0.0
        adj = _tree_adjacency(basis, n)
        stack = [0]
        seen = {0}
        while stack:
            node = stack.pop()
            for nxt in adj[node]:
                if nxt in seen:
                    continue
                seen.add(nxt)
                if node < n:
                    v[nxt - n] = cost[node, nxt - n] - u[node]
                else:
                    u[nxt] = cost[nxt, node - n] - v[node - n]
                stack.append(nxt)

        entering = None
        for i in range(n):
            for j in range(n):
                if (i, j) in basis:
                    continue
                if cost[i, j] - u[i] - v[j] < -tol:
                    entering = (i, j)
                    break
            if entering is not None:
                break
        if entering is None:
            break

        path = _tree_path(adj, entering[0], n + entering[1])
        cycle = [entering]
        for k in range(len(path) - 1):
            lo, hi = path[k], path[k + 1]
            if lo < n:
                cycle.append((lo, hi - n))
            else:
                cycle.append((hi, lo - n))
        minus = cycle[1::2]
        theta = min(x[c] for c in minus)
        leaving = min(c for c in minus if x[c] == min(x[m] for m in minus))
        for k, c in enumerate(cycle):
            if k % 2 == 0:
                x[c] = x.get(c, 0.0) + theta
            else:
                x[c] -= theta
        basis.discard(leaving)
        del x[leaving]
        basis.add(entering)
        if entering not in x:
            x[entering] = 0.0
    else:
        raise OTError("transportation simplex failed to terminate")

    return float(sum(cost[i, j] * val for (i, j), val in x.items()))


def exact_ot_small(cost: CostMatrix, p: SimplexVector, q: SimplexVector) -> float:
    """Exact optimal transport value for n <= 32 (independent LP oracle)."""
    n = cost.n
    if n > 32:
        raise TooLargeError(f"exact oracle supports n <= 32, got {n}")
    if p.n != n or q.n != n:
        raise ShapeMismatchError("marginals do not match the cost matrix")
    if n == 1:
        return float(cost.entries[0, 0])
    if n == 2:
        return _exact_ot_2x2(cost.entries, p.values, q.values)
    return _transportation_simplex(cost.entries, p.values, q.values)


def fit_loglog_slope(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares line through (ln x, ln y); returns (slope, intercept, r2)."""
    if len(points) < 2:
        raise DegenerateInputError("need at least two points")
    xs = np.array([pt[0] for pt in points], dtype=np.float64)
    ys = np.array([pt[1] for pt in points], dtype=np.float64)
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise DegenerateInputError("log-log fit needs strictly positive coordinates")
    lx = np.log(xs)
    ly = np.log(ys)
    if np.unique(lx).shape[0] < 2:
        raise DegenerateInputError("need at least two distinct abscissae")
    mx = lx.mean()
    my = ly.mean()
    sxx = float(((lx - mx) ** 2).sum())
    sxy = float(((lx - mx) * (ly - my)).sum())
    slope = sxy / sxx
    intercept = my - slope * mx
    residuals = ly - (slope * lx + intercept)
    sstot = float(((ly - my) ** 2).sum())
    r2 = 1.0 if sstot == 0.0 else 1.0 - float((residuals**2).sum()) / sstot
    return slope, intercept, r2


# -- experiment harness --------------------------------------------------------


def make_instance(side: int, seed: int) -> tuple[SimplexVector, SimplexVector, CostMatrix]:
    """Deterministic image-pair instance; the two images use spawned child seeds."""
    child_a, child_b = np.random.SeedSequence(seed).spawn(2)
    a = gen_synthetic_image(side, child_a)
    b = gen_synthetic_image(side, child_b)
    return image_pair_to_problem(a, b)


def _run_cell(algo: str, side: int, batch: int, eps_abs: float, seed: int) -> ExperimentRecord:
    p, q, cost = make_instance(side, seed)
    ops = OpCounter()
    start = time.perf_counter()
    result: ApproxResult
    if algo == ALGO_PDASMD_LINF:
        cfg = SolverConfig(norm_kind=NormKind.LINF, batch=batch, seed=seed)
        result = approximate_ot(cost, p, q, eps_abs, cfg, ops)
    elif algo == ALGO_PDASMD_L2:
        cfg = SolverConfig(norm_kind=NormKind.L2, batch=batch, seed=seed)
        result = approximate_ot(cost, p, q, eps_abs, cfg, ops)
    elif algo == ALGO_SINKHORN:
        result = approximate_ot_classical(cost, p, q, eps_abs, ops=ops)
    elif algo == ALGO_STOCHASTIC_SINKHORN:
        result = approximate_ot_stochastic(cost, p, q, eps_abs, seed=seed, ops=ops)
    else:
        raise OTError(f"unknown algorithm {algo!r}")
    wall_ms = (time.perf_counter() - start) * 1000.0
    return ExperimentRecord(
        algo=algo,
        n=side * side,
        B=batch,
        eps=eps_abs,
        ops_total=ops.total(),
        iterations=result.solve.epochs_run if result.solve is not None else 0,
        residual=marginal_residual(result.plan, p, q),
        cost=transport_cost(cost, result.plan),
        seed=seed,
        wall_ms=wall_ms,
        converged=result.converged,
    )


def _cell_key(record: ExperimentRecord) -> tuple:
    return (record.algo, record.n, record.B, record.eps, record.seed)


def _run_cells(cells: list[tuple], jobs: int) -> list[ExperimentRecord]:
    if jobs <= 1:
        records = [_run_cell(*cell) for cell in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_cell, *zip(*cells)))
    return sorted(records, key=_cell_key)


def _absolute_eps(eps: float, relative: bool, cost: CostMatrix) -> float:
    return eps * cost.max_abs if relative else eps


def run_scaling_experiment(
    sides: Sequence[int],
    eps: float,
    algo: str,
    seeds: Sequence[int],
    relative: bool = True,
    jobs: int = 1,
) -> list[ExperimentRecord]:
    """Operation counts versus problem size n = side**2 at fixed accuracy."""
    if algo not in ALL_ALGOS:
        raise OTError(f"unknown algorithm {algo!r}; choose from {ALL_ALGOS}")
    cells = []
    for side in sides:
        for seed in seeds:
            _, _, cost = make_instance(side, seed)
            cells.append((algo, side, 1, _absolute_eps(eps, relative, cost), seed))
    return _run_cells(cells, jobs)


def run_batch_experiment(
    side: int,
    batches: Sequence[int],
    eps: float,
    seeds: Sequence[int],
    relative: bool = True,
    jobs: int = 1,
) -> list[ExperimentRecord]:
    """Operation counts versus batch size for the batched solver (LInf geometry)."""
    n = side * side
    for batch in batches:
        if batch < 1 or batch > n:
            raise OTError(f"batch {batch} out of range for n={n}")
    cells = []
    for batch in batches:
        for seed in seeds:
            _, _, cost = make_instance(side, seed)
            cells.append((ALGO_PDASMD_LINF, side, batch, _absolute_eps(eps, relative, cost), seed))
    return _run_cells(cells, jobs)


def run_eps_experiment(
    side: int,
    eps_list: Sequence[float],
    algos: Sequence[str],
    seeds: Sequence[int],
    relative: bool = True,
    jobs: int = 1,
) -> list[ExperimentRecord]:
    """Operation counts versus target accuracy at fixed size."""
    if max(eps_list) / min(eps_list) < 8.0 - 1e-12:
        raise DegenerateInputError("eps values must span at least a factor of 8")
    for algo in algos:
        if algo not in ALL_ALGOS:
            raise OTError(f"unknown algorithm {algo!r}; choose from {ALL_ALGOS}")
    cells = []
    for algo in algos:
        for eps in eps_list:
            for seed in seeds:
                _, _, cost = make_instance(side, seed)
                cells.append((algo, side, 1, _absolute_eps(eps, relative, cost), seed))
    return _run_cells(cells, jobs)


def strip_timing(records: Iterable[ExperimentRecord]) -> list[ExperimentRecord]:
    """Zero out wall-clock fields so emitted files are byte-reproducible."""
    return [replace(r, wall_ms=0.0) for r in records]


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def records_to_csv(records: Iterable[ExperimentRecord]) -> str:
    """Deterministic CSV table: fixed header, rows sorted by cell key."""
    lines = [CSV_HEADER]
    for r in sorted(records, key=_cell_key):
        lines.append(
            ",".join(
                [
                    r.algo,
                    str(r.n),
                    str(r.B),
                    _fmt(r.eps),
                    str(r.ops_total),
                    str(r.iterations),
                    _fmt(r.residual),
                    _fmt(r.cost),
                    str(r.seed),
                    _fmt(r.wall_ms),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def mean_ops_by(records: Iterable[ExperimentRecord], key: str) -> list[tuple[float, float]]:
    """Seed-averaged operation totals grouped by one record field (for slope fits)."""
    groups: dict[float, list[int]] = {}
    for r in records:
        groups.setdefault(float(getattr(r, key)), []).append(r.ops_total)
    return [(k, float(np.mean(v))) for k, v in sorted(groups.items())]
