"""Command-line front end: data generation, single solves, experiment suites.

Every run is reproducible from its command line: the seed (flag or the
``OT_SEED`` environment variable) fully determines the output, and emitted
files are byte-identical across repeats.  Wall-clock columns are therefore
written as zero unless ``--timing`` is passed.

Exit codes: 0 success, 1 validation/parse error, 2 solver hit its iteration
cap before the stopping criteria (the result file is still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .bench import (
    ALL_ALGOS,
    make_instance,
    exact_ot_small,
    records_to_csv,
    run_batch_experiment,
    run_eps_experiment,
    run_scaling_experiment,
    strip_timing,
)
from .core import (
    OTError,
    load_problem,
    marginal_residual,
    plan_to_dict,
    save_problem,
    transport_cost,
)
from .counting import OpCounter
from .pdasmd import ApproxResult, SolverConfig, approximate_ot
from .semidual import NormKind
from .sinkhorn import approximate_ot_classical, approximate_ot_stochastic

_SOLVE_ALGOS = ("pdasmd", "pdasmd-b", "sinkhorn", "stoch-sinkhorn")


def _default_seed() -> int:
    raw = os.environ.get("OT_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        return 0


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otmd",
        description="Entropy-regularized optimal transport solvers and scaling benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic image-pair problem as JSON")
    gen.add_argument("--side", type=int, required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen_data)

    solve = sub.add_parser("solve", help="run one eps-solution pipeline on a problem file")
    solve.add_argument("--algo", choices=_SOLVE_ALGOS, required=True)
    solve.add_argument("--norm", choices=["l2", "linf"], default="linf")
    solve.add_argument("--eps", type=float, required=True, help="accuracy in cost units")
    solve.add_argument(
        "--eps-rel", action="store_true", help="interpret --eps as a multiple of max|C|"
    )
    solve.add_argument("--batch", type=int, default=1)
    solve.add_argument("--seed", type=int, default=None)
    solve.add_argument("--problem", required=True)
    solve.add_argument("--out", default=None, help="write plan + stats JSON here")
    solve.add_argument("--timing", action="store_true", help="include wall_ms in the output")
    solve.set_defaults(func=_cmd_solve)

    bench_n = sub.add_parser("bench-n", help="operation counts vs problem size")
    bench_n.add_argument("--sides", type=_int_list, required=True)
    bench_n.add_argument("--eps", type=float, required=True)
    bench_n.add_argument("--eps-rel", action="store_true")
    bench_n.add_argument("--seeds", type=_int_list, required=True)
    bench_n.add_argument("--algos", type=str, default=",".join(ALL_ALGOS))
    bench_n.add_argument("--csv", required=True)
    bench_n.add_argument("--jobs", type=int, default=1)
    bench_n.add_argument("--timing", action="store_true")
    bench_n.set_defaults(func=_cmd_bench_n)

    bench_b = sub.add_parser("bench-batch", help="operation counts vs batch size")
    bench_b.add_argument("--side", type=int, required=True)
    bench_b.add_argument("--batches", type=_int_list, required=True)
    bench_b.add_argument("--eps", type=float, required=True)
    bench_b.add_argument("--eps-rel", action="store_true")
    bench_b.add_argument("--seeds", type=_int_list, required=True)
    bench_b.add_argument("--csv", required=True)
    bench_b.add_argument("--jobs", type=int, default=1)
    bench_b.add_argument("--timing", action="store_true")
    bench_b.set_defaults(func=_cmd_bench_batch)

    bench_e = sub.add_parser("bench-eps", help="operation counts vs target accuracy")
    bench_e.add_argument("--side", type=int, required=True)
    bench_e.add_argument("--eps-list", type=_float_list, required=True)
    bench_e.add_argument("--eps-rel", action="store_true")
    bench_e.add_argument("--seeds", type=_int_list, required=True)
    bench_e.add_argument("--algos", type=str, default=",".join(ALL_ALGOS))
    bench_e.add_argument("--csv", required=True)
    bench_e.add_argument("--jobs", type=int, default=1)
    bench_e.add_argument("--timing", action="store_true")
    bench_e.set_defaults(func=_cmd_bench_eps)

    oracle = sub.add_parser("oracle", help="print the exact OT value for n <= 32")
    oracle.add_argument("--problem", required=True)
    oracle.set_defaults(func=_cmd_oracle)

    return parser


def _cmd_gen_data(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    p, q, cost = make_instance(args.side, seed)
    save_problem(args.out, cost, p, q)
    return 0


def _cmd_solve(args: argparse.Namespace) -> int:
    import time

    seed = args.seed if args.seed is not None else _default_seed()
    cost, p, q = load_problem(args.problem)
    eps = args.eps * cost.max_abs if args.eps_rel else args.eps
    norm = NormKind.L2 if args.norm == "l2" else NormKind.LINF
    ops = OpCounter()
    start = time.perf_counter()
    result: ApproxResult
    if args.algo == "pdasmd":
        cfg = SolverConfig(norm_kind=norm, batch=1, seed=seed)
        result = approximate_ot(cost, p, q, eps, cfg, ops)
    elif args.algo == "pdasmd-b":
        cfg = SolverConfig(norm_kind=norm, batch=args.batch, seed=seed)
        result = approximate_ot(cost, p, q, eps, cfg, ops)
    elif args.algo == "sinkhorn":
        result = approximate_ot_classical(cost, p, q, eps, ops=ops)
    else:
        result = approximate_ot_stochastic(cost, p, q, eps, seed=seed, ops=ops)
    wall_ms = (time.perf_counter() - start) * 1000.0

    payload = plan_to_dict(result.plan)
    payload.update(
        {
            "algo": args.algo,
            "converged": result.converged,
            "cost": transport_cost(cost, result.plan),
            "eps": eps,
            "iterations": result.solve.epochs_run if result.solve is not None else 0,
            "ops_total": ops.total(),
            "residual": marginal_residual(result.plan, p, q),
            "seed": seed,
        }
    )
    if args.timing:
        payload["wall_ms"] = wall_ms
    text = json.dumps(payload, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if result.converged else 2


def _write_csv(path: str, records, timing: bool) -> None:
    if not timing:
        records = strip_timing(records)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(records_to_csv(records))


def _cmd_bench_n(args: argparse.Namespace) -> int:
    records = []
    for algo in [a for a in args.algos.split(",") if a]:
        records.extend(
            run_scaling_experiment(
                args.sides, args.eps, algo, args.seeds, relative=args.eps_rel, jobs=args.jobs
            )
        )
    _write_csv(args.csv, records, args.timing)
    return 0 if all(r.converged for r in records) else 2


def _cmd_bench_batch(args: argparse.Namespace) -> int:
    records = run_batch_experiment(
        args.side, args.batches, args.eps, args.seeds, relative=args.eps_rel, jobs=args.jobs
    )
    _write_csv(args.csv, records, args.timing)
    return 0 if all(r.converged for r in records) else 2


def _cmd_bench_eps(args: argparse.Namespace) -> int:
    records = run_eps_experiment(
        args.side,
        args.eps_list,
        [a for a in args.algos.split(",") if a],
        args.seeds,
        relative=args.eps_rel,
        jobs=args.jobs,
    )
    _write_csv(args.csv, records, args.timing)
    return 0 if all(r.converged for r in records) else 2


def _cmd_oracle(args: argparse.Namespace) -> int:
    cost, p, q = load_problem(args.problem)
    value = exact_ot_small(cost, p, q)
    print(f"{value:.17g}")
    return 0


def dispatch(argv: list[str]) -> int:
    """Parse and run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    try:
        return args.func(args)
    except (OTError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
