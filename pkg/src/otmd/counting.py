"""Deterministic tally of scalar arithmetic performed by solver kernels.

The cost model: every scalar add/sub, mul, div, comparison (incl. abs, max,
sign tests) counts as one operation of its kind; every exp and log counts as
one.  Kernels tally with closed-form counts per call, so two runs with the
same inputs and seed report identical totals.

Counted code paths are the solver kernels proper: gradient evaluations,
iterate coupling / mirror / proximal steps, primal accumulation, Sinkhorn
scaling updates, and feasibility rounding.  Stopping-rule monitoring,
validation, and I/O are not counted.
"""

from __future__ import annotations


class OpCounter:
    """Mutable counter of scalar operations; totals only ever grow."""

    __slots__ = ("adds", "muls", "divs", "exps", "logs", "compares")

    def __init__(self) -> None:
        self.adds = 0
        self.muls = 0
        self.divs = 0
        self.exps = 0
        self.logs = 0
        self.compares = 0

    def tally(
        self,
        adds: int = 0,
        muls: int = 0,
        divs: int = 0,
        exps: int = 0,
        logs: int = 0,
        compares: int = 0,
    ) -> None:
        if min(adds, muls, divs, exps, logs, compares) < 0:
            raise ValueError("operation counts cannot decrease")
        self.adds += adds
        self.muls += muls
        self.divs += divs
        self.exps += exps
        self.logs += logs
        self.compares += compares

    def total(self) -> int:
        return self.adds + self.muls + self.divs + self.exps + self.logs + self.compares

    def snapshot(self) -> "OpCounter":
        """Frozen copy of the current totals."""
        out = OpCounter()
        out.adds = self.adds
        out.muls = self.muls
        out.divs = self.divs
        out.exps = self.exps
        out.logs = self.logs
        out.compares = self.compares
        return out

    def __repr__(self) -> str:
        return (
            f"OpCounter(adds={self.adds}, muls={self.muls}, divs={self.divs}, "
            f"exps={self.exps}, logs={self.logs}, compares={self.compares})"
        )
