"""Gauss-Jordan elimination over the field of rational expressions."""
from __future__ import annotations

import random
from typing import List, NamedTuple, Sequence

from .expr import ZERO, EvaluationError, Expression, as_expression, evaluate


class InconsistentSystemError(ValueError):
    """``A x = b`` has no solution.

    ``multipliers`` is a certificate: ``sum_i y_i A[i] == 0`` while
    ``sum_i y_i b[i] == residual != 0``.
    """

    def __init__(self, multipliers, residual):
        super().__init__(f"inconsistent linear system (combined residual {residual})")
        self.multipliers = multipliers
        self.residual = residual


class SymbolicPivotError(ArithmeticError):
    """A pivot candidate could not be decided to be nonzero symbolically."""


class LinearSolution(NamedTuple):
    values: List[Expression]
    free: List[int]

    @property
    def unique(self) -> bool:
        return not self.free


def _numerically_zero(e: Expression, seed=0, probes=8) -> bool:
    names = sorted(e.free_symbols)
    rng = random.Random(seed)
    seen = 0
    for _ in range(10 * probes):
        pt = {n: rng.uniform(-1, 1) for n in names}
        try:
            v = evaluate(e, pt)
        except (EvaluationError, OverflowError):
            continue
        if abs(v) > 1e-10:
            return False
        seen += 1
        if seen >= probes:
            break
    return True


def solve_linear(A: Sequence[Sequence[object]], b: Sequence[object]) -> LinearSolution:
    """Solve ``A x = b`` exactly.

    Pivots are chosen as the nonzero entry of lowest total degree, ties broken
    by (row, column). Free unknowns are set to zero and reported in
    ``LinearSolution.free``.

    Raises :class:`InconsistentSystemError` with a certificate when there is
    no solution, and :class:`SymbolicPivotError` when an entry involving
    analytic functions is not structurally zero but vanishes at every probe.
    """
    m = len(A)
    n = len(A[0]) if m else 0
    rows = []
    for i, row in enumerate(A):
        if len(row) != n:
            raise ValueError("ragged coefficient matrix")
        tag = [ZERO] * m
        tag[i] = Expression(1)
        rows.append([as_expression(x) for x in row] + [as_expression(b[i])] + tag)
    free_rows = set(range(m))
    free_cols = set(range(n))
    pivots = []
    while True:
        best = None
        for r in sorted(free_rows):
            for c in sorted(free_cols):
                e = rows[r][c]
                if e.is_zero:
                    continue
                key = (e.total_degree, r, c)
                if best is None or key < best:
                    best = key
        if best is None:
            break
        _, r, c = best
        piv = rows[r][c]
        if piv.has_functions and _numerically_zero(piv):
            raise SymbolicPivotError(f"cannot decide whether pivot {piv} is zero")
        inv = 1 / piv
        rows[r] = [x * inv if not x.is_zero else x for x in rows[r]]
        for r2 in range(m):
            if r2 == r:
                continue
            f = rows[r2][c]
            if f.is_zero:
                continue
            rows[r2] = [x - f * y if not y.is_zero else x for x, y in zip(rows[r2], rows[r])]
        pivots.append((r, c))
        free_rows.discard(r)
        free_cols.discard(c)
    for r in sorted(free_rows):
        rhs = rows[r][n]
        if not rhs.is_zero:
            if rhs.has_functions and _numerically_zero(rhs):
                raise SymbolicPivotError(f"cannot decide whether residual {rhs} is zero")
            raise InconsistentSystemError(rows[r][n + 1:], rhs)
    x = [ZERO] * n
    for r, c in pivots:
        x[c] = rows[r][n]
    return LinearSolution(x, sorted(free_cols))
