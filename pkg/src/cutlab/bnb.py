"""Minimal best-first branch-and-bound over a cut-augmented relaxation.

Used as a deterministic solver proxy: every processed node costs one LP
solve (one work unit), and the bound trace it emits feeds the primal-dual
integral metric.  Branching is most-fractional with floor/ceil children;
only LP-integral leaves update the incumbent (no rounding heuristics), which
keeps the trace sensitive to cut quality.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .milp import INT_TOL, CMP_TOL, BoundTrace, LpRelaxation, MilpInstance
from .simplex import LpStatus, solve_dense_lp


@dataclass
class BnbNode:
    """A subproblem: per-variable bound overrides plus bookkeeping."""

    lb: np.ndarray
    ub: np.ndarray
    depth: int
    parent_bound: float


@dataclass
class BnbResult:
    incumbent_x: np.ndarray | None
    incumbent_obj: float
    dual_bound: float
    nodes_processed: int
    trace: BoundTrace
    optimal: bool


def trivial_primal_bound(inst: MilpInstance) -> float:
    """Box maximum of c.x: a valid upper bound on z* for feasible instances."""
    return float(np.sum(np.maximum(inst.c * inst.lb, inst.c * inst.ub)))


def _most_fractional(x: np.ndarray, int_idx) -> int | None:
    """Fractional integer variable closest to .5; smallest index on ties."""
    best_j, best_dist = None, INT_TOL
    for j in int_idx:
        dist = abs(x[j] - round(x[j]))
        if dist > best_dist + CMP_TOL:
            best_j, best_dist = j, dist
    return best_j


def solve_bnb(rel: LpRelaxation, inst: MilpInstance, node_limit: int = 200,
              work_offset: int = 0) -> BnbResult:
    """Best-first (by LP bound, FIFO ties) branch and bound.

    Records (work_units, primal, dual) after every processed node, starting
    the primal at the trivial box bound until an incumbent exists.  Stops at
    optimality or after ``node_limit`` nodes; exhaustion returns the best
    known pair with a positive gap.
    """
    A, b = rel.all_rows()
    c = rel.base.c
    primal = trivial_primal_bound(inst)
    incumbent = None
    trace = BoundTrace()
    counter = 0
    heap = []
    root = BnbNode(lb=inst.lb.copy(), ub=inst.ub.copy(), depth=0,
                   parent_bound=-np.inf)
    heapq.heappush(heap, (root.parent_bound, counter, root))
    counter += 1
    work = work_offset
    processed = 0

    while heap and processed < node_limit:
        bound_key, _, node = heapq.heappop(heap)
        if incumbent is not None and bound_key >= primal - 1e-9:
            continue  # pruned without an LP solve
        sol = solve_dense_lp(c, A, b, node.lb, node.ub)
        processed += 1
        work += 1
        if sol.status is LpStatus.OPTIMAL and sol.obj < primal - 1e-9:
            x = sol.x
            j = _most_fractional(x, inst.int_idx)
            if j is None:
                primal = sol.obj
                incumbent = x.copy()
            else:
                down = BnbNode(lb=node.lb.copy(), ub=node.ub.copy(),
                               depth=node.depth + 1, parent_bound=sol.obj)
                down.ub[j] = np.floor(x[j])
                up = BnbNode(lb=node.lb.copy(), ub=node.ub.copy(),
                             depth=node.depth + 1, parent_bound=sol.obj)
                up.lb[j] = np.ceil(x[j])
                for child in (down, up):
                    if np.all(child.lb <= child.ub + CMP_TOL):
                        heapq.heappush(heap,
                                       (child.parent_bound, counter, child))
                        counter += 1
        open_bounds = [entry[0] for entry in heap]
        if incumbent is not None:
            open_bounds.append(primal)
        dual = min(open_bounds) if open_bounds else primal
        dual = min(dual, primal)
        if not np.isfinite(dual):
            dual = sol.obj if sol.status is LpStatus.OPTIMAL else primal
        trace.append(work, primal, dual)

    solved = not heap or (
        incumbent is not None
        and all(entry[0] >= primal - 1e-9 for entry in heap))
    dual_final = trace.events[-1][2] if trace.events else primal
    if solved and incumbent is not None:
        dual_final = primal
        if trace.events:
            w = trace.events[-1][0]
            trace.events[-1] = (w, primal, primal)
    return BnbResult(incumbent_x=incumbent, incumbent_obj=primal,
                     dual_bound=dual_final, nodes_processed=processed,
                     trace=trace, optimal=solved and incumbent is not None)
