"""Dense bounded-variable primal simplex with tableau access, plus a
lexicographic LP solver built from sequential solves.

The solver works on ``min c.x  s.t.  A x <= b, lb <= x <= ub`` with one slack
per row.  Variable bounds are handled by the bounded-variable mechanics
(nonbasic variables sit at a finite bound, entering variables may bound-flip),
not as extra rows.  Pivot selection uses Bland's rule everywhere: smallest
eligible variable index enters, ties in the ratio test leave by smallest
basic variable index.  That makes every solve deterministic and cycle-free.

Phase 1 adds one artificial per initially-infeasible row and minimizes their
sum; phase 2 prices the true objective.  The final tableau (rows of
``B^-1 A`` over all columns, basic values, variable states) is exposed because
the Gomory separator reads it directly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .milp import FEAS_TOL, CMP_TOL, LpRelaxation

PIVOT_TOL = 1e-9       # smallest usable pivot magnitude in the ratio test
TINY_PIVOT = 1e-10     # below this every candidate pivot counts as degenerate
MAX_PIVOTS = 200_000

AT_LOWER, AT_UPPER, BASIC = 0, 1, 2


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class SimplexError(RuntimeError):
    pass


class DegeneratePivotError(SimplexError):
    """Every ratio-test candidate has pivot magnitude below 1e-10."""


class InfeasibleError(SimplexError):
    pass


class _UnboundedDirection(SimplexError):
    pass


@dataclass
class FinalTableau:
    """Snapshot of the optimal basis.

    ``rows`` is ``B^-1 A_full`` over structural then slack columns, ``xb``
    the basic values (one per row), ``basis`` the basic variable index per
    row, ``state`` the AT_LOWER/AT_UPPER/BASIC tag per column.  ``lb``/``ub``
    cover all columns (slack bounds are [0, inf)).  ``row_flip`` records rows
    that were negated during phase-1 setup, which matters when extracting
    ``B^-1`` from the slack block.
    """

    rows: np.ndarray
    xb: np.ndarray
    basis: np.ndarray
    state: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n_struct: int
    row_flip: np.ndarray
    rhs: np.ndarray
    A_orig: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_cols(self) -> int:
        return self.rows.shape[1]

    def basis_inverse(self) -> np.ndarray:
        """B^-1 recovered from the slack block of the tableau."""
        m = self.n_rows
        slack_cols = self.rows[:, self.n_struct:self.n_struct + m]
        return slack_cols * np.where(self.row_flip, -1.0, 1.0)[None, :]


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None
    obj: float | None
    basis: list | None
    tableau: FinalTableau | None


def _bland_entering(obj_row, state, lb, ub):
    for j in range(obj_row.size):
        if state[j] == BASIC or ub[j] - lb[j] <= CMP_TOL:
            continue
        rc = obj_row[j]
        if state[j] == AT_LOWER and rc < -CMP_TOL:
            return j, 1.0
        if state[j] == AT_UPPER and rc > CMP_TOL:
            return j, -1.0
    return None, 0.0


def _run_phase(T, obj_row, xb, basis, state, lb, ub, values):
    """Run Bland pivots until no entering column remains.  Mutates everything."""
    m = T.shape[0]
    pivots = 0
    while True:
        j, direction = _bland_entering(obj_row, state, lb, ub)
        if j is None:
            return
        pivots += 1
        if pivots > MAX_PIVOTS:
            raise SimplexError("pivot limit exceeded")
        col = direction * T[:, j]
        t_bound = ub[j] - lb[j]
        t_best = np.inf
        leave = -1
        blocked_tiny = False
        for i in range(m):
            g = col[i]
            bvar = basis[i]
            if g > PIVOT_TOL:
                ti = max(xb[i] - lb[bvar], 0.0) / g
            elif g < -PIVOT_TOL:
                if not np.isfinite(ub[bvar]):
                    continue
                ti = max(ub[bvar] - xb[i], 0.0) / (-g)
            else:
                if abs(g) > 0.0:
                    blocked_tiny = True
                continue
            if (ti < t_best - CMP_TOL
                    or (abs(ti - t_best) <= CMP_TOL and leave >= 0
                        and bvar < basis[leave])):
                t_best, leave = ti, i
        if t_bound <= t_best:
            if not np.isfinite(t_bound):
                if blocked_tiny:
                    raise DegeneratePivotError(
                        f"only pivots below {TINY_PIVOT} available in column {j}")
                raise _UnboundedDirection(f"column {j}")
            # Bound flip: the entering variable crosses to its other bound.
            xb -= col * t_bound
            new_state = AT_UPPER if direction > 0 else AT_LOWER
            state[j] = new_state
            values[j] = ub[j] if new_state == AT_UPPER else lb[j]
            continue
        pivot = T[leave, j]
        xb -= col * t_best
        enter_value = values[j] + direction * t_best
        out = basis[leave]
        # The leaving variable parks at whichever of its bounds it reached.
        if col[leave] > 0:
            state[out] = AT_LOWER
            values[out] = lb[out]
        else:
            state[out] = AT_UPPER
            values[out] = ub[out]
        T[leave, :] /= pivot
        colj = T[:, j].copy()
        colj[leave] = 0.0
        nz = np.flatnonzero(colj)
        if nz.size:
            T[nz, :] -= np.outer(colj[nz], T[leave, :])
        coef = obj_row[j]
        if coef != 0.0:
            obj_row -= coef * T[leave, :]
        basis[leave] = j
        state[j] = BASIC
        xb[leave] = enter_value


def solve_dense_lp(c, A, b, lb, ub) -> LpSolution:
    """Solve ``min c.x  s.t.  A x <= b, lb <= x <= ub`` deterministically.

    All structural bounds must be finite.  Returns an OPTIMAL solution with
    the final tableau, INFEASIBLE, or UNBOUNDED (unreachable for box-bounded
    structural variables, kept for API completeness).
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, c.size)
    b = np.asarray(b, dtype=float).ravel()
    lb = np.asarray(lb, dtype=float).ravel()
    ub = np.asarray(ub, dtype=float).ravel()
    n, m = c.size, b.size
    if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
        raise SimplexError("structural variables must be box-bounded")

    # Columns: structural, slack (one per row), artificial (per infeasible row).
    slack0 = b - A @ lb
    art_rows = np.flatnonzero(slack0 < -FEAS_TOL)
    n_art = art_rows.size
    K = n + m + n_art
    T = np.zeros((m, K))
    T[:, :n] = A
    T[np.arange(m), n + np.arange(m)] = 1.0
    row_flip = np.zeros(m, dtype=bool)
    lb_all = np.concatenate([lb, np.zeros(m + n_art)])
    ub_all = np.concatenate([ub, np.full(m + n_art, np.inf)])

    basis = np.array([n + i for i in range(m)], dtype=int)
    state = np.full(K, AT_LOWER, dtype=np.int8)
    state[basis] = BASIC
    values = lb_all.copy()
    xb = slack0.copy()

    for a_pos, i in enumerate(art_rows):
        T[i, :] *= -1.0
        row_flip[i] = True
        art_col = n + m + a_pos
        T[i, art_col] = 1.0
        state[n + i] = AT_LOWER
        values[n + i] = 0.0
        basis[i] = art_col
        state[art_col] = BASIC
        xb[i] = -slack0[i]

    if n_art:
        c_ph1 = np.zeros(K)
        c_ph1[n + m:] = 1.0
        obj_row = c_ph1 - c_ph1[basis] @ T
        try:
            _run_phase(T, obj_row, xb, basis, state, lb_all, ub_all, values)
        except _UnboundedDirection as exc:
            raise SimplexError(f"phase-1 unbounded: {exc}") from exc
        art_mask = np.isin(basis, np.arange(n + m, K))
        ph1 = float(np.sum(xb[art_mask])) + float(
            np.sum(values[n + m:][state[n + m:] != BASIC]))
        if ph1 > FEAS_TOL:
            return LpSolution(LpStatus.INFEASIBLE, None, None, None, None)
        # Pivot leftover artificials (basic at zero) out of the basis.
        for i in range(m):
            if basis[i] < n + m:
                continue
            for j in range(n + m):
                if state[j] != BASIC and abs(T[i, j]) > PIVOT_TOL \
                        and ub_all[j] - lb_all[j] > CMP_TOL:
                    out = basis[i]
                    state[out] = AT_LOWER
                    T[i, :] /= T[i, j]
                    colj = T[:, j].copy()
                    colj[i] = 0.0
                    nz = np.flatnonzero(colj)
                    if nz.size:
                        T[nz, :] -= np.outer(colj[nz], T[i, :])
                    basis[i] = j
                    state[j] = BASIC
                    xb[i] = values[j]  # degenerate swap, step zero
                    break
        # Freeze any remaining artificial (redundant row) at zero.
        ub_all[n + m:] = 0.0

    c_all = np.zeros(K)
    c_all[:n] = c
    obj_row = c_all - c_all[basis] @ T
    try:
        _run_phase(T, obj_row, xb, basis, state, lb_all, ub_all, values)
    except _UnboundedDirection:
        return LpSolution(LpStatus.UNBOUNDED, None, None, None, None)

    x_all = values.copy()
    x_all[basis] = xb
    x = x_all[:n]
    obj = float(c @ x)
    resid = A @ x - b if m else np.zeros(0)
    if (m and np.any(resid > 1e-6)) or np.any(x < lb - 1e-6) \
            or np.any(x > ub + 1e-6):
        raise SimplexError("solution failed the feasibility post-check")
    tableau = FinalTableau(
        rows=T[:, :n + m].copy(),
        xb=xb.copy(),
        basis=basis.copy(),
        state=state[:n + m].copy(),
        lb=lb_all[:n + m].copy(),
        ub=ub_all[:n + m].copy(),
        n_struct=n,
        row_flip=row_flip,
        rhs=b.copy(),
        A_orig=A.copy(),
    )
    return LpSolution(LpStatus.OPTIMAL, x, obj, [int(v) for v in basis],
                      tableau)


def solve_lp(rel: LpRelaxation) -> LpSolution:
    """Solve the LP relaxation (base rows followed by cut rows in order)."""
    A, b = rel.all_rows()
    return solve_dense_lp(rel.base.c, A, b, rel.base.lb, rel.base.ub)


@dataclass
class LexLpSolution:
    """Solution of lexmax {z_0, ..., z_n} over R x P.

    ``z`` has n+1 entries, z_0 the objective value and z_i = x_i; ``x`` is
    the same point in the extended (z0-first) variable order.
    """

    z: np.ndarray
    x: np.ndarray


LEX_FIX_TOL = 1e-9


def solve_lex_lp(inst, extra_rows=()) -> LexLpSolution:
    """Lexicographically maximize (c.x, x_1, ..., x_n) over the polyhedron.

    ``inst`` provides ``c`` (positive integer objective), ``rows`` (list of
    (a, b) pairs over x), ``d`` (box bound) and ``n``.  ``extra_rows`` are
    (a_ext, b_ext) pairs over the extended variables (z0, x_1..x_n), used for
    accumulated cutting planes.  Solved as n+1 sequential LPs: each stage
    maximizes the next coordinate with all earlier coordinates pinned to
    their stage optima by a pair of tolerance-tightened inequality rows.
    """
    c = np.asarray(inst.c, dtype=float)
    n = int(inst.n)
    d = float(inst.d)
    n_ext = n + 1
    rows_a = [np.concatenate([[1.0], -c])]          # z0 - c.x <= 0
    rows_b = [0.0]
    rows_a.append(np.concatenate([[-1.0], c]))      # c.x - z0 <= 0
    rows_b.append(0.0)
    for a, bb in inst.rows:
        rows_a.append(np.concatenate([[0.0], np.asarray(a, dtype=float)]))
        rows_b.append(float(bb))
    for a, bb in extra_rows:
        rows_a.append(np.asarray(a, dtype=float))
        rows_b.append(float(bb))
    lb = np.zeros(n_ext)
    ub = np.concatenate([[d * float(np.sum(c))], np.full(n, d)])

    z = np.zeros(n_ext)
    for stage in range(n_ext):
        obj = np.zeros(n_ext)
        obj[stage] = -1.0  # maximize coordinate `stage`
        sol = solve_dense_lp(obj, np.array(rows_a), np.array(rows_b), lb, ub)
        if sol.status is not LpStatus.OPTIMAL:
            raise InfeasibleError(f"lex stage {stage} is {sol.status.value}")
        v = float(sol.x[stage])
        z[stage] = v
        pin = np.zeros(n_ext)
        pin[stage] = 1.0
        rows_a.append(pin.copy())
        rows_b.append(v + LEX_FIX_TOL)
        rows_a.append(-pin)
        rows_b.append(-(v - LEX_FIX_TOL))
    return LexLpSolution(z=z, x=z.copy())
