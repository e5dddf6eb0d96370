"""Shared test utilities: tiny instances, enumeration oracles, and a
feature-only synthetic state for exercising policies without an LP."""

import numpy as np

from cutlab.milp import MilpInstance


class SyntheticState:
    """Feature-matrix stand-in for CutSelState (policies only read these)."""

    def __init__(self, F, candidates=None):
        self._F = np.asarray(F, dtype=float)
        self.candidates = candidates

    @property
    def n_candidates(self):
        return self._F.shape[0]

    def feature_matrix(self):
        return self._F


def gomory_toy():
    """max x+y s.t. 3x+2y <= 6, -3x+2y <= 0, x,y in [0,3] integer.

    LP optimum (1, 1.5); the integer optimum is (1, 1) with value 2.
    """
    return MilpInstance(
        c=np.array([-1.0, -1.0]),
        A=np.array([[3.0, 2.0], [-3.0, 2.0]]),
        b=np.array([6.0, 0.0]),
        int_idx=(0, 1),
        lb=np.zeros(2),
        ub=np.full(2, 3.0),
    )


def knapsack_toy():
    """A tiny knapsack whose root LP is fractional."""
    return MilpInstance(
        c=np.array([-4.0, -5.0, -3.0, -6.0]),
        A=np.array([[3.0, 4.0, 2.0, 5.0]]),
        b=np.array([8.0]),
        int_idx=(0, 1, 2, 3),
        lb=np.zeros(4),
        ub=np.ones(4),
    )


def random_instance(rng, n=4, m=3, box=3):
    """Random pure-integer instance with a feasible anchor point."""
    anchor = rng.integers(0, box + 1, size=n).astype(float)
    A = rng.integers(-3, 4, size=(m, n)).astype(float)
    b = A @ anchor + rng.integers(0, 4, size=m)
    c = rng.integers(-5, 6, size=n).astype(float)
    return MilpInstance(c=c, A=A, b=b, int_idx=tuple(range(n)),
                        lb=np.zeros(n), ub=np.full(n, float(box)))


def enumerate_vertices_obj(c, A, b, lb, ub, tol=1e-9):
    """Brute-force optimum of min c.x over {Ax <= b, lb <= x <= ub}.

    Enumerates all basic points: choose n active constraints from rows and
    bounds, solve the square system, keep feasible points.  Exponential;
    test-sized problems only.
    """
    import itertools

    n = c.size
    rows = [(A[i], b[i]) for i in range(A.shape[0])]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows.append((-e, -lb[j]))
        rows.append((e, ub[j]))
    best = None
    for combo in itertools.combinations(range(len(rows)), n):
        M = np.array([rows[i][0] for i in combo])
        rhs = np.array([rows[i][1] for i in combo])
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, rhs)
        if np.any(A @ x > b + 1e-7) or np.any(x < lb - 1e-7) \
                or np.any(x > ub + 1e-7):
            continue
        val = float(c @ x)
        if best is None or val < best - tol:
            best = val
    return best
