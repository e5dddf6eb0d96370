"""Finitely terminating lexicographic cutting-plane algorithm for ILPs.

Problems are ``lexmax (c.x, x_1, ..., x_n)`` with positive integer objective
``c`` and a polyhedron inside the box [0, d]^n containing at least one
lattice point.  Each iteration solves the lexicographic LP relaxation over
the extended variables (z0, x), generates the n+1 coupled cutting planes at
the fractional optimum, adds the one indexed by the first fractional
coordinate, and repeats.  The rounding map ``alpha`` strictly decreases
lexicographically at every iteration, which bounds the iteration count by
d^(n+1) * (1 + sum(c)).
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .cuts import lex_cuts
from .milp import CMP_TOL, INT_TOL, ValidationError
from .simplex import LexLpSolution, solve_lex_lp


class ConvergenceFailureError(RuntimeError):
    pass


class LexOrder(enum.Enum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


@dataclass(frozen=True)
class IlpInstance:
    """lexmax {c.x : x in P cap Z^n}, P inside [0, d]^n, c in Z_+^n."""

    c: np.ndarray
    rows: tuple          # (a, b) pairs over x
    d: int
    check_feasible: bool = True

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        if c.size == 0:
            raise ValidationError("empty objective")
        if np.any(np.abs(c - np.round(c)) > CMP_TOL) or np.any(c < 1 - CMP_TOL):
            raise ValidationError("objective must be a positive integer vector")
        if int(self.d) < 1:
            raise ValidationError("d must be a positive integer")
        rows = tuple((np.asarray(a, dtype=float).ravel(), float(b))
                     for a, b in self.rows)
        for a, _ in rows:
            if a.size != c.size:
                raise ValidationError("row length differs from n")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "d", int(self.d))
        if self.check_feasible and not list(self.lattice_points()):
            raise ValidationError("P contains no lattice point")

    @property
    def n(self) -> int:
        return self.c.size

    def lattice_points(self):
        """All integer points of P inside the box (small n only)."""
        grids = np.meshgrid(*[np.arange(self.d + 1)] * self.n, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1).astype(float)
        for a, b in self.rows:
            pts = pts[pts @ a <= b + 1e-9]
        return [p for p in pts]

    def lex_optimum(self) -> np.ndarray:
        """Enumeration oracle: the lexmax (c.x, x) over the lattice."""
        best = None
        for p in self.lattice_points():
            z = np.concatenate([[float(self.c @ p)], p])
            if best is None or lex_compare(best, z) is LexOrder.LESS:
                best = z
        if best is None:
            raise ValidationError("no feasible lattice point")
        return best


@dataclass(frozen=True)
class AlphaVector:
    """The integral rounding of a fractional vector used by the
    termination argument: floor entries up to the first fractional index,
    the box bound d afterwards."""

    values: tuple

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)


def lex_compare(x, y, tol: float = 1e-9) -> LexOrder:
    """First differing coordinate decides; entries within ``tol`` are equal."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValidationError("lex_compare needs equal lengths")
    for a, b in zip(x, y):
        if abs(a - b) <= tol:
            continue
        return LexOrder.LESS if a < b else LexOrder.GREATER
    return LexOrder.EQUAL


def _first_fractional(y: np.ndarray) -> int | None:
    for i, v in enumerate(y):
        if abs(v - round(v)) > INT_TOL:
            return i
    return None


def alpha(y, d: int) -> AlphaVector:
    """floor(y_i) for i <= k, d for i > k, with k the first fractional index;
    integral vectors map to themselves."""
    y = np.asarray(y, dtype=float).ravel()
    k = _first_fractional(y)
    if k is None:
        return AlphaVector(values=tuple(float(round(v)) for v in y))
    vals = []
    for i, v in enumerate(y):
        if i <= k:
            vals.append(float(np.floor(v + 1e-9)))
        else:
            vals.append(float(d))
    return AlphaVector(values=tuple(vals))


@dataclass
class LexRunTrace:
    iterations: list = field(default_factory=list)  # (z, k, alpha)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iteration,k,z,alpha\n")
        for it, (z, k, a) in enumerate(self.iterations):
            zs = ";".join(f"{v:.10g}" for v in z)
            als = ";".join(f"{v:.10g}" for v in a.values)
            buf.write(f"{it},{k},{zs},{als}\n")
        return buf.getvalue()


def iteration_bound(inst: IlpInstance) -> int:
    return int(round(inst.d ** (inst.n + 1) * (1 + float(np.sum(inst.c)))))


def run_lex_cutting_planes(inst: IlpInstance, max_iter: int | None = None):
    """Iterate lex-LP solves and single-cut additions until integrality.

    The added cut at each iteration is the one indexed by the first
    fractional coordinate of the current optimum.  Returns (optimal z,
    iteration count, trace of alpha values).
    """
    if max_iter is None:
        max_iter = iteration_bound(inst)
    extra_rows: list = []
    trace = LexRunTrace()
    for it in range(max_iter + 1):
        sol: LexLpSolution = solve_lex_lp(inst, extra_rows=extra_rows)
        z = sol.z
        k = _first_fractional(z)
        if k is None:
            z_int = np.round(z)
            return z_int, it, trace
        cuts = lex_cuts(z, inst.d, inst.n, source_round=it)
        chosen = cuts[k]
        extra_rows.append((chosen.a, chosen.beta))
        trace.iterations.append((z.copy(), k, alpha(z, inst.d)))
    raise ConvergenceFailureError(
        f"no integral optimum within {max_iter} iterations")


def check_monotone_decrease(trace: LexRunTrace) -> bool:
    """Strict lexicographic decrease of alpha at every consecutive pair."""
    alphas = [a for (_, _, a) in trace.iterations]
    for prev, cur in zip(alphas, alphas[1:]):
        if lex_compare(cur.as_array(), prev.as_array()) is not LexOrder.LESS:
            return False
    return True


def check_boundedness(inst: IlpInstance, z_star) -> bool:
    """The optimal integer solution sits lexicographically between
    (d * sum_i min(0, c_i), 0, ..., 0) and alpha(z*)."""
    x_opt = inst.lex_optimum()
    lower = np.zeros(inst.n + 1)
    lower[0] = inst.d * float(np.sum(np.minimum(0.0, inst.c)))
    upper = alpha(z_star, inst.d).as_array()
    return (lex_compare(lower, x_opt) in (LexOrder.LESS, LexOrder.EQUAL)
            and lex_compare(x_opt, upper) in (LexOrder.LESS, LexOrder.EQUAL))
