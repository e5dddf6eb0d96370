"""Problem representation, LP-relaxation bookkeeping, and solver-performance metrics.

Instances are minimization MILPs ``min c.x  s.t.  A x <= b, lb <= x <= ub,
x_j integer for j in int_idx``.  Callers that want maximization negate ``c``.
All bounds are finite; rows are stored dense (desk-scale instances).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Centralized tolerances.
FEAS_TOL = 1e-7   # constraint / bound feasibility
INT_TOL = 1e-6    # integrality decisions
CMP_TOL = 1e-9    # generic comparisons

JSON_FORMAT = "cutlab-v1"


class ValidationError(ValueError):
    """Raised when instance data violates a structural invariant."""


class UndefinedMetricError(ValueError):
    """Raised when a metric denominator vanishes."""


class InvariantViolationError(ValueError):
    """Raised when a bound trace breaks primal >= dual."""


@dataclass(frozen=True)
class MilpInstance:
    """A dense minimization MILP.

    Attributes:
        c: objective vector, length n.
        A: constraint matrix, shape (m, n); rows are `a.x <= b`.
        b: right-hand sides, length m.
        int_idx: sorted tuple of integer-variable indices (0-based).
        lb, ub: finite variable bounds, length n each.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    int_idx: tuple[int, ...]
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        A = np.asarray(self.A, dtype=float)
        if A.ndim == 1:
            A = A.reshape(0, c.size) if A.size == 0 else A.reshape(1, -1)
        b = np.asarray(self.b, dtype=float).ravel()
        lb = np.asarray(self.lb, dtype=float).ravel()
        ub = np.asarray(self.ub, dtype=float).ravel()
        n = c.size
        if A.shape != (b.size, n):
            raise ValidationError(
                f"A has shape {A.shape}, expected ({b.size}, {n})")
        if lb.size != n or ub.size != n:
            raise ValidationError("bound vectors must have length n")
        for arr, name in ((c, "c"), (A, "A"), (b, "b"), (lb, "lb"), (ub, "ub")):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite entries")
        if np.any(lb > ub + CMP_TOL):
            raise ValidationError("lb > ub for some variable")
        idx = tuple(sorted(int(j) for j in self.int_idx))
        if any(j < 0 or j >= n for j in idx):
            raise ValidationError("int_idx out of range")
        if len(set(idx)) != len(idx):
            raise ValidationError("int_idx contains duplicates")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        object.__setattr__(self, "int_idx", idx)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    def is_integer_var(self, j: int) -> bool:
        return j in set(self.int_idx)


@dataclass(frozen=True)
class LpRelaxation:
    """A MILP with integrality dropped plus an ordered list of added cut rows.

    ``extra_rows`` holds the cuts in exactly the order they were added; order
    is significant for downstream solver behavior even though the feasible
    region it defines is order-independent.
    """

    base: MilpInstance
    extra_rows: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for cut in self.extra_rows:
            if np.asarray(cut.a).size != self.base.n:
                raise ValidationError("cut row length differs from n")

    @property
    def n(self) -> int:
        return self.base.n

    def all_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense (A, b) of base rows followed by cut rows in added order."""
        if not self.extra_rows:
            return self.base.A.copy(), self.base.b.copy()
        extra_a = np.array([cut.a for cut in self.extra_rows], dtype=float)
        extra_b = np.array([cut.beta for cut in self.extra_rows], dtype=float)
        return (np.vstack([self.base.A, extra_a]),
                np.concatenate([self.base.b, extra_b]))

    def with_cuts(self, cuts) -> "LpRelaxation":
        return LpRelaxation(self.base, self.extra_rows + tuple(cuts))


def build_relaxation(inst: MilpInstance) -> LpRelaxation:
    """Drop the integrality constraints of ``inst``; keeps c, A, b, bounds."""
    return LpRelaxation(base=inst, extra_rows=())


@dataclass
class BoundTrace:
    """Ordered (work_units, primal_bound, dual_bound) events.

    Work units count LP solves performed; the clock starts at the first
    solve.  Dual bounds are nondecreasing and primal bounds nonincreasing for
    minimization, with primal >= dual at every event.
    """

    events: list = field(default_factory=list)

    def append(self, work_units: int, primal: float, dual: float) -> None:
        if self.events:
            last_w, last_p, last_d = self.events[-1]
            if work_units < last_w:
                raise InvariantViolationError("work units decreased")
            if dual < last_d - FEAS_TOL:
                raise InvariantViolationError("dual bound decreased")
        if primal < dual - INT_TOL:
            raise InvariantViolationError(
                f"primal {primal} below dual {dual}")
        self.events.append((int(work_units), float(primal), float(dual)))

    def shifted(self, offset: int) -> "BoundTrace":
        out = BoundTrace()
        out.events = [(w + offset, p, d) for (w, p, d) in self.events]
        return out


def pd_integral(trace: BoundTrace, horizon: float) -> float:
    """Area between the primal and dual bound step curves up to ``horizon``.

    Both bounds are held constant between events and after the last event.
    Integration starts at the first event's work-unit stamp.
    """
    if not trace.events:
        raise ValidationError("empty trace")
    if horizon < trace.events[-1][0] - CMP_TOL:
        raise ValidationError("horizon precedes last event")
    total = 0.0
    events = trace.events
    for i, (w, p, d) in enumerate(events):
        if p < d - INT_TOL:
            raise InvariantViolationError(f"primal {p} below dual {d}")
        w_next = events[i + 1][0] if i + 1 < len(events) else horizon
        total += max(0.0, p - d) * (w_next - w)
    return total


def improvement_metric(m_nocuts: float, m_method: float) -> float:
    """Relative improvement of a method over the no-cuts run of a metric."""
    if abs(m_nocuts) < CMP_TOL:
        raise UndefinedMetricError("no-cuts metric is zero")
    return (m_nocuts - m_method) / m_nocuts


def instance_to_json(inst: MilpInstance) -> str:
    doc = {
        "fmt": JSON_FORMAT,
        "n": inst.n,
        "m": inst.m,
        "c": inst.c.tolist(),
        "rows": [{"a": inst.A[i].tolist(), "b": float(inst.b[i])}
                 for i in range(inst.m)],
        "int_idx": list(inst.int_idx),
        "lb": inst.lb.tolist(),
        "ub": inst.ub.tolist(),
    }
    return json.dumps(doc, sort_keys=True)


def instance_from_json(text: str) -> MilpInstance:
    doc = json.loads(text)
    if doc.get("fmt") != JSON_FORMAT:
        raise ValidationError(f"unsupported format key {doc.get('fmt')!r}")
    rows = doc["rows"]
    n = int(doc["n"])
    A = np.array([r["a"] for r in rows], dtype=float).reshape(len(rows), n)
    b = np.array([r["b"] for r in rows], dtype=float)
    inst = MilpInstance(
        c=np.array(doc["c"], dtype=float),
        A=A,
        b=b,
        int_idx=tuple(doc["int_idx"]),
        lb=np.array(doc["lb"], dtype=float),
        ub=np.array(doc["ub"], dtype=float),
    )
    if inst.n != n or inst.m != int(doc["m"]):
        raise ValidationError("n/m fields disagree with array shapes")
    return inst


def enumerate_integer_feasible(inst: MilpInstance, budget: int = 200_000):
    """Yield all integer-feasible points of a pure-integer instance.

    Brute-force lattice enumeration inside the bound box; used as an oracle
    for relaxation bounds, cut validity, and branch-and-bound checks.
    """
    if len(inst.int_idx) != inst.n:
        raise ValidationError("enumeration requires a pure-integer instance")
    los = np.ceil(inst.lb - INT_TOL).astype(int)
    his = np.floor(inst.ub + INT_TOL).astype(int)
    sizes = np.maximum(his - los + 1, 0)
    total = int(np.prod(sizes, dtype=np.int64)) if sizes.size else 1
    if total > budget:
        raise ValidationError(f"lattice has {total} points, budget {budget}")
    if total == 0:
        return
    grids = [np.arange(lo, hi + 1) for lo, hi in zip(los, his)]
    mesh = np.meshgrid(*grids, indexing="ij") if grids else []
    pts = (np.stack([g.ravel() for g in mesh], axis=1).astype(float)
           if grids else np.zeros((1, 0)))
    ok = np.all(inst.A @ pts.T <= inst.b[:, None] + FEAS_TOL, axis=0)
    for row in pts[ok]:
        yield row


def integer_optimum(inst: MilpInstance, budget: int = 200_000):
    """(x, objective) of the best integer-feasible point, or None if empty."""
    best = None
    best_obj = np.inf
    for x in enumerate_integer_feasible(inst, budget=budget):
        obj = float(inst.c @ x)
        if obj < best_obj - CMP_TOL:
            best, best_obj = x.copy(), obj
    if best is None:
        return None
    return best, best_obj
