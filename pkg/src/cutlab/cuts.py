"""Candidate-cut generation, validity checking, and per-cut features.

Separators implemented here:

* ``gomory_cuts`` -- rounding cuts read off the optimal simplex tableau, one
  per basic integer variable with fractional value.  The mixed-integer form
  is used so the cuts stay valid when continuous variables are present;
  integer-valued slacks are detected per row and strengthened accordingly.
* ``cover_cuts`` -- violated minimal-cover inequalities for knapsack-form
  rows over binary variables.
* ``lex_cuts`` -- the n+1 lexicographic cutting planes used by the finite
  cutting-plane algorithm (see :mod:`cutlab.lexcut`).
* ``decoy_cuts`` -- valid but deliberately useless noisy duplicates, used to
  make selection quality measurable on training instances.

Every cut is an inequality ``a.x <= beta`` tagged with a category and the
separation round that produced it.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .milp import (FEAS_TOL, INT_TOL, CMP_TOL, MilpInstance, ValidationError,
                   enumerate_integer_feasible)
from .simplex import AT_LOWER, AT_UPPER, BASIC, LpSolution, LpStatus, solve_dense_lp

N_FEATURES = 13


class CutCategory(enum.Enum):
    GOMORY_FRAC = "gomory_frac"
    KNAPSACK_COVER = "knapsack_cover"
    LEX_THEORY = "lex_theory"
    DECOY = "decoy"


# Deterministic tie-break order for category counters.
CATEGORY_ORDER = (CutCategory.GOMORY_FRAC, CutCategory.KNAPSACK_COVER,
                  CutCategory.LEX_THEORY, CutCategory.DECOY)


class EnumerationBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cut:
    """A linear inequality ``a.x <= beta``."""

    a: np.ndarray
    beta: float
    category: CutCategory
    source_round: int = 0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if not np.all(np.isfinite(a)) or not np.isfinite(self.beta):
            raise ValidationError("cut has non-finite entries")
        if np.max(np.abs(a), initial=0.0) <= CMP_TOL:
            raise ValidationError("cut coefficients are all zero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "beta", float(self.beta))

    def violation(self, x: np.ndarray) -> float:
        return float(self.a @ x - self.beta)

    def coeff_key(self) -> tuple:
        """Hashable key identifying the inequality up to 1e-9 rounding."""
        return (tuple(np.round(self.a, 9)), round(self.beta, 9))


@dataclass(frozen=True)
class CutFeatures:
    """Exactly 13 real features describing one cut against one LP optimum."""

    f: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        if f.shape != (N_FEATURES,):
            raise ValidationError(f"expected {N_FEATURES} features, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValidationError("features contain non-finite entries")
        object.__setattr__(self, "f", f)


def _fractional(v: float) -> bool:
    return abs(v - round(v)) > INT_TOL


def _integral_slack_rows(A: np.ndarray, b: np.ndarray, inst: MilpInstance):
    """Rows whose slack is forced integral at every integer-feasible point.

    True when the row touches only integer variables, with integer
    coefficients, integer rhs, and integer bounds do the rest.
    """
    int_set = set(inst.int_idx)
    flags = np.zeros(A.shape[0], dtype=bool)
    for i in range(A.shape[0]):
        row = A[i]
        nz = np.flatnonzero(np.abs(row) > CMP_TOL)
        if any(j not in int_set for j in nz):
            continue
        if np.any(np.abs(row[nz] - np.round(row[nz])) > CMP_TOL):
            continue
        if abs(b[i] - round(b[i])) > CMP_TOL:
            continue
        flags[i] = True
    return flags


def gomory_cuts(sol: LpSolution, inst: MilpInstance,
                source_round: int = 0) -> list[Cut]:
    """Tableau rounding cuts, one per fractional basic integer variable.

    Works in the shifted nonbasic space (each nonbasic measured as a
    nonnegative offset from the bound it sits at), applies the mixed-integer
    rounding coefficients, then substitutes slacks back out so the cut lives
    in the structural variable space.  Every returned cut is violated by the
    generating optimum by exactly 1 in the unscaled form.
    """
    if sol.status is not LpStatus.OPTIMAL or sol.tableau is None:
        raise ValidationError("gomory_cuts needs an optimal solution")
    tab = sol.tableau
    n, m = tab.n_struct, tab.n_rows
    A, b = tab.A_orig, tab.rhs
    slack_int = _integral_slack_rows(A, b, inst)
    int_set = set(inst.int_idx)
    cuts = []
    for r in range(m):
        bvar = int(tab.basis[r])
        if bvar >= n or bvar not in int_set:
            continue
        val = float(tab.xb[r])
        f0 = val - np.floor(val)
        if f0 < INT_TOL or f0 > 1.0 - INT_TOL:
            continue
        # Row in shifted nonbasic space: x_b + sum_j art_j y_j = val.
        g = np.zeros(n)       # structural coefficients of the cut (>= form)
        rhs = 1.0             # cut: sum coef_j y_j >= 1
        for j in range(n + m):
            st = tab.state[j]
            if st == BASIC:
                continue
            if tab.ub[j] - tab.lb[j] <= CMP_TOL:
                continue  # fixed variable, no freedom
            t = float(tab.rows[r, j])
            if abs(t) <= CMP_TOL:
                continue
            at_lower = st == AT_LOWER
            a_tilde = t if at_lower else -t
            integer_col = (j < n and j in int_set) or (j >= n and slack_int[j - n])
            if integer_col:
                fj = a_tilde - np.floor(a_tilde)
                if fj <= CMP_TOL or fj >= 1.0 - CMP_TOL:
                    continue
                coef = fj / f0 if fj <= f0 else (1.0 - fj) / (1.0 - f0)
            else:
                coef = a_tilde / f0 if a_tilde >= 0 else -a_tilde / (1.0 - f0)
            # Substitute y_j back to structural variables.
            if j < n:
                bound = tab.lb[j] if at_lower else tab.ub[j]
                sign = 1.0 if at_lower else -1.0
                # coef * y = coef * sign * (x_j - bound)
                g[j] += coef * sign
                rhs += coef * sign * bound
            else:
                # Slack at lower bound 0 (infinite upper bound): y = s =
                # b_i - A_i x.
                i = j - n
                g -= coef * A[i]
                rhs -= coef * b[i]
        # g.x >= rhs  ->  (-g).x <= -rhs
        a_cut = -g
        beta = -rhs
        if np.max(np.abs(a_cut), initial=0.0) <= CMP_TOL:
            continue
        cut = Cut(a=a_cut, beta=beta, category=CutCategory.GOMORY_FRAC,
                  source_round=source_round)
        if cut.violation(sol.x) > 1e-6:
            cuts.append(cut)
    return cuts


def _knapsack_rows(inst: MilpInstance):
    """Indices of rows that are knapsack-form over binary variables."""
    binaries = {j for j in inst.int_idx
                if abs(inst.lb[j]) <= CMP_TOL and abs(inst.ub[j] - 1.0) <= CMP_TOL}
    out = []
    for i in range(inst.m):
        row = inst.A[i]
        nz = np.flatnonzero(np.abs(row) > CMP_TOL)
        if nz.size == 0 or inst.b[i] <= CMP_TOL:
            continue
        if np.any(row[nz] < -CMP_TOL):
            continue
        if any(j not in binaries for j in nz):
            continue
        out.append(i)
    return out


def _greedy_cover(row, cap, x, items):
    """One minimal cover over ``items`` by descending x*, or None."""
    order = sorted(items, key=lambda j: (-x[j], j))
    cover, weight = [], 0.0
    for j in order:
        cover.append(j)
        weight += row[j]
        if weight > cap + FEAS_TOL:
            break
    if weight <= cap + FEAS_TOL:
        return None
    # Trim to minimality: drop members (ascending x*) while the remainder
    # still overflows the capacity.
    for j in sorted(cover, key=lambda j: (x[j], j)):
        if weight - row[j] > cap + FEAS_TOL:
            cover.remove(j)
            weight -= row[j]
    return cover


def cover_cuts(inst: MilpInstance, sol: LpSolution, source_round: int = 0,
               restarts: int = 3) -> list[Cut]:
    """Violated minimal-cover inequalities from knapsack-form rows.

    Covers are built greedily by descending x* value and trimmed to
    minimality; ``sum_{j in C} x_j <= |C|-1`` is emitted only when violated
    at x*.  Multi-start separation: after each cover, its lowest-x* member
    is excluded and the greedy restarts, yielding up to ``restarts`` covers
    per row.
    """
    if sol.status is not LpStatus.OPTIMAL:
        raise ValidationError("cover_cuts needs an optimal solution")
    x = sol.x
    cuts = []
    seen = set()
    for i in _knapsack_rows(inst):
        row, cap = inst.A[i], float(inst.b[i])
        items = [j for j in np.flatnonzero(row > CMP_TOL)]
        for _ in range(max(restarts, 1)):
            cover = _greedy_cover(row, cap, x, items)
            if cover is None:
                break
            lhs = float(np.sum(x[cover]))
            key = tuple(sorted(cover))
            if lhs > len(cover) - 1 + 1e-6 and key not in seen:
                seen.add(key)
                a = np.zeros(inst.n)
                a[list(cover)] = 1.0
                cuts.append(Cut(a=a, beta=float(len(cover) - 1),
                                category=CutCategory.KNAPSACK_COVER,
                                source_round=source_round))
            drop = min(cover, key=lambda j: (x[j], j))
            items = [j for j in items if j != drop]
    return cuts


def lex_coefficients(d: int, n: int) -> np.ndarray:
    """The recurrence a_1 = d, a_k = d * (1 + a_1 + ... + a_{k-1})."""
    if d < 1:
        raise ValidationError("d must be a positive integer")
    a = np.zeros(n + 1)
    running = 0.0
    for k in range(1, n + 1):
        a[k] = d * (1.0 + running)
        running += a[k]
    return a


def _floor_tol(v: float) -> float:
    return float(np.floor(v + 1e-9))


def _ceil_tol(v: float) -> float:
    return float(np.ceil(v - 1e-9))


def lex_cuts(z: np.ndarray, d: int, n: int,
             source_round: int = 0) -> list[Cut]:
    """The n+1 lexicographic cuts at the fractional point ``z``.

    Cut i (for i = 0..n) over the extended variables (x_0, ..., x_n):
    ``x_i + sum_{j<i} a_{i-j} (x_j - ceil(z_j)) <= floor(z_i)``.  Every
    integer vector in Z x ([0,d] cap Z)^n lexicographically at most ``z``
    satisfies all of them.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size != n + 1:
        raise ValidationError(f"z must have {n + 1} entries")
    if d < 1:
        raise ValidationError("d must be a positive integer")
    coefs = lex_coefficients(d, n)
    cuts = []
    for i in range(n + 1):
        a = np.zeros(n + 1)
        a[i] = 1.0
        rhs = _floor_tol(z[i])
        for j in range(i):
            a[j] += coefs[i - j]
            rhs += coefs[i - j] * _ceil_tol(z[j])
        cuts.append(Cut(a=a, beta=rhs, category=CutCategory.LEX_THEORY,
                        source_round=source_round))
    return cuts


def decoy_cuts(base_cuts: list[Cut], inst: MilpInstance, x_star: np.ndarray,
               rng: np.random.Generator, count: int,
               source_round: int = 0) -> list[Cut]:
    """Valid, non-violated, noise-perturbed duplicates of real cuts.

    Each decoy rescales a base cut, relaxes the rhs past the current
    violation, and perturbs coefficients with a compensating rhs increase of
    ``sum_i |eps_i| * max(|lb_i|, |ub_i|)`` so validity over the bound box is
    preserved by construction.
    """
    if not base_cuts or count <= 0:
        return []
    box = np.maximum(np.abs(inst.lb), np.abs(inst.ub))
    out = []
    for _ in range(count):
        base = base_cuts[int(rng.integers(0, len(base_cuts)))]
        lam = float(rng.uniform(0.5, 2.0))
        a = lam * base.a
        beta = lam * base.beta
        viol = max(float(a @ x_star - beta), 0.0)
        beta += viol * (1.0 + float(rng.uniform(0.05, 0.5))) + 1e-6
        eps = rng.uniform(-0.05, 0.05, size=inst.n) * np.max(np.abs(a))
        a = a + eps
        beta += float(np.abs(eps) @ box)
        if np.max(np.abs(a), initial=0.0) <= CMP_TOL:
            continue
        out.append(Cut(a=a, beta=beta, category=CutCategory.DECOY,
                       source_round=source_round))
    return out


def featurize(cut: Cut, sol: LpSolution, inst: MilpInstance) -> CutFeatures:
    """The fixed 13-entry feature vector of one cut at one LP optimum.

    Schedule (1-based):
      1  mean |a_i| / ||a||_inf          2  max |a_i| / ||a||_inf (== 1)
      3  min nonzero |a_i| / ||a||_inf   4  stdev of a_i / ||a||_inf
      5  support ratio nnz/n             6  fraction of nonzeros on int vars
      7  normalized violation max(0, a.x*-beta)/max(1, |beta|)
      8  efficacy (a.x*-beta)/||a||_2    9  objective parallelism
      10 entry8 * entry9                 11 normalized rhs beta/||a||_2
      12 fraction of nonzeros on variables fractional at x*
      13 violation scaled by objective (a.x*-beta)/(1+|c.x*|)
    """
    a = cut.a
    n = inst.n
    amax = float(np.max(np.abs(a)))
    if amax <= CMP_TOL:
        raise ValidationError("zero-norm cut")
    a2 = float(np.linalg.norm(a))
    x = sol.x
    viol = float(a @ x - cut.beta)
    nz = np.flatnonzero(np.abs(a) > CMP_TOL)
    abs_scaled = np.abs(a) / amax
    int_set = set(inst.int_idx)
    frac_vars = {j for j in range(n) if _fractional(float(x[j]))}
    cnorm = float(np.linalg.norm(inst.c))
    parallelism = (abs(float(a @ inst.c)) / (a2 * cnorm)) if cnorm > 0 else 0.0
    efficacy = viol / a2
    f = np.array([
        float(np.mean(abs_scaled)),
        1.0,
        float(np.min(abs_scaled[nz])),
        float(np.std(a / amax)),
        nz.size / n,
        sum(1 for j in nz if j in int_set) / nz.size,
        max(0.0, viol) / max(1.0, abs(cut.beta)),
        efficacy,
        parallelism,
        efficacy * parallelism,
        cut.beta / a2,
        sum(1 for j in nz if j in frac_vars) / nz.size,
        viol / (1.0 + abs(float(inst.c @ x))),
    ])
    return CutFeatures(f=f)


# Feature indices (0-based) exactly invariant under positive cut scaling.
SCALE_INVARIANT_FEATURES = (0, 1, 2, 3, 4, 5, 7, 8, 9, 10, 11)


def check_validity(cut: Cut, inst: MilpInstance,
                   budget: int = 200_000) -> bool:
    """True iff every integer-feasible point of ``inst`` satisfies the cut.

    Pure-integer instances are checked by lattice enumeration.  Mixed
    instances enumerate the integer sub-lattice and maximize the cut's
    continuous part by LP for each assignment.
    """
    int_idx = list(inst.int_idx)
    cont_idx = [j for j in range(inst.n) if j not in set(int_idx)]
    if not cont_idx:
        try:
            pts = enumerate_integer_feasible(inst, budget=budget)
            for x in pts:
                if cut.violation(x) > 1e-7:
                    return False
        except ValidationError as exc:
            raise EnumerationBudgetError(str(exc)) from exc
        return True
    los = np.ceil(inst.lb[int_idx] - INT_TOL).astype(int)
    his = np.floor(inst.ub[int_idx] + INT_TOL).astype(int)
    sizes = np.maximum(his - los + 1, 0)
    total = int(np.prod(sizes, dtype=np.int64)) if sizes.size else 1
    if total > budget:
        raise EnumerationBudgetError(f"{total} integer assignments")
    grids = [np.arange(lo, hi + 1) for lo, hi in zip(los, his)]
    mesh = np.meshgrid(*grids, indexing="ij") if grids else []
    assignments = (np.stack([g.ravel() for g in mesh], axis=1).astype(float)
                   if grids else np.zeros((1, 0)))
    A_cont = inst.A[:, cont_idx]
    for xi in assignments:
        rhs = inst.b - inst.A[:, int_idx] @ xi
        # Maximize the cut's continuous part subject to the fixed assignment.
        sol = solve_dense_lp(-cut.a[cont_idx], A_cont, rhs,
                             inst.lb[cont_idx], inst.ub[cont_idx])
        if sol.status is not LpStatus.OPTIMAL:
            continue  # no feasible completion for this assignment
        total_lhs = float(cut.a[int_idx] @ xi) - float(sol.obj)
        if total_lhs > cut.beta + 1e-7:
            return False
    return True


def cuts_to_csv(cuts: list[Cut], features: list[CutFeatures],
                x_star: np.ndarray) -> str:
    """CSV dump: category, beta, violation, efficacy, then the 13 features."""
    buf = io.StringIO()
    header = ["category", "beta", "violation", "efficacy"] + [
        f"f{i + 1}" for i in range(N_FEATURES)]
    buf.write(",".join(header) + "\n")
    for cut, feat in zip(cuts, features):
        viol = cut.violation(x_star)
        eff = viol / float(np.linalg.norm(cut.a))
        row = [cut.category.value, f"{cut.beta:.10g}", f"{viol:.10g}",
               f"{eff:.10g}"] + [f"{v:.10g}" for v in feat.f]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
