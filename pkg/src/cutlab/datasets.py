"""Synthetic instance families and dataset management.

Six families: set covering, maximum independent set, multiple knapsack,
mixed-integer knapsack (continuous variables alongside binaries), a decoy
family of knapsack cores guaranteed to yield several real cuts (the
environment injects decoy cuts on top), and box-bounded integer programs for
the lexicographic algorithm.  All generation is deterministic per seed.
Sizes default to desk scale so experiment sweeps stay in minutes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cutenv import EnvConfig, reset
from .lexcut import IlpInstance
from .milp import MilpInstance, ValidationError
from .nn import make_rng

FAMILIES = ("set_covering", "max_independent_set", "multiple_knapsack",
            "mixed_int_knapsack", "decoy_family", "lex_ilp")

_MAX_RETRIES = 60


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    family: str
    count: int
    seed: int = 0
    train_fraction: float = 0.8
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}")
        if self.count < 2:
            raise ValidationError("count must be >= 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train fraction must lie in (0, 1)")


def set_covering(rng, n_cols=20, n_rows=12, density=0.25) -> MilpInstance:
    """min sum(x): every row covered by at least one chosen column."""
    cover = rng.random((n_rows, n_cols)) < density
    for i in range(n_rows):
        if not cover[i].any():
            cover[i, int(rng.integers(0, n_cols))] = True
    for j in range(n_cols):
        if not cover[:, j].any():
            cover[int(rng.integers(0, n_rows)), j] = True
    A = -cover.astype(float)            # sum_{j covers i} x_j >= 1
    b = -np.ones(n_rows)
    return MilpInstance(c=np.ones(n_cols), A=A, b=b,
                        int_idx=tuple(range(n_cols)),
                        lb=np.zeros(n_cols), ub=np.ones(n_cols))


def max_independent_set(rng, n_nodes=14, edge_prob=0.35) -> MilpInstance:
    """max sum(x) with x_u + x_v <= 1 per edge, negated to minimization."""
    rows = []
    for u in range(n_nodes):
        for v in range(u + 1, n_nodes):
            if rng.random() < edge_prob:
                a = np.zeros(n_nodes)
                a[u] = a[v] = 1.0
                rows.append(a)
    if not rows:
        a = np.zeros(n_nodes)
        a[0] = a[1] = 1.0
        rows.append(a)
    A = np.array(rows)
    return MilpInstance(c=-np.ones(n_nodes), A=A, b=np.ones(len(rows)),
                        int_idx=tuple(range(n_nodes)),
                        lb=np.zeros(n_nodes), ub=np.ones(n_nodes))


def multiple_knapsack(rng, n_items=7, n_knapsacks=2) -> MilpInstance:
    """Assignment binaries x[i, k]: each item to at most one knapsack."""
    profits = rng.integers(3, 13, size=n_items).astype(float)
    weights = rng.integers(2, 11, size=n_items).astype(float)
    caps = np.maximum(
        rng.integers(int(weights.sum() // (2 * n_knapsacks)) + 1,
                     int(weights.sum() // n_knapsacks) + 2,
                     size=n_knapsacks).astype(float), 3.0)
    n = n_items * n_knapsacks

    def var(i, k):
        return i * n_knapsacks + k

    rows, rhs = [], []
    for i in range(n_items):
        a = np.zeros(n)
        for k in range(n_knapsacks):
            a[var(i, k)] = 1.0
        rows.append(a)
        rhs.append(1.0)
    for k in range(n_knapsacks):
        a = np.zeros(n)
        for i in range(n_items):
            a[var(i, k)] = weights[i]
        rows.append(a)
        rhs.append(caps[k])
    c = np.zeros(n)
    for i in range(n_items):
        for k in range(n_knapsacks):
            c[var(i, k)] = -profits[i]
    return MilpInstance(c=c, A=np.array(rows), b=np.array(rhs),
                        int_idx=tuple(range(n)), lb=np.zeros(n),
                        ub=np.ones(n))


def mixed_int_knapsack(rng, n_pairs=None, n_cont=2, n_rows=None) -> MilpInstance:
    """Knapsack rows over binaries plus continuous consumption variables.

    Binary items come in identical twin pairs (equal weights and profits in
    every row), giving the LP relaxations the symmetric, degenerate structure
    typical of repeated-component models; together with several overlapping
    capacity rows this is the family used for order-sensitivity studies.
    """
    n_pairs = int(rng.integers(7, 11)) if n_pairs is None else n_pairs
    n_rows = int(rng.integers(6, 10)) if n_rows is None else n_rows
    n_int = 2 * n_pairs
    n = n_int + n_cont
    rows, rhs = [], []
    for _ in range(n_rows):
        sec = np.repeat(rng.integers(1, 6, size=n_pairs).astype(float), 2)
        mask = np.repeat(rng.random(n_pairs) < 0.7, 2)
        sec = sec * mask
        if sec.sum() == 0:
            sec[:4] = 2.0
        a = np.zeros(n)
        a[:n_int] = sec
        a[n_int:] = 1.0
        rows.append(a)
        rhs.append(float(int(rng.uniform(0.42, 0.55) * sec.sum())))
    profits = np.repeat(rng.integers(3, 11, size=n_pairs).astype(float), 2)
    c = -np.concatenate([profits, np.full(n_cont, 0.5)])
    ub = np.concatenate([np.ones(n_int), np.full(n_cont, 2.0)])
    return MilpInstance(c=c, A=np.array(rows), b=np.array(rhs),
                        int_idx=tuple(range(n_int)), lb=np.zeros(n), ub=ub)


def decoy_core(rng, big_fraction=0.3) -> MilpInstance:
    """Knapsack core for selection-quality experiments.

    Bimodal: most draws are small single-knapsack cores with a couple of
    real cuts; a ``big_fraction`` share are block-diagonal unions of several
    independent knapsacks, whose cuts are complementary (each block's cuts
    improve its own slice of the bound, so improvements add across blocks).
    With environment-injected decoys on top, the useful fraction spans a
    wide range, which is what separates adaptive from fixed-ratio selection.
    """
    if rng.random() < big_fraction:
        n_blocks = int(rng.integers(3, 5))
    else:
        n_blocks = 1
    block_sizes = [int(rng.integers(8, 13)) for _ in range(n_blocks)]
    n = int(np.sum(block_sizes))
    rows, rhs = [], []
    offset = 0
    profits = np.zeros(n)
    for size in block_sizes:
        w = rng.integers(3, 12, size=size).astype(float)
        row = np.zeros(n)
        row[offset:offset + size] = w
        rows.append(row)
        rhs.append(float(int(rng.uniform(0.35, 0.55) * w.sum())))
        profits[offset:offset + size] = rng.integers(
            4, 14, size=size).astype(float)
        offset += size
    return MilpInstance(c=-profits, A=np.array(rows), b=np.array(rhs),
                        int_idx=tuple(range(n)), lb=np.zeros(n),
                        ub=np.ones(n))


def lex_ilp(rng, n=None, d=None, max_rows=3) -> IlpInstance:
    """Random bounded ILP with a guaranteed feasible lattice point."""
    n = int(rng.integers(1, 4)) if n is None else n
    d = int(rng.integers(1, 4)) if d is None else d
    anchor = rng.integers(0, d + 1, size=n).astype(float)
    rows = []
    for _ in range(int(rng.integers(1, max_rows + 1))):
        a = rng.integers(-3, 4, size=n).astype(float)
        if not np.any(a):
            a[int(rng.integers(0, n))] = 1.0
        slack = float(rng.integers(0, 3))
        rows.append((a, float(a @ anchor) + slack))
    c = rng.integers(1, 5, size=n).astype(float)
    return IlpInstance(c=c, rows=tuple(rows), d=d)


def _has_enough_cuts(inst: MilpInstance, minimum: int) -> bool:
    try:
        state = reset(inst, EnvConfig(rounds=1), seed=0)
    except Exception:
        return False
    return state.n_candidates >= minimum


def generate(spec: DatasetSpec):
    """Instances plus a manifest describing exactly how they were drawn."""
    rng = make_rng(spec.seed)
    instances = []
    p = dict(spec.params)
    for idx in range(spec.count):
        for attempt in range(_MAX_RETRIES):
            try:
                if spec.family == "set_covering":
                    inst = set_covering(rng, **p)
                elif spec.family == "max_independent_set":
                    inst = max_independent_set(rng, **p)
                elif spec.family == "multiple_knapsack":
                    inst = multiple_knapsack(rng, **p)
                elif spec.family == "mixed_int_knapsack":
                    inst = mixed_int_knapsack(rng, **p)
                    if not _has_enough_cuts(inst, minimum=3):
                        continue
                elif spec.family == "decoy_family":
                    inst = decoy_core(rng, **p)
                    if not _has_enough_cuts(inst, minimum=2):
                        continue
                else:
                    inst = lex_ilp(rng, **p)
            except ValidationError:
                continue
            instances.append(inst)
            break
        else:
            raise GenerationError(
                f"family {spec.family}: instance {idx} failed after "
                f"{_MAX_RETRIES} retries")
    manifest = {
        "family": spec.family,
        "count": spec.count,
        "seed": spec.seed,
        "train_fraction": spec.train_fraction,
        "params": p,
    }
    return instances, manifest


def split_instances(instances, train_fraction: float, seed: int):
    """Disjoint train/test index split, stable under the seed."""
    rng = make_rng(seed)
    idx = rng.permutation(len(instances))
    n_train = max(1, int(round(train_fraction * len(instances))))
    n_train = min(n_train, len(instances) - 1)
    train = sorted(int(i) for i in idx[:n_train])
    test = sorted(int(i) for i in idx[n_train:])
    return train, test


def lex_to_milp(inst: IlpInstance) -> MilpInstance:
    """Serialize-friendly MILP form of a lex ILP (max c.x -> min -c.x)."""
    A = np.array([a for a, _ in inst.rows])
    b = np.array([bb for _, bb in inst.rows])
    n = inst.n
    return MilpInstance(c=-inst.c, A=A, b=b, int_idx=tuple(range(n)),
                        lb=np.zeros(n), ub=np.full(n, float(inst.d)))


def milp_to_lex(inst: MilpInstance, d: int) -> IlpInstance:
    rows = tuple((inst.A[i].copy(), float(inst.b[i])) for i in range(inst.m))
    return IlpInstance(c=-inst.c, rows=rows, d=d)
