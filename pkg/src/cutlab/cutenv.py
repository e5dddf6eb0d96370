"""The cut-selection decision process.

One episode: solve the root LP, build a candidate pool (tableau cuts, cover
cuts, optional decoys), featurize, let a policy pick an ordered subset, add
the picked cuts in that order, re-solve, repeat for T rounds, then score the
run with a budgeted branch-and-bound bound trace.

The work-unit clock counts LP solves.  Candidate pools are deduplicated by
coefficient hash across rounds.  States are plain immutable snapshots;
episodes over different instances are independent, so parallel rollouts just
share read-only instances and parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .bnb import solve_bnb, trivial_primal_bound
from .cuts import cover_cuts, decoy_cuts, featurize, gomory_cuts
from .milp import (BoundTrace, LpRelaxation, MilpInstance, build_relaxation,
                   pd_integral)
from .nn import make_rng, num_from_ratio
from .simplex import LpSolution, LpStatus, solve_lp

REWARD_DUAL_DELTA = "dual_delta"
REWARD_NEG_PD_INTEGRAL = "neg_pd_integral"


class EpisodeInvalidError(RuntimeError):
    """Root LP infeasible or unbounded: no episode can start."""


class ActionContractError(ValueError):
    """Action indices duplicated, out of range, or length mismatched."""


@dataclass(frozen=True)
class EnvConfig:
    rounds: int = 1
    reward_kind: str = REWARD_DUAL_DELTA
    gamma: float = 0.99
    bnb_node_limit: int = 200
    decoy_range: tuple = (0, 0)
    max_candidates: int | None = None
    horizon: int | None = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.reward_kind not in (REWARD_DUAL_DELTA, REWARD_NEG_PD_INTEGRAL):
            raise ValueError(f"unknown reward kind {self.reward_kind!r}")

    def effective_horizon(self) -> int:
        if self.horizon is not None:
            return self.horizon
        return 1 + self.rounds + self.bnb_node_limit


@dataclass(frozen=True)
class HierAction:
    """A selection ratio plus an ordered list of candidate indices."""

    ratio: float
    order: tuple

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(j) for j in self.order))
        if not 0.0 <= self.ratio <= 1.0:
            raise ActionContractError(f"ratio {self.ratio} outside [0, 1]")


@dataclass(frozen=True)
class CutSelState:
    relaxation: LpRelaxation
    candidates: tuple
    features: tuple
    lp_sol: LpSolution
    round: int
    work_units: int
    seen_keys: frozenset
    decoy_seed: int
    bound_events: tuple

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    def feature_matrix(self) -> np.ndarray:
        if not self.features:
            return np.zeros((0, 13))
        return np.stack([f.f for f in self.features])


@dataclass
class Metrics:
    dual_improvement: float
    pd_integral: float
    cuts_added: int
    work_units: int


def _generate_pool(rel, sol, inst, cfg, round_idx, seen, rng):
    pool = gomory_cuts(sol, inst, source_round=round_idx)
    pool.extend(cover_cuts(inst, sol, source_round=round_idx))
    fresh, keys = [], set()
    for cut in pool:
        key = cut.coeff_key()
        if key in seen or key in keys:
            continue
        keys.add(key)
        fresh.append(cut)
    lo, hi = cfg.decoy_range
    if hi > 0 and fresh:
        count = int(rng.integers(lo, hi + 1))
        fresh.extend(decoy_cuts(fresh, inst, sol.x, rng, count,
                                source_round=round_idx))
    if cfg.max_candidates is not None:
        fresh = fresh[:cfg.max_candidates]
    feats = tuple(featurize(cut, sol, inst) for cut in fresh)
    return tuple(fresh), feats


def reset(inst: MilpInstance, cfg: EnvConfig, seed: int = 0) -> CutSelState:
    """Solve the root LP and assemble the round-0 state."""
    rel = build_relaxation(inst)
    sol = solve_lp(rel)
    if sol.status is not LpStatus.OPTIMAL:
        raise EpisodeInvalidError(f"root LP is {sol.status.value}")
    rng = make_rng(seed)
    candidates, feats = _generate_pool(rel, sol, inst, cfg, 0, frozenset(),
                                       rng)
    events = ((1, trivial_primal_bound(inst), sol.obj),)
    return CutSelState(relaxation=rel, candidates=candidates, features=feats,
                       lp_sol=sol, round=0, work_units=1,
                       seen_keys=frozenset(c.coeff_key() for c in candidates),
                       decoy_seed=seed, bound_events=events)


def _validate_action(state: CutSelState, action: HierAction) -> None:
    n = state.n_candidates
    order = action.order
    if len(set(order)) != len(order):
        raise ActionContractError("duplicate indices in action order")
    if any(j < 0 or j >= n for j in order):
        raise ActionContractError("action index out of range")
    if len(order) != num_from_ratio(n, action.ratio):
        raise ActionContractError(
            f"action length {len(order)} != floor(N*k) for k={action.ratio}")


def _terminal_reward(state, new_rel, new_sol, work, events, cfg):
    if cfg.reward_kind == REWARD_DUAL_DELTA:
        return None
    inst = state.relaxation.base
    result = solve_bnb(new_rel, inst, node_limit=cfg.bnb_node_limit,
                       work_offset=work)
    trace = BoundTrace()
    trace.events = list(events) + list(result.trace.events)
    return -pd_integral(trace, cfg.effective_horizon())


def step(state: CutSelState, action: HierAction, cfg: EnvConfig):
    """Apply an action; returns (next state or None at terminal, reward).

    Selected cuts are appended to the relaxation in action order; the
    re-solve costs one work unit (skipped for empty selections).  The
    dual-delta reward is the root-bound improvement ``z_new - z_old`` (>= 0
    for minimization); the PD-integral reward is emitted at the terminal
    step only.
    """
    _validate_action(state, action)
    z_old = state.lp_sol.obj
    inst = state.relaxation.base
    work = state.work_units
    events = list(state.bound_events)
    if action.order:
        picked = [state.candidates[j] for j in action.order]
        new_rel = state.relaxation.with_cuts(picked)
        new_sol = solve_lp(new_rel)
        work += 1
        if new_sol.status is not LpStatus.OPTIMAL:
            raise EpisodeInvalidError(
                f"augmented LP is {new_sol.status.value}")
        events.append((work, trivial_primal_bound(inst), new_sol.obj))
    else:
        new_rel, new_sol = state.relaxation, state.lp_sol
    reward = new_sol.obj - z_old if cfg.reward_kind == REWARD_DUAL_DELTA \
        else 0.0

    terminal = state.round + 1 >= cfg.rounds
    if not terminal:
        rng = make_rng((state.decoy_seed + 0x9E3779B9 * (state.round + 1))
                       % (2 ** 63))
        candidates, feats = _generate_pool(new_rel, new_sol, inst, cfg,
                                           state.round + 1, state.seen_keys,
                                           rng)
        if candidates:
            seen = state.seen_keys | {c.coeff_key() for c in candidates}
            next_state = CutSelState(
                relaxation=new_rel, candidates=candidates, features=feats,
                lp_sol=new_sol, round=state.round + 1, work_units=work,
                seen_keys=seen, decoy_seed=state.decoy_seed,
                bound_events=tuple(events))
            return next_state, reward
        terminal = True  # empty pool ends the episode early

    if cfg.reward_kind == REWARD_NEG_PD_INTEGRAL:
        reward = _terminal_reward(state, new_rel, new_sol, work, events, cfg)
    return None, reward


def evaluate_episode(inst: MilpInstance, policy, cfg: EnvConfig,
                     seed: int = 0):
    """Run a full episode under ``policy`` and score it.

    ``policy`` is a callable ``(state, rng) -> HierAction``.  Returns
    (Metrics, per-round records) where each record carries the pool size,
    chosen ratio, order, categories, reward, and the work-unit stamp.
    """
    state = reset(inst, cfg, seed=seed)
    z_root = state.lp_sol.obj
    rng = make_rng(seed + 1)
    records = []
    cuts_added = 0
    total_dual = 0.0
    final_rel, final_sol = state.relaxation, state.lp_sol
    work = state.work_units
    events = list(state.bound_events)
    while state is not None:
        action = policy(state, rng)
        n = state.n_candidates
        cats = [state.candidates[j].category.value for j in action.order]
        new_state, reward = step(state, action, cfg)
        cuts_added += len(action.order)
        if new_state is not None:
            final_rel, final_sol = new_state.relaxation, new_state.lp_sol
            work = new_state.work_units
            events = list(new_state.bound_events)
        else:
            # step() does not hand back the terminal relaxation; re-apply.
            if action.order:
                picked = [state.candidates[j] for j in action.order]
                final_rel = state.relaxation.with_cuts(picked)
                final_sol = solve_lp(final_rel)
                work += 1
                events.append((work, trivial_primal_bound(inst),
                               final_sol.obj))
        records.append({
            "round": state.round,
            "n_candidates": n,
            "k": action.ratio,
            "m": len(action.order),
            "order": list(action.order),
            "categories": cats,
            "reward": float(reward),
            "work_units": work,
        })
        total_dual = final_sol.obj - z_root
        state = new_state
    result = solve_bnb(final_rel, inst, node_limit=cfg.bnb_node_limit,
                       work_offset=work)
    trace = BoundTrace()
    trace.events = events + list(result.trace.events)
    integral = pd_integral(trace, cfg.effective_horizon())
    metrics = Metrics(dual_improvement=float(total_dual),
                      pd_integral=float(integral),
                      cuts_added=cuts_added,
                      work_units=result.trace.events[-1][0]
                      if result.trace.events else work)
    return metrics, records


def records_to_jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
