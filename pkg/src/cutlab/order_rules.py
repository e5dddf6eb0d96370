"""Extraction of instance-independent cut-category order rules from a
trained policy, and the reprioritized composite heuristic built from them.

Per instance the policy's selection order is recorded; the categories at the
first three positions increment three per-position counters.  The rule is
the per-position argmax, ties broken by the fixed category enumeration
order.  ``default_plus`` replays the composite-score heuristic and stably
regroups its selection so categories matching rule positions come first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import cutenv
from .cuts import CATEGORY_ORDER, CutCategory
from .cutenv import EnvConfig, HierAction
from .nn import make_rng
from .policy import DEFAULT_RULE_RATIO, heuristic_act


class EmptyRuleError(RuntimeError):
    """No instance yielded any selected cut."""


@dataclass
class CategoryCounters:
    """Counts of each category at selection positions 1..3."""

    c1: dict = field(default_factory=dict)
    c2: dict = field(default_factory=dict)
    c3: dict = field(default_factory=dict)

    def record(self, categories: list) -> None:
        for counter, cat in zip((self.c1, self.c2, self.c3), categories[:3]):
            counter[cat] = counter.get(cat, 0) + 1

    def argmax(self, counter: dict) -> CutCategory:
        best, best_count = None, -1
        for cat in CATEGORY_ORDER:
            count = counter.get(cat, 0)
            if count > best_count:
                best, best_count = cat, count
        return best

    def top3(self):
        return (self.argmax(self.c1), self.argmax(self.c2),
                self.argmax(self.c3))


def extract_order_rules(policy, instances, env_cfg: EnvConfig | None = None,
                        seed: int = 0):
    """Run ``policy`` over the instances and distill the top-3 category rule.

    Returns (top3 tuple, CategoryCounters, per-instance category logs).
    Counting is an associative merge, so instances may be processed in
    parallel and combined.
    """
    env_cfg = env_cfg or EnvConfig(rounds=1)
    counters = CategoryCounters()
    logs = []
    any_selection = False
    for i, inst in enumerate(instances):
        _, records = cutenv.evaluate_episode(inst, policy, env_cfg,
                                             seed=seed + i)
        cats = []
        for rec in records:
            cats.extend(CutCategory(c) for c in rec["categories"])
        logs.append([c.value for c in cats])
        if cats:
            any_selection = True
            counters.record(cats)
    if not any_selection:
        raise EmptyRuleError("every selection came back empty")
    return counters.top3(), counters, logs


def default_plus(rule, state: cutenv.CutSelState,
                 ratio: float = DEFAULT_RULE_RATIO, seed: int = 0) -> HierAction:
    """Composite-score selection regrouped by the extracted category rule.

    Cuts whose category matches rule position 1 come first, then position 2,
    then 3, then the remainder; stable within groups by base score order.
    The output is always a permutation of the base selection.
    """
    base = heuristic_act(state, "default_like", ratio=ratio, seed=seed)
    groups: dict[int, list] = {0: [], 1: [], 2: [], 3: []}
    rule = tuple(rule)
    for j in base.order:
        cat = state.candidates[j].category
        for pos, rule_cat in enumerate(rule[:3]):
            if cat == rule_cat:
                groups[pos].append(j)
                break
        else:
            groups[3].append(j)
    order = groups[0] + groups[1] + groups[2] + groups[3]
    return HierAction(ratio=base.ratio, order=tuple(order))


def rule_to_json(top3, counters: CategoryCounters) -> str:
    doc = {
        "top1": top3[0].value,
        "top2": top3[1].value,
        "top3": top3[2].value,
        "counts": {
            "position1": {c.value: n for c, n in sorted(
                counters.c1.items(), key=lambda kv: kv[0].value)},
            "position2": {c.value: n for c, n in sorted(
                counters.c2.items(), key=lambda kv: kv[0].value)},
            "position3": {c.value: n for c, n in sorted(
                counters.c3.items(), key=lambda kv: kv[0].value)},
        },
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def merge_counters(a: CategoryCounters, b: CategoryCounters) -> CategoryCounters:
    out = CategoryCounters()
    for src in (a, b):
        for mine, theirs in ((out.c1, src.c1), (out.c2, src.c2),
                             (out.c3, src.c3)):
            for cat, count in theirs.items():
                mine[cat] = mine.get(cat, 0) + count
    return out
