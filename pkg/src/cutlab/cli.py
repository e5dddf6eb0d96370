"""Command-line interface.

Subcommands: ``generate`` (instances + manifest), ``train`` / ``eval``
(config-driven experiments), ``verify-theory`` (lexicographic convergence
sweep), ``extract-rules`` (order-rule distillation), ``grad-check``
(gradient battery).  Exit codes: 0 success, 2 config/validation error,
3 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import cutenv, experiment, lexcut, nn, order_rules, policy, training
from .cutenv import EnvConfig
from .datasets import DatasetSpec, generate, lex_ilp, split_instances
from .milp import ValidationError, instance_to_json
from .nn import make_rng

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ACCEPTANCE = 3


def _load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def cmd_generate(args) -> int:
    doc = _load_config(args.config)
    ds = doc.get("dataset", doc)
    try:
        spec = DatasetSpec(family=ds["family"], count=ds["count"],
                           seed=args.seed if args.seed is not None
                           else ds.get("seed", 0),
                           train_fraction=ds.get("train_fraction", 0.8),
                           params=ds.get("params", {}))
        instances, manifest = generate(spec)
    except (ValidationError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    os.makedirs(args.out_dir, exist_ok=True)
    from .datasets import lex_to_milp
    names = []
    for i, inst in enumerate(instances):
        if spec.family == "lex_ilp":
            milp_inst = lex_to_milp(inst)
            manifest.setdefault("d_values", []).append(inst.d)
        else:
            milp_inst = inst
        name = f"instance_{i:04d}.json"
        with open(os.path.join(args.out_dir, name), "w") as fh:
            fh.write(instance_to_json(milp_inst) + "\n")
        names.append(name)
    train_idx, test_idx = split_instances(instances, spec.train_fraction,
                                          spec.seed)
    manifest["files"] = names
    manifest["train_indices"] = train_idx
    manifest["test_indices"] = test_idx
    with open(os.path.join(args.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {len(names)} instances to {args.out_dir}")
    return EXIT_OK


def _run_config(args, require_trainer: bool) -> int:
    doc = _load_config(args.config)
    errors = experiment.validate_config(doc)
    if require_trainer and not doc.get("trainer"):
        errors.append("trainer: required for the train subcommand")
    if not require_trainer:
        doc = dict(doc)
        doc.pop("trainer", None)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        experiment.run_experiment(doc, args.out_dir,
                                  seed=args.seed if args.seed is not None
                                  else doc.get("seed", 0))
    except experiment.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"run complete; outputs in {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    return _run_config(args, require_trainer=True)


def cmd_eval(args) -> int:
    return _run_config(args, require_trainer=False)


def cmd_verify_theory(args) -> int:
    """Random bounded ILPs: every run must reach the enumeration-verified
    lex optimum within the theoretical iteration bound, with strictly
    decreasing alpha and the boundedness inequalities intact."""
    rng = make_rng(args.seed if args.seed is not None else 0)
    os.makedirs(args.out_dir, exist_ok=True)
    failures = 0
    lines = ["trial,n,d,iterations,bound,converged,monotone,bounded,lex_match"]
    for trial in range(args.trials):
        inst = lex_ilp(rng)
        bound = lexcut.iteration_bound(inst)
        converged = monotone = bounded = match = False
        iters = -1
        try:
            z, iters, trace = lexcut.run_lex_cutting_planes(inst)
            converged = iters <= bound
            monotone = lexcut.check_monotone_decrease(trace)
            bounded = all(
                lexcut.check_boundedness(inst, zt)
                for (zt, _, _) in trace.iterations) or not trace.iterations
            match = lexcut.lex_compare(z, inst.lex_optimum()) is \
                lexcut.LexOrder.EQUAL
        except lexcut.ConvergenceFailureError:
            pass
        ok = converged and monotone and bounded and match
        failures += 0 if ok else 1
        lines.append(f"{trial},{inst.n},{inst.d},{iters},{bound},"
                     f"{converged},{monotone},{bounded},{match}")
    with open(os.path.join(args.out_dir, "theory_verification.csv"),
              "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"{args.trials - failures}/{args.trials} runs verified")
    return EXIT_OK if failures == 0 else EXIT_ACCEPTANCE


def cmd_extract_rules(args) -> int:
    doc = _load_config(args.config)
    errors = experiment.validate_config(doc)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    ds = doc["dataset"]
    spec = DatasetSpec(family=ds["family"], count=ds["count"],
                       seed=ds.get("seed", seed),
                       train_fraction=ds.get("train_fraction", 0.8),
                       params=ds.get("params", {}))
    instances, _ = generate(spec)
    train_idx, _ = split_instances(instances, spec.train_fraction, spec.seed)
    train = [instances[i] for i in train_idx]
    env_cfg = experiment._env_config(doc)
    pol_doc = doc["policies"][0]
    dims = experiment._dims(doc)
    kind = pol_doc["kind"]
    variant = "hempp" if kind == "hempp" else "hem"
    if pol_doc.get("checkpoint"):
        params = experiment.load_policy_checkpoint(pol_doc["checkpoint"],
                                                   dims, variant)
    else:
        params = policy.init_policy_params(pol_doc.get("init_seed", seed),
                                           dims, variant)
    call = experiment.make_policy_callable(
        kind, params=params, ratio=pol_doc.get("ratio"),
        mode=pol_doc.get("mode", "greedy"))
    os.makedirs(args.out_dir, exist_ok=True)
    try:
        top3, counters, logs = order_rules.extract_order_rules(
            call, train, env_cfg, seed=seed)
    except order_rules.EmptyRuleError as exc:
        print(f"rule extraction failed: {exc}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    with open(os.path.join(args.out_dir, "order_rule.json"), "w") as fh:
        fh.write(order_rules.rule_to_json(top3, counters))
    with open(os.path.join(args.out_dir, "selection_logs.json"), "w") as fh:
        json.dump(logs, fh, sort_keys=True)
        fh.write("\n")
    print(f"rule: {[c.value for c in top3]}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    """Finite-difference battery over every differentiable component."""
    seed0 = args.seed if args.seed is not None else 0
    dims = policy.PolicyDims(hidden=8, heads=2)
    worst = {}
    rng = make_rng(seed0)
    for trial in range(args.trials):
        F = rng.standard_normal((4, dims.n_features))
        state = _SyntheticState(F)
        for variant in ("hem", "hempp"):
            params = policy.init_policy_params(seed0 + trial, dims, variant)
            action, _ = (policy.hem_act if variant == "hem"
                         else policy.hempp_act)(state, params, "sample",
                                                seed=trial)
            merged = {}
            merged.update(params.theta1)
            merged.update(params.theta2)

            def run(want):
                if want:
                    lh, ll = policy.accumulate_policy_grad(
                        state, action, params, 1.0, 1.0)
                else:
                    lh, ll = policy.log_prob(state, action, params)
                return lh + ll

            err = nn.grad_check(merged, run)
            key = f"policy_logprob_{variant}"
            worst[key] = max(worst.get(key, 0.0), err)

            def run_v(want):
                v, cache = policy.value_forward(params.value, F)
                if want:
                    policy.value_backward(params.value, cache, 1.0)
                return v

            err_v = nn.grad_check(params.value, run_v)
            worst["value_network"] = max(worst.get("value_network", 0.0),
                                         err_v)
    os.makedirs(args.out_dir, exist_ok=True)
    lines = ["component,max_rel_error"]
    for k in sorted(worst):
        lines.append(f"{k},{worst[k]:.3e}")
    with open(os.path.join(args.out_dir, "grad_check.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    bad = {k: v for k, v in worst.items() if v > 1e-4}
    for k in sorted(worst):
        print(f"{k}: {worst[k]:.3e}")
    return EXIT_OK if not bad else EXIT_ACCEPTANCE


class _SyntheticState:
    """Feature-only stand-in state for gradient checks."""

    def __init__(self, F):
        self._F = np.asarray(F, dtype=float)

    @property
    def n_candidates(self):
        return self._F.shape[0]

    def feature_matrix(self):
        return self._F


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cutlab",
        description="cut-selection laboratory: generators, trainers, "
                    "evaluation, and verification sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True,
                           help="path to a JSON config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", required=True)

    p = sub.add_parser("generate", help="write instances and a manifest")
    common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a policy then evaluate it")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate configured policies")
    common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify-theory",
                       help="lexicographic convergence sweep")
    common(p, config_required=False)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(fn=cmd_verify_theory)

    p = sub.add_parser("extract-rules",
                       help="distill top-3 category order rules")
    common(p)
    p.set_defaults(fn=cmd_extract_rules)

    p = sub.add_parser("grad-check", help="finite-difference battery")
    common(p, config_required=False)
    p.add_argument("--trials", type=int, default=3)
    p.set_defaults(fn=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
