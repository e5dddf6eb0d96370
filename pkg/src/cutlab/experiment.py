"""Experiment runner: config-driven training and evaluation with CSV/JSON
reporting.

A single JSON config names the dataset, environment, policies, and optional
trainer.  Runs are self-describing: every default is echoed into the run
JSON, and all outputs are byte-stable for a fixed config and seed (no
timestamps, sorted keys, fixed float formatting).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from . import cutenv, order_rules, policy as policy_mod, training
from .cutenv import EnvConfig
from .datasets import DatasetSpec, generate, split_instances
from .milp import improvement_metric
from .nn import load_params, save_params
from .policy import PolicyDims, PolicyParams, init_policy_params


class ConfigError(ValueError):
    """Invalid experiment config; message lists offending field paths."""


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def _require(doc, path, key, types, errors):
    if key not in doc:
        errors.append(f"{path}.{key}: missing")
        return None
    val = doc[key]
    if not isinstance(val, types):
        errors.append(f"{path}.{key}: expected {types}, got {type(val).__name__}")
        return None
    return val


_POLICY_KINDS = ("nocuts", "random", "nv", "eff", "default_like",
                 "random_all", "random_nv", "hem", "hempp",
                 "without_higher", "hem_ratio", "hem_ratio_order", "sbp",
                 "default_plus")


def validate_config(doc: dict) -> list:
    errors: list = []
    ds = _require(doc, "", "dataset", dict, errors)
    if ds is not None:
        _require(ds, "dataset", "family", str, errors)
        _require(ds, "dataset", "count", int, errors)
    policies = _require(doc, "", "policies", list, errors)
    if policies is not None:
        for i, pol in enumerate(policies):
            if not isinstance(pol, dict):
                errors.append(f"policies[{i}]: expected object")
                continue
            kind = _require(pol, f"policies[{i}]", "kind", str, errors)
            if kind is not None and kind not in _POLICY_KINDS:
                errors.append(f"policies[{i}].kind: unknown kind {kind!r}")
    env = doc.get("env", {})
    if not isinstance(env, dict):
        errors.append("env: expected object")
    trainer = doc.get("trainer")
    if trainer is not None:
        if not isinstance(trainer, dict):
            errors.append("trainer: expected object")
        elif trainer.get("algo") not in ("hpg_one_round", "hpg_multi_round",
                                         "hppo", "sbp_es"):
            errors.append(f"trainer.algo: unknown algo {trainer.get('algo')!r}")
    return errors


def _env_config(doc: dict) -> EnvConfig:
    env = dict(doc.get("env", {}))
    if "decoy_range" in env:
        env["decoy_range"] = tuple(env["decoy_range"])
    return EnvConfig(**env)


def _dims(doc: dict) -> PolicyDims:
    return PolicyDims(**doc.get("dims", {}))


def make_policy_callable(kind: str, *, params: PolicyParams | None = None,
                         scorer=None, ratio=None, rule=None,
                         mode: str = "greedy"):
    """Wrap a policy kind as the (state, rng) -> HierAction protocol."""
    if kind in ("nocuts", "random", "nv", "eff", "default_like",
                "random_all", "random_nv"):
        def call(state, rng):
            return policy_mod.heuristic_act(
                state, kind, ratio=ratio, seed=int(rng.integers(0, 2 ** 62)))
        return call
    if kind in ("hem", "hempp"):
        act = policy_mod.hem_act if kind == "hem" else policy_mod.hempp_act

        def call(state, rng):
            return act(state, params, mode=mode,
                       seed=int(rng.integers(0, 2 ** 62)))[0]
        return call
    if kind in ("without_higher", "hem_ratio", "hem_ratio_order"):
        fixed = policy_mod.DEFAULT_RULE_RATIO if ratio is None else ratio

        def call(state, rng):
            return policy_mod.ablation_act(
                state, params, kind, seed=int(rng.integers(0, 2 ** 62)),
                fixed_ratio=fixed, mode=mode)[0]
        return call
    if kind == "sbp":
        fixed = policy_mod.DEFAULT_RULE_RATIO if ratio is None else ratio

        def call(state, rng):
            return policy_mod.sbp_act(state, scorer, fixed,
                                      seed=int(rng.integers(0, 2 ** 62)))
        return call
    if kind == "default_plus":
        fixed = policy_mod.DEFAULT_RULE_RATIO if ratio is None else ratio

        def call(state, rng):
            return order_rules.default_plus(rule, state, ratio=fixed,
                                            seed=int(rng.integers(0, 2 ** 62)))
        return call
    raise ConfigError(f"unknown policy kind {kind!r}")


def _train(doc, train_insts, env_cfg, seed, out_dir):
    trainer = doc["trainer"]
    algo = trainer["algo"]
    dims = _dims(doc)
    tc = dict(trainer.get("config", {}))
    tc.setdefault("seed", seed)
    cfg = training.TrainConfig(**tc)
    if algo == "sbp_es":
        scorer = policy_mod.sbp_params(seed, dims)
        es_kwargs = trainer.get("es", {})
        history = training.train_sbp_es(
            train_insts, scorer, env_cfg,
            trainer.get("ratio", policy_mod.DEFAULT_RULE_RATIO),
            seed=seed, **es_kwargs)
        save_params(os.path.join(out_dir, "scorer.ckpt"), scorer)
        curve = [training.EpochStats(epoch=i, mean_reward=v)
                 for i, v in enumerate(history)]
        return {"scorer": scorer}, curve
    variant = trainer.get("variant", "hem")
    params = init_policy_params(seed, dims, variant)
    if algo == "hpg_one_round":
        curve = training.train_hpg_one_round(train_insts, params, cfg, env_cfg)
    elif algo == "hpg_multi_round":
        curve = training.train_hpg_multi_round(train_insts, params, cfg,
                                               env_cfg)
    else:
        curve = training.train_hppo(train_insts, params, cfg, env_cfg).curve
    ckpt_base = os.path.join(out_dir, "policy")
    save_params(ckpt_base + ".theta1.ckpt", params.theta1)
    save_params(ckpt_base + ".theta2.ckpt", params.theta2)
    save_params(ckpt_base + ".value.ckpt", params.value)
    return {"params": params}, curve


def load_policy_checkpoint(base_path: str, dims: PolicyDims,
                           variant: str) -> PolicyParams:
    return PolicyParams(
        variant=variant, dims=dims,
        theta1=load_params(base_path + ".theta1.ckpt"),
        theta2=load_params(base_path + ".theta2.ckpt"),
        value=load_params(base_path + ".value.ckpt"))


def run_experiment(doc: dict, out_dir: str, seed: int = 0) -> dict:
    """Train (optionally), evaluate every configured policy on the test
    split, and write per-instance plus aggregate metrics."""
    errors = validate_config(doc)
    if errors:
        raise ConfigError("; ".join(errors))
    os.makedirs(out_dir, exist_ok=True)
    ds = dict(doc["dataset"])
    ds.setdefault("seed", seed)
    spec = DatasetSpec(family=ds["family"], count=ds["count"],
                       seed=ds["seed"],
                       train_fraction=ds.get("train_fraction", 0.8),
                       params=ds.get("params", {}))
    instances, manifest = generate(spec)
    train_idx, test_idx = split_instances(instances, spec.train_fraction,
                                          spec.seed)
    train_insts = [instances[i] for i in train_idx]
    test_insts = [instances[i] for i in test_idx]
    env_cfg = _env_config(doc)

    trained = {}
    curve = None
    if doc.get("trainer"):
        trained, curve = _train(doc, train_insts, env_cfg, seed, out_dir)
        with open(os.path.join(out_dir, "learning_curve.csv"), "w") as fh:
            fh.write(training.curve_to_csv(curve))

    dims = _dims(doc)
    rows = []
    aggregates = []
    episode_logs = []
    nocuts_means: dict = {}
    for pol_doc in doc["policies"]:
        kind = pol_doc["kind"]
        name = pol_doc.get("name", kind)
        mode = pol_doc.get("mode", "greedy")
        params = trained.get("params")
        if params is None and kind in ("hem", "hempp", "without_higher",
                                       "hem_ratio", "hem_ratio_order"):
            variant = "hempp" if kind == "hempp" else "hem"
            if pol_doc.get("checkpoint"):
                params = load_policy_checkpoint(pol_doc["checkpoint"], dims,
                                                variant)
            else:
                params = init_policy_params(pol_doc.get("init_seed", seed),
                                            dims, variant)
        scorer = trained.get("scorer")
        if scorer is None and kind == "sbp":
            scorer = policy_mod.sbp_params(pol_doc.get("init_seed", seed),
                                           dims)
        rule = None
        if kind == "default_plus":
            rule_doc = pol_doc.get("rule", ["gomory_frac", "knapsack_cover",
                                            "gomory_frac"])
            from .cuts import CutCategory
            rule = tuple(CutCategory(r) for r in rule_doc)
        call = make_policy_callable(kind, params=params, scorer=scorer,
                                    ratio=pol_doc.get("ratio"), rule=rule,
                                    mode=mode)
        per_policy = []
        for i, inst in enumerate(test_insts):
            metrics, records = cutenv.evaluate_episode(inst, call, env_cfg,
                                                       seed=seed + 1000 + i)
            per_policy.append(metrics)
            rows.append((name, i, metrics))
            for rec in records:
                episode_logs.append({"policy": name, "instance": i, **rec})
        means = {
            "dual_improvement": float(np.mean(
                [m.dual_improvement for m in per_policy])),
            "pd_integral": float(np.mean([m.pd_integral for m in per_policy])),
            "cuts_added": float(np.mean([m.cuts_added for m in per_policy])),
            "work_units": float(np.mean([m.work_units for m in per_policy])),
        }
        stds = {
            "pd_integral": float(np.std([m.pd_integral for m in per_policy])),
            "dual_improvement": float(np.std(
                [m.dual_improvement for m in per_policy])),
        }
        if kind == "nocuts":
            nocuts_means = means
        aggregates.append((name, kind, means, stds))

    with open(os.path.join(out_dir, "per_instance.csv"), "w") as fh:
        fh.write("policy,instance,dual_improvement,pd_integral,"
                 "cuts_added,work_units\n")
        for name, i, m in rows:
            fh.write(f"{name},{i},{_fmt(m.dual_improvement)},"
                     f"{_fmt(m.pd_integral)},{m.cuts_added},{m.work_units}\n")
    with open(os.path.join(out_dir, "aggregate.csv"), "w") as fh:
        fh.write("policy,kind,mean_dual_improvement,std_dual_improvement,"
                 "mean_pd_integral,std_pd_integral,mean_cuts_added,"
                 "mean_work_units,improvement_vs_nocuts_pd\n")
        for name, kind, means, stds in aggregates:
            if nocuts_means and abs(nocuts_means["pd_integral"]) > 1e-12:
                imp = improvement_metric(nocuts_means["pd_integral"],
                                         means["pd_integral"])
            else:
                imp = 0.0
            fh.write(f"{name},{kind},{_fmt(means['dual_improvement'])},"
                     f"{_fmt(stds['dual_improvement'])},"
                     f"{_fmt(means['pd_integral'])},"
                     f"{_fmt(stds['pd_integral'])},"
                     f"{_fmt(means['cuts_added'])},"
                     f"{_fmt(means['work_units'])},{_fmt(imp)}\n")
    with open(os.path.join(out_dir, "episodes.jsonl"), "w") as fh:
        for rec in episode_logs:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    run_doc = {
        "config": doc,
        "seed": seed,
        "dataset_manifest": manifest,
        "env": asdict(env_cfg),
        "train_indices": train_idx,
        "test_indices": test_idx,
        "n_train": len(train_insts),
        "n_test": len(test_insts),
        "reward_normalization": "running mean/std standardization"
                                if doc.get("trainer", {}) else "n/a",
    }
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(run_doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return run_doc
