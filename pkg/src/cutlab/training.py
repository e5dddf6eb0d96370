"""Trainers for the hierarchical policies.

Three algorithms:

* ``train_hpg_one_round`` -- score-function gradient on single-round
  episodes: both parameter blocks are weighted by the (baselined) episode
  reward, ascended with step ``lr``.
* ``train_hpg_multi_round`` -- the multi-round generalization: per-step
  weights are Monte-Carlo discounted returns from that step.
* ``train_hppo`` -- clipped-surrogate updates against frozen behavior
  parameters with a learned state-value baseline; several gradient steps per
  collected batch.

Rollout collection runs over a frozen parameter snapshot and updates happen
in a single writer phase between batches, so collection may be parallelized
across instances without locking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import cutenv, policy as policy_mod
from .cutenv import EnvConfig
from .nn import ParamDict, make_rng, mean_abs_value, zero_grads
from .policy import PolicyParams, accumulate_policy_grad, value_backward, value_forward


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class Sample:
    """One logged decision: state, action pieces, reward/return, behavior
    log-probs (the latter only needed by the clipped-surrogate trainer)."""

    state: object
    ratio: float
    order: tuple
    reward: float
    ret: float = 0.0
    step_index: int = 0
    logp_h_old: float = 0.0
    logp_l_old: float = 0.0


@dataclass
class TrainConfig:
    batch: int = 32
    epochs: int = 100
    lr: float = 0.01
    gamma: float = 0.99
    clip_eps: float = 0.2
    ppo_updates_per_epoch: int = 10
    baseline: bool = True
    seed: int = 0
    optimizer: str = "sgd"          # sgd | momentum | adam
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    ratio_lr_scale: float = 1.0     # lr multiplier for the higher level
    reward_norm: bool = True
    eval_every: int = 0             # 0 disables periodic evaluation
    eval_mode: str = "greedy"
    divergence_guard: float = 1e3

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class _Optimizer:
    """Gradient-ascent step rule over a ParamDict (plain, momentum, or adam)."""

    def __init__(self, params: ParamDict, cfg: TrainConfig,
                 lr_scale: float = 1.0):
        self.cfg = cfg
        self.lr = cfg.lr * lr_scale
        self.state = {k: {"m": np.zeros_like(t.value),
                          "v": np.zeros_like(t.value)} for k, t in params.items()}
        self.t = 0

    def ascend(self, params: ParamDict) -> None:
        cfg = self.cfg
        self.t += 1
        for k, tensor in params.items():
            g = tensor.grad
            if cfg.optimizer == "sgd":
                tensor.value += self.lr * g
            elif cfg.optimizer == "momentum":
                buf = self.state[k]["m"]
                buf *= cfg.momentum
                buf += g
                tensor.value += self.lr * buf
            else:
                st = self.state[k]
                st["m"] = cfg.adam_beta1 * st["m"] + (1 - cfg.adam_beta1) * g
                st["v"] = cfg.adam_beta2 * st["v"] + (1 - cfg.adam_beta2) * g * g
                mhat = st["m"] / (1 - cfg.adam_beta1 ** self.t)
                vhat = st["v"] / (1 - cfg.adam_beta2 ** self.t)
                tensor.value += self.lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)


class _RewardNormalizer:
    """Running standardization of rewards (mean/std over everything seen)."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, values) -> None:
        for v in values:
            self.count += 1
            delta = v - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (v - self.mean)

    def apply(self, values):
        if not self.enabled or self.count < 2:
            return list(values)
        std = math.sqrt(self.m2 / (self.count - 1))
        if std < 1e-8:
            return [v - self.mean for v in values]
        return [(v - self.mean) / std for v in values]


def clip_ratio(r: float, adv: float, eps: float) -> float:
    """The clipped probability ratio: 1+eps when adv>0 and r>=1+eps, 1-eps
    when adv<0 and r<=1-eps, otherwise r."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if adv > 0 and r >= 1 + eps:
        return 1 + eps
    if adv < 0 and r <= 1 - eps:
        return 1 - eps
    return r


def _check_divergence(params: PolicyParams, cfg: TrainConfig) -> None:
    worst = max(mean_abs_value(params.theta1), mean_abs_value(params.theta2))
    if worst > cfg.divergence_guard:
        raise TrainingDivergedError(f"mean |param| = {worst:.3g}")


def _collect_one_round(instances, params, env_cfg, rng):
    inst = instances[int(rng.integers(0, len(instances)))]
    seed = int(rng.integers(0, 2 ** 62))
    state = cutenv.reset(inst, env_cfg, seed=seed)
    act_fn = policy_mod.hem_act if params.variant == "hem" \
        else policy_mod.hempp_act
    action, trace = act_fn(state, params, mode="sample",
                           seed=int(rng.integers(0, 2 ** 62)))
    _, reward = cutenv.step(state, action, env_cfg)
    return Sample(state=state, ratio=action.ratio, order=action.order,
                  reward=float(reward), ret=float(reward),
                  logp_h_old=trace.logp_h, logp_l_old=trace.logp_l)


def _collect_episode(instances, params, env_cfg, rng):
    inst = instances[int(rng.integers(0, len(instances)))]
    state = cutenv.reset(inst, env_cfg, seed=int(rng.integers(0, 2 ** 62)))
    act_fn = policy_mod.hem_act if params.variant == "hem" \
        else policy_mod.hempp_act
    steps = []
    while state is not None:
        action, trace = act_fn(state, params, mode="sample",
                               seed=int(rng.integers(0, 2 ** 62)))
        new_state, reward = cutenv.step(state, action, env_cfg)
        steps.append(Sample(state=state, ratio=action.ratio,
                            order=action.order, reward=float(reward),
                            step_index=len(steps),
                            logp_h_old=trace.logp_h,
                            logp_l_old=trace.logp_l))
        state = new_state
    return steps


def _attach_returns(steps, gamma):
    g = 0.0
    for s in reversed(steps):
        g = s.reward + gamma * g
        s.ret = g


def hpg_gradient(samples, params: PolicyParams, weights=None,
                 use_baseline=True) -> None:
    """Accumulate the hierarchical score-function gradient into the grads.

    Per sample weight = (return - baseline) unless explicit ``weights`` are
    given; both blocks get the same weight.  Gradients are averaged over the
    batch.
    """
    if weights is None:
        rets = np.array([s.ret for s in samples], dtype=float)
        base = float(np.mean(rets)) if (use_baseline and len(rets) > 1) else 0.0
        weights = rets - base
    scale = 1.0 / max(len(samples), 1)
    for s, w in zip(samples, weights):
        if w == 0.0:
            continue
        action = cutenv.HierAction(ratio=s.ratio, order=s.order)
        accumulate_policy_grad(s.state, action, params,
                               w_h=w * scale, w_l=w * scale)


def _multi_round_weights(samples, use_baseline):
    if not use_baseline:
        return [s.ret for s in samples]
    by_step = {}
    for s in samples:
        by_step.setdefault(s.step_index, []).append(s.ret)
    means = {t: float(np.mean(v)) if len(v) > 1 else 0.0
             for t, v in by_step.items()}
    return [s.ret - means[s.step_index] for s in samples]


@dataclass
class EpochStats:
    epoch: int
    mean_reward: float
    eval_dual_improvement: float = float("nan")
    eval_pd_integral: float = float("nan")


def _evaluate(instances, params, env_cfg, cfg, seed):
    act_fn = policy_mod.hem_act if params.variant == "hem" \
        else policy_mod.hempp_act

    def pol(state, rng):
        return act_fn(state, params, mode=cfg.eval_mode,
                      seed=int(rng.integers(0, 2 ** 62)))[0]

    duals, pds = [], []
    for i, inst in enumerate(instances):
        metrics, _ = cutenv.evaluate_episode(inst, pol, env_cfg,
                                             seed=seed + i)
        duals.append(metrics.dual_improvement)
        pds.append(metrics.pd_integral)
    return float(np.mean(duals)), float(np.mean(pds))


def _run_epochs(instances, params, cfg, env_cfg, eval_instances, collect_fn,
                grad_fn):
    rng = make_rng(cfg.seed)
    opt1 = _Optimizer(params.theta1, cfg, lr_scale=cfg.ratio_lr_scale)
    opt2 = _Optimizer(params.theta2, cfg)
    normalizer = _RewardNormalizer(cfg.reward_norm)
    curve = []
    for epoch in range(cfg.epochs):
        batch = collect_fn(rng)
        raw_returns = [s.ret for s in batch]
        normalizer.update(raw_returns)
        normed = normalizer.apply(raw_returns)
        for s, g in zip(batch, normed):
            s.ret = float(g)
        zero_grads(params.theta1)
        zero_grads(params.theta2)
        grad_fn(batch)
        opt1.ascend(params.theta1)
        opt2.ascend(params.theta2)
        _check_divergence(params, cfg)
        stats = EpochStats(epoch=epoch,
                           mean_reward=float(np.mean(raw_returns)))
        if eval_instances and cfg.eval_every and \
                (epoch + 1) % cfg.eval_every == 0:
            stats.eval_dual_improvement, stats.eval_pd_integral = _evaluate(
                eval_instances, params, env_cfg, cfg, seed=cfg.seed + 7919)
        curve.append(stats)
    return curve


def train_hpg_one_round(instances, params: PolicyParams, cfg: TrainConfig,
                        env_cfg: EnvConfig | None = None,
                        eval_instances=None):
    """One-round hierarchical policy gradient (contextual-bandit setting).

    Mutates ``params`` in place; returns the learning curve.
    """
    env_cfg = env_cfg or EnvConfig(rounds=1)
    if env_cfg.rounds != 1:
        raise ValueError("one-round trainer needs rounds == 1")

    def collect(rng):
        return [_collect_one_round(instances, params, env_cfg, rng)
                for _ in range(cfg.batch)]

    def grad(batch):
        hpg_gradient(batch, params, use_baseline=cfg.baseline)

    return _run_epochs(instances, params, cfg, env_cfg, eval_instances,
                       collect, grad)


def train_hpg_multi_round(instances, params: PolicyParams, cfg: TrainConfig,
                          env_cfg: EnvConfig | None = None,
                          eval_instances=None):
    """Multi-round score-function trainer with Monte-Carlo returns."""
    env_cfg = env_cfg or EnvConfig(rounds=2)

    def collect(rng):
        batch = []
        episodes = 0
        while episodes < cfg.batch:
            steps = _collect_episode(instances, params, env_cfg, rng)
            _attach_returns(steps, cfg.gamma)
            batch.extend(steps)
            episodes += 1
        return batch

    def grad(batch):
        weights = _multi_round_weights(batch, cfg.baseline)
        hpg_gradient(batch, params, weights=weights)

    return _run_epochs(instances, params, cfg, env_cfg, eval_instances,
                       collect, grad)


@dataclass
class HppoReport:
    curve: list
    dropped_samples: int
    total_samples: int
    flagged: bool


def hppo_surrogate_gradient(samples, params: PolicyParams, cfg: TrainConfig,
                            advantages) -> int:
    """Accumulate the clipped-surrogate ascent gradient; returns #dropped.

    Per sample: ratio r = exp(logp - logp_old); samples in the clipped
    regime contribute zero gradient, the rest contribute
    adv * r * grad(logp).  NaN ratios are dropped and counted.
    """
    scale = 1.0 / max(len(samples), 1)
    dropped = 0
    for s, adv in zip(samples, advantages):
        logp_h, logp_l = policy_mod.log_prob(
            s.state, cutenv.HierAction(ratio=s.ratio, order=s.order), params)
        log_ratio = (logp_h + logp_l) - (s.logp_h_old + s.logp_l_old)
        r = math.exp(min(log_ratio, 50.0))
        if math.isnan(r):
            dropped += 1
            continue
        clipped = (adv > 0 and r >= 1 + cfg.clip_eps) or \
                  (adv < 0 and r <= 1 - cfg.clip_eps)
        if clipped:
            continue
        w = adv * r * scale
        action = cutenv.HierAction(ratio=s.ratio, order=s.order)
        accumulate_policy_grad(s.state, action, params, w_h=w, w_l=w)
    return dropped


def train_hppo(instances, params: PolicyParams, cfg: TrainConfig,
               env_cfg: EnvConfig | None = None,
               eval_instances=None) -> HppoReport:
    """Clipped-surrogate trainer over the factored policy with a learned
    state-value baseline regressed on Monte-Carlo returns."""
    env_cfg = env_cfg or EnvConfig(rounds=1)
    rng = make_rng(cfg.seed)
    opt1 = _Optimizer(params.theta1, cfg, lr_scale=cfg.ratio_lr_scale)
    opt2 = _Optimizer(params.theta2, cfg)
    optv = _Optimizer(params.value, cfg)
    normalizer = _RewardNormalizer(cfg.reward_norm)
    curve = []
    dropped_total = 0
    total = 0
    for epoch in range(cfg.epochs):
        behavior = params.copy()
        batch = []
        for _ in range(cfg.batch):
            steps = _collect_episode(instances, behavior, env_cfg, rng)
            _attach_returns(steps, cfg.gamma)
            batch.extend(steps)
        raw_returns = [s.ret for s in batch]
        normalizer.update(raw_returns)
        for s, g in zip(batch, normalizer.apply(raw_returns)):
            s.ret = float(g)
        total += len(batch)
        for _ in range(cfg.ppo_updates_per_epoch):
            values, caches = [], []
            for s in batch:
                v, cache = value_forward(params.value, s.state.feature_matrix())
                values.append(v)
                caches.append(cache)
            advantages = [s.ret - v for s, v in zip(batch, values)]
            zero_grads(params.theta1)
            zero_grads(params.theta2)
            dropped_total += hppo_surrogate_gradient(batch, params, cfg,
                                                     advantages)
            opt1.ascend(params.theta1)
            opt2.ascend(params.theta2)
            # Value regression on returns: descend the squared error, which
            # is ascent of its negative gradient.
            zero_grads(params.value)
            for s, v, cache in zip(batch, values, caches):
                value_backward(params.value, cache,
                               -2.0 * (v - s.ret) / len(batch))
            optv.ascend(params.value)
        _check_divergence(params, cfg)
        stats = EpochStats(epoch=epoch,
                           mean_reward=float(np.mean(raw_returns)))
        if eval_instances and cfg.eval_every and \
                (epoch + 1) % cfg.eval_every == 0:
            stats.eval_dual_improvement, stats.eval_pd_integral = _evaluate(
                eval_instances, params, env_cfg, cfg, seed=cfg.seed + 7919)
        curve.append(stats)
    flagged = total > 0 and dropped_total > 0.01 * total
    return HppoReport(curve=curve, dropped_samples=dropped_total,
                      total_samples=total, flagged=flagged)


def curve_to_csv(curve) -> str:
    lines = ["epoch,mean_reward,eval_dual_improvement,eval_pd_integral"]
    for st in curve:
        lines.append(f"{st.epoch},{st.mean_reward:.12g},"
                     f"{st.eval_dual_improvement:.12g},"
                     f"{st.eval_pd_integral:.12g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Evolution-strategies trainer for the per-cut scorer baseline


def train_sbp_es(instances, scorer_params: ParamDict, env_cfg: EnvConfig,
                 ratio: float, *, iterations: int = 30, population: int = 16,
                 sigma: float = 0.1, lr: float = 0.05, seed: int = 0,
                 episodes_per_eval: int = 4):
    """Antithetic evolution-strategies updates of the scorer parameters."""
    rng = make_rng(seed)
    names = sorted(scorer_params)
    shapes = [scorer_params[k].value.shape for k in names]
    sizes = [int(np.prod(s)) for s in shapes]

    def get_flat():
        return np.concatenate([scorer_params[k].value.ravel() for k in names])

    def set_flat(vec):
        off = 0
        for k, sz, shape in zip(names, sizes, shapes):
            scorer_params[k].value[...] = vec[off:off + sz].reshape(shape)
            off += sz

    def fitness(eval_seed):
        total = 0.0
        sub_rng = make_rng(eval_seed)
        for _ in range(episodes_per_eval):
            inst = instances[int(sub_rng.integers(0, len(instances)))]
            state = cutenv.reset(inst, env_cfg,
                                 seed=int(sub_rng.integers(0, 2 ** 62)))
            action = policy_mod.sbp_act(state, scorer_params, ratio)
            _, reward = cutenv.step(state, action, env_cfg)
            total += reward
        return total / episodes_per_eval

    theta = get_flat()
    history = []
    for it in range(iterations):
        eval_seed = int(rng.integers(0, 2 ** 62))
        noises = [rng.standard_normal(theta.size)
                  for _ in range(population // 2)]
        scores = []
        directions = []
        for eps in noises:
            for sign in (1.0, -1.0):
                set_flat(theta + sigma * sign * eps)
                scores.append(fitness(eval_seed))
                directions.append(sign * eps)
        scores_arr = np.array(scores)
        if float(np.std(scores_arr)) > 1e-12:
            norm = (scores_arr - scores_arr.mean()) / scores_arr.std()
        else:
            norm = np.zeros_like(scores_arr)
        grad = sum(w * d for w, d in zip(norm, directions)) / len(directions)
        theta = theta + lr / sigma * grad
        set_flat(theta)
        history.append(float(np.mean(scores_arr)))
    return history
