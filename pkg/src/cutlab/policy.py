"""Selection policies: the hierarchical sequence model (LSTM encoder +
pointer decoder, "hem"), its set variant (attention encoder, "hempp"),
rule-based baselines, ablations, and a per-cut scorer baseline.

A policy factors as pi(k, a | s) = pi_h(k | s) * pi_l(a | s, k): the higher
level squashes a Gaussian through tanh to produce a selection ratio
k in (0, 1), the lower level decodes m = floor(N*k) distinct candidate
indices with an additive-attention pointer over the encoder embeddings,
masking visited indices at -inf.  The ratio enters the lower level only
through the decode length, so log-probabilities are re-evaluable for
arbitrary parameters from the recorded (k, order) pair alone.

The set variant replaces both encoders with the multi-head attention block
(mean-pooled for the higher level, so the entire composed policy is
invariant to the input order of candidate cuts).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .cutenv import ActionContractError, CutSelState, HierAction
from .nn import (ParamDict, SIGMA_FLOOR, Tensor2, clamp_ratio, make_rng,
                 num_from_ratio, ratio_for_count, softplus, softplus_grad,
                 tanh_gauss_logp, tanh_gauss_logp_bwd)

NEG_INF = -np.inf

# Feature columns used by score-based baselines (0-based indices into the
# 13-entry schedule): normalized violation, efficacy, parallelism, support.
F_SUPPORT, F_NV, F_EFF, F_PAR = 4, 6, 7, 8

DEFAULT_RULE_RATIO = 0.3


@dataclass
class PolicyDims:
    n_features: int = 13
    hidden: int = 64
    heads: int = 4


@dataclass
class PolicyParams:
    """theta1 (higher level), theta2 (lower level), value baseline params."""

    variant: str
    dims: PolicyDims
    theta1: ParamDict
    theta2: ParamDict
    value: ParamDict

    def all_params(self) -> ParamDict:
        out = {}
        out.update({f"t1.{k}": v for k, v in self.theta1.items()})
        out.update({f"t2.{k}": v for k, v in self.theta2.items()})
        out.update({f"v.{k}": v for k, v in self.value.items()})
        return out

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.variant, self.dims,
                            nn.clone_params(self.theta1),
                            nn.clone_params(self.theta2),
                            nn.clone_params(self.value))


@dataclass
class DecodeTrace:
    """Per-step pointer logits and chosen indices with exact log-probs."""

    step_logits: list = field(default_factory=list)
    order: list = field(default_factory=list)
    step_logps: list = field(default_factory=list)
    logp_l: float = 0.0
    logp_h: float = 0.0


def init_policy_params(seed: int, dims: PolicyDims | None = None,
                       variant: str = "hem") -> PolicyParams:
    if variant not in ("hem", "hempp"):
        raise ValueError(f"unknown variant {variant!r}")
    dims = dims or PolicyDims()
    rng = make_rng(seed)
    nf, h = dims.n_features, dims.hidden
    theta1 = {}
    theta2 = {}
    if variant == "hem":
        theta1.update(nn.lstm_params(rng, nf, h, "h_enc"))
        theta2.update(nn.lstm_params(rng, nf, h, "l_enc"))
    else:
        theta1.update(nn.mha_params(rng, nf, h, dims.heads, "h_enc"))
        theta2.update(nn.mha_params(rng, nf, h, dims.heads, "l_enc"))
    theta1.update(nn.mlp_params(rng, [h, h, 2], "h_head"))
    theta2.update(nn.lstm_params(rng, h, h, "dec"))
    theta2["ptr.We"] = Tensor2(rng.uniform(-1, 1, (h, h)) / np.sqrt(h))
    theta2["ptr.Wd"] = Tensor2(rng.uniform(-1, 1, (h, h)) / np.sqrt(h))
    theta2["ptr.v"] = Tensor2(rng.uniform(-1, 1, (h, 1)) / np.sqrt(h))
    theta2["start"] = Tensor2(rng.uniform(-1, 1, (1, h)) / np.sqrt(h))
    theta2["end"] = Tensor2(rng.uniform(-1, 1, (1, h)) / np.sqrt(h))
    value = nn.mlp_params(rng, [nf, h, h], "v_phi")
    value.update(nn.linear_params(rng, h, 1, "v_head"))
    return PolicyParams(variant, dims, theta1, theta2, value)


# ---------------------------------------------------------------------------
# Higher level: features -> (mu, sigma) -> squashed-Gaussian ratio


def _higher_forward(params: PolicyParams, F):
    if params.variant == "hem":
        H, last, enc_cache = nn.lstm_encode(params.theta1, "h_enc", F)
        pooled = last[0]
    else:
        E, enc_cache = nn.mha_encode(params.theta1, "h_enc", F,
                                     params.dims.heads)
        pooled = E.mean(axis=0, keepdims=True)
    out, head_caches = nn.mlp_fwd(params.theta1, "h_head", pooled, 2)
    mu = float(out[0, 0])
    raw = float(out[0, 1])
    sigma = float(softplus(np.array(raw))) + SIGMA_FLOOR
    cache = (enc_cache, head_caches, raw, F.shape[0])
    return mu, sigma, cache


def _higher_backward(params: PolicyParams, cache, dmu, dsigma):
    enc_cache, head_caches, raw, n_rows = cache
    dout = np.array([[dmu, dsigma * float(softplus_grad(np.array(raw)))]])
    dpooled = nn.mlp_bwd(params.theta1, "h_head", head_caches, dout, 2)
    if params.variant == "hem":
        dH = np.zeros((n_rows, dpooled.shape[1]))
        nn.lstm_encode_bwd(params.theta1, "h_enc", enc_cache, dH,
                           dlast=(dpooled, np.zeros_like(dpooled)))
    else:
        dE = np.repeat(dpooled / n_rows, n_rows, axis=0)
        nn.mha_bwd(params.theta1, "h_enc", enc_cache, dE)


# ---------------------------------------------------------------------------
# Lower level: encoder embeddings + pointer decoder


def _lower_encode(params: PolicyParams, F):
    if params.variant == "hem":
        E, (h_last, c_last), caches = nn.lstm_encode(params.theta2, "l_enc", F)
        return E, h_last, c_last, ("lstm", caches)
    E, cache = nn.mha_encode(params.theta2, "l_enc", F, params.dims.heads)
    h0 = E.mean(axis=0, keepdims=True)
    c0 = np.zeros_like(h0)
    return E, h0, c0, ("mha", cache)


def _lower_encode_bwd(params: PolicyParams, enc_cache, dE, dh0, dc0):
    kind, cache = enc_cache
    if kind == "lstm":
        nn.lstm_encode_bwd(params.theta2, "l_enc", cache, dE,
                           dlast=(dh0, dc0))
    else:
        n = dE.shape[0]
        dE = dE + np.repeat(dh0 / n, n, axis=0)
        nn.mha_bwd(params.theta2, "l_enc", cache, dE)


def _decode(params: PolicyParams, E, h0, c0, m, *, order=None, rng=None,
            greedy=False, use_end=False):
    """Pointer decode: sample/argmax when ``order`` is None, else forced.

    With ``use_end`` an extra end-token column terminates decoding (forced
    decodes consume an end step unless every index was selected).  Returns
    (order, step_logits, step_logps, logp_l, cache-for-backward).
    """
    t2 = params.theta2
    We, Wd, v = t2["ptr.We"].value, t2["ptr.Wd"].value, t2["ptr.v"].value
    N = E.shape[0]
    EWe = E @ We
    end_key = (t2["end"].value @ We) if use_end else None
    visited = np.zeros(N, dtype=bool)
    h, c = h0, c0
    x_t = t2["start"].value
    chosen: list[int] = []
    step_logits, step_logps, step_caches = [], [], []
    forced = list(order) if order is not None else None
    max_steps = N if use_end else m
    t = 0
    while t <= max_steps:
        if t == max_steps and not (use_end and len(chosen) < N):
            break
        h_new, c_new, lstm_cache = nn.lstm_step(t2, "dec", x_t, h, c)
        d_proj = h_new @ Wd
        pre = EWe + d_proj
        if use_end:
            pre = np.vstack([pre, end_key + d_proj])
        u = np.tanh(pre)
        scores = (u @ v).ravel()
        logits = scores.copy()
        logits[:N][visited] = NEG_INF
        finite = np.flatnonzero(np.isfinite(logits))
        z = logits[finite] - np.max(logits[finite])
        expz = np.exp(z)
        probs_f = expz / expz.sum()
        if forced is not None:
            if t < len(forced):
                j = int(forced[t])
            else:
                j = N  # end token closes a forced partial selection
        elif greedy:
            j = int(finite[int(np.argmax(probs_f))])
        else:
            j = int(rng.choice(finite, p=probs_f))
        pos = int(np.where(finite == j)[0][0])
        logp_t = float(np.log(probs_f[pos]))
        probs_full = np.zeros(logits.size)
        probs_full[finite] = probs_f
        step_logits.append(logits)
        step_logps.append(logp_t)
        step_caches.append((lstm_cache, u, probs_full, finite, j, h, c))
        if use_end and j == N:
            break
        chosen.append(j)
        visited[j] = True
        x_t = E[j:j + 1]
        h, c = h_new, c_new
        t += 1
        if use_end and len(chosen) == N:
            break
        if not use_end and len(chosen) == m:
            break
    logp_l = float(sum(step_logps))
    cache = (E, EWe, step_caches, use_end)
    return chosen, step_logits, step_logps, logp_l, cache


def _decode_backward(params: PolicyParams, cache, w_l):
    """Accumulate w_l * grad(logp_l) into theta2; returns (dE, dh0, dc0)."""
    E, EWe, step_caches, use_end = cache
    t2 = params.theta2
    We, Wd, v = t2["ptr.We"].value, t2["ptr.Wd"].value, t2["ptr.v"].value
    N = E.shape[0]
    dE = np.zeros_like(E)
    dEWe = np.zeros_like(EWe)
    d_end = np.zeros((1, We.shape[1])) if use_end else None
    dh_next = np.zeros((1, Wd.shape[0]))
    dc_next = np.zeros((1, Wd.shape[0]))
    for t in reversed(range(len(step_caches))):
        lstm_cache, u, probs_full, finite, j, h_in, c_in = step_caches[t]
        dlogits = np.zeros(probs_full.size)
        dlogits[j] += w_l
        dlogits[finite] -= w_l * probs_full[finite]
        dscores = dlogits[:, None]             # (K, 1)
        t2["ptr.v"].grad += u.T @ dscores
        du = dscores @ v.T                     # (K, h)
        dpre = du * (1.0 - u * u)
        dEWe += dpre[:N]
        dd_proj = dpre.sum(axis=0, keepdims=True)
        if use_end:
            d_end += dpre[N:N + 1] @ We.T
            t2["ptr.We"].grad += t2["end"].value.T @ dpre[N:N + 1]
        h_new_grad = dd_proj @ Wd.T + dh_next
        # Decoder output at this step, recovered from the cell cache (o * tanh(c)).
        h_new = lstm_cache[6] * lstm_cache[8]
        t2["ptr.Wd"].grad += h_new.T @ dd_proj
        dx, dh_prev, dc_prev = nn.lstm_step_bwd(t2, "dec", lstm_cache,
                                                h_new_grad, dc_next)
        if t == 0:
            t2["start"].grad += dx
            dh0, dc0 = dh_prev, dc_prev
        else:
            prev_j = step_caches[t - 1][4]
            dE[prev_j:prev_j + 1] += dx
            dh_next, dc_next = dh_prev, dc_prev
    if not step_caches:
        dh0 = np.zeros((1, Wd.shape[0]))
        dc0 = np.zeros((1, Wd.shape[0]))
    if use_end and d_end is not None:
        t2["end"].grad += d_end
    dE += dEWe @ We.T
    t2["ptr.We"].grad += E.T @ dEWe
    return dE, dh0, dc0


# ---------------------------------------------------------------------------
# Acting and log-prob evaluation


def _empty_action() -> tuple[HierAction, DecodeTrace]:
    return HierAction(ratio=0.0, order=()), DecodeTrace()


def _act(state: CutSelState, params: PolicyParams, mode: str, seed: int):
    F = state.feature_matrix()
    N = F.shape[0]
    if N == 0:
        return _empty_action()
    rng = make_rng(seed)
    mu, sigma, _ = _higher_forward(params, F)
    if mode == "greedy":
        K = mu
    else:
        K = mu + sigma * rng.standard_normal()
    k = clamp_ratio(0.5 * np.tanh(K) + 0.5)
    logp_h = tanh_gauss_logp(mu, sigma, k)[0]
    m = num_from_ratio(N, k)
    E, h0, c0, _ = _lower_encode(params, F)
    order, step_logits, step_logps, logp_l, _ = _decode(
        params, E, h0, c0, m, rng=rng, greedy=(mode == "greedy"))
    action = HierAction(ratio=k, order=tuple(order))
    trace = DecodeTrace(step_logits=step_logits, order=list(order),
                        step_logps=step_logps, logp_l=logp_l, logp_h=logp_h)
    return action, trace


def hem_act(state, params: PolicyParams, mode: str = "sample", seed: int = 0):
    if params.variant != "hem":
        raise ValueError("hem_act requires hem-variant parameters")
    return _act(state, params, mode, seed)


def hempp_act(state, params: PolicyParams, mode: str = "sample",
              seed: int = 0):
    if params.variant != "hempp":
        raise ValueError("hempp_act requires hempp-variant parameters")
    return _act(state, params, mode, seed)


def log_prob(state: CutSelState, action: HierAction, params: PolicyParams):
    """(logp_h, logp_l) of a recorded action under arbitrary parameters."""
    F = state.feature_matrix()
    N = F.shape[0]
    if N == 0:
        if action.order:
            raise ActionContractError("nonempty action on an empty pool")
        return 0.0, 0.0
    m = num_from_ratio(N, action.ratio)
    if len(action.order) != m:
        raise ActionContractError(
            f"action length {len(action.order)} != floor(N*k) = {m}")
    mu, sigma, _ = _higher_forward(params, F)
    logp_h = tanh_gauss_logp(mu, sigma, clamp_ratio(action.ratio))[0]
    E, h0, c0, _ = _lower_encode(params, F)
    _, _, _, logp_l, _ = _decode(params, E, h0, c0, m,
                                 order=list(action.order))
    return logp_h, logp_l


def accumulate_policy_grad(state: CutSelState, action: HierAction,
                           params: PolicyParams, w_h: float, w_l: float):
    """Add w_h * grad(logp_h) + w_l * grad(logp_l) into the param grads.

    Returns (logp_h, logp_l) from the same forward pass.
    """
    F = state.feature_matrix()
    N = F.shape[0]
    if N == 0:
        return 0.0, 0.0
    m = num_from_ratio(N, action.ratio)
    if len(action.order) != m:
        raise ActionContractError("action inconsistent with its ratio")
    k = clamp_ratio(action.ratio)
    mu, sigma, h_cache = _higher_forward(params, F)
    logp_h, g_cache = tanh_gauss_logp(mu, sigma, k)
    if w_h != 0.0:
        dmu, dsigma = tanh_gauss_logp_bwd(g_cache, w_h)
        _higher_backward(params, h_cache, dmu, dsigma)
    E, h0, c0, enc_cache = _lower_encode(params, F)
    _, _, _, logp_l, dec_cache = _decode(params, E, h0, c0, m,
                                         order=list(action.order))
    if w_l != 0.0 and m > 0:
        dE, dh0, dc0 = _decode_backward(params, dec_cache, w_l)
        _lower_encode_bwd(params, enc_cache, dE, dh0, dc0)
    return logp_h, logp_l


# ---------------------------------------------------------------------------
# Value baseline


def value_forward(value_params: ParamDict, F):
    if F.shape[0] == 0:
        pooled = np.zeros((1, value_params["v_head.W"].value.shape[0]))
        out, cache2 = nn.linear_fwd(value_params, "v_head", pooled)
        return float(out[0, 0]), (None, cache2, 0)
    phi, cache1 = nn.mlp_fwd(value_params, "v_phi", F, 2)
    pooled = phi.mean(axis=0, keepdims=True)
    out, cache2 = nn.linear_fwd(value_params, "v_head", pooled)
    return float(out[0, 0]), (cache1, cache2, F.shape[0])


def value_backward(value_params: ParamDict, cache, dv: float):
    cache1, cache2, n = cache
    dpooled = nn.linear_bwd(value_params, "v_head",
                            cache2, np.array([[dv]]))
    if cache1 is None:
        return
    dphi = np.repeat(dpooled / n, n, axis=0)
    nn.mlp_bwd(value_params, "v_phi", cache1, dphi, 2)


# ---------------------------------------------------------------------------
# Rule-based baselines


def _scores(state: CutSelState, kind: str) -> np.ndarray:
    F = state.feature_matrix()
    if kind == "nv":
        return F[:, F_NV]
    if kind == "eff":
        return F[:, F_EFF]
    if kind == "default_like":
        return 0.5 * F[:, F_EFF] + 0.3 * F[:, F_PAR] + 0.2 * F[:, F_SUPPORT]
    raise ValueError(f"no score for rule {kind!r}")


def heuristic_act(state: CutSelState, rule: str,
                  ratio: float | None = None, seed: int = 0) -> HierAction:
    """Rule-based selection.

    ``nocuts`` selects nothing; ``random`` a random subset in random order;
    ``nv``/``eff``/``default_like`` keep the top floor(N*ratio) by score in
    score order (stable ties by index); ``random_all`` shuffles everything;
    ``random_nv`` keeps the NV top set, then shuffles it.
    """
    N = state.n_candidates
    if rule == "nocuts" or N == 0:
        return HierAction(ratio=0.0, order=())
    ratio = DEFAULT_RULE_RATIO if ratio is None else float(ratio)
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio outside [0, 1]")
    rng = make_rng(seed)
    if rule == "random_all":
        order = rng.permutation(N)
        return HierAction(ratio=1.0, order=tuple(int(j) for j in order))
    m = num_from_ratio(N, ratio)
    if rule == "random":
        order = rng.permutation(N)[:m]
        return HierAction(ratio=ratio, order=tuple(int(j) for j in order))
    if rule in ("nv", "eff", "default_like"):
        ranked = np.argsort(-_scores(state, rule), kind="stable")[:m]
        return HierAction(ratio=ratio, order=tuple(int(j) for j in ranked))
    if rule == "random_nv":
        ranked = np.argsort(-_scores(state, "nv"), kind="stable")[:m]
        shuffled = rng.permutation(np.asarray(ranked))
        return HierAction(ratio=ratio, order=tuple(int(j) for j in shuffled))
    raise ValueError(f"unknown rule {rule!r}")


def ablation_act(state: CutSelState, params: PolicyParams, kind: str,
                 seed: int = 0, fixed_ratio: float = DEFAULT_RULE_RATIO,
                 mode: str = "sample"):
    """Ablated variants of the hierarchical policy.

    ``without_higher``: pointer decoding terminated by an end token.
    ``hem_ratio``: lower level decodes exactly floor(N * fixed_ratio).
    ``hem_ratio_order``: hem_ratio's set re-sorted by original index.
    """
    F = state.feature_matrix()
    N = F.shape[0]
    if N == 0:
        return _empty_action()
    rng = make_rng(seed)
    E, h0, c0, _ = _lower_encode(params, F)
    if kind == "without_higher":
        order, step_logits, step_logps, logp_l, _ = _decode(
            params, E, h0, c0, N, rng=rng, greedy=(mode == "greedy"),
            use_end=True)
        action = HierAction(ratio=ratio_for_count(N, len(order)),
                            order=tuple(order))
        return action, DecodeTrace(step_logits=step_logits, order=list(order),
                                   step_logps=step_logps, logp_l=logp_l)
    if kind in ("hem_ratio", "hem_ratio_order"):
        m = num_from_ratio(N, fixed_ratio)
        order, step_logits, step_logps, logp_l, _ = _decode(
            params, E, h0, c0, m, rng=rng, greedy=(mode == "greedy"))
        if kind == "hem_ratio_order":
            order = sorted(order)
        action = HierAction(ratio=fixed_ratio, order=tuple(order))
        return action, DecodeTrace(step_logits=step_logits, order=list(order),
                                   step_logps=step_logps, logp_l=logp_l)
    raise ValueError(f"unknown ablation {kind!r}")


# ---------------------------------------------------------------------------
# Score-based baseline: independent per-cut MLP scorer


def sbp_params(seed: int, dims: PolicyDims | None = None) -> ParamDict:
    dims = dims or PolicyDims()
    rng = make_rng(seed)
    return nn.mlp_params(rng, [dims.n_features, dims.hidden, 1], "sbp")


def sbp_act(state: CutSelState, scorer_params: ParamDict, ratio: float,
            seed: int = 0) -> HierAction:
    """Score each cut independently; keep the top floor(N*ratio) in score
    order, ties broken by original index."""
    F = state.feature_matrix()
    N = F.shape[0]
    if N == 0:
        return HierAction(ratio=0.0, order=())
    scores, _ = nn.mlp_fwd(scorer_params, "sbp", F, 2)
    m = num_from_ratio(N, ratio)
    ranked = np.argsort(-scores.ravel(), kind="stable")[:m]
    return HierAction(ratio=ratio, order=tuple(int(j) for j in ranked))
