"""Minimal differentiable kernel: dense layers, an LSTM, scaled dot-product
multi-head attention, and a squashed-Gaussian ratio distribution, all with
explicit reverse-mode backward functions (no external autodiff).

Parameters live in flat ``dict[str, Tensor2]`` maps keyed by dotted names.
Forward functions return a cache that the matching backward function
consumes; backward functions accumulate into every parameter's ``grad``
buffer and return the gradient with respect to their inputs.  Everything is
float64 to keep finite-difference checks tight.

Random streams use numpy's counter-based Philox generator keyed directly by
the seed, so sequences reproduce across platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-4
RATIO_CLAMP = 1e-6  # sampled ratios live in [RATIO_CLAMP, 1 - RATIO_CLAMP]

_LOG_2PI = float(np.log(2.0 * np.pi))


class Tensor2:
    """A 2-D float64 value with a same-shape gradient buffer."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        if self.value.ndim != 2:
            raise ValueError("Tensor2 holds 2-D arrays only")
        self.grad = np.zeros_like(self.value)

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def copy(self) -> "Tensor2":
        t = Tensor2(self.value.copy())
        t.grad = self.grad.copy()
        return t


ParamDict = dict


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``seed`` (reproducible anywhere)."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def zero_grads(params: ParamDict) -> None:
    for t in params.values():
        t.grad[...] = 0.0


def clone_params(params: ParamDict) -> ParamDict:
    return {k: t.copy() for k, t in params.items()}


def flatten_values(params: ParamDict) -> np.ndarray:
    return np.concatenate([params[k].value.ravel() for k in sorted(params)])


def flatten_grads(params: ParamDict) -> np.ndarray:
    return np.concatenate([params[k].grad.ravel() for k in sorted(params)])


def param_count(params: ParamDict) -> int:
    return sum(t.value.size for t in params.values())


def mean_abs_value(params: ParamDict) -> float:
    total = sum(float(np.sum(np.abs(t.value))) for t in params.values())
    return total / max(param_count(params), 1)


def _uniform(rng, rows, cols, fan_in):
    scale = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-scale, scale, size=(rows, cols))


# ---------------------------------------------------------------------------
# Linear / MLP


def linear_params(rng, d_in, d_out, prefix) -> ParamDict:
    return {
        f"{prefix}.W": Tensor2(_uniform(rng, d_in, d_out, d_in)),
        f"{prefix}.b": Tensor2(_uniform(rng, 1, d_out, d_in)),
    }


def linear_fwd(params, prefix, X):
    W, b = params[f"{prefix}.W"].value, params[f"{prefix}.b"].value
    return X @ W + b, X


def linear_bwd(params, prefix, cache, dY):
    X = cache
    W = params[f"{prefix}.W"].value
    params[f"{prefix}.W"].grad += X.T @ dY
    params[f"{prefix}.b"].grad += dY.sum(axis=0, keepdims=True)
    return dY @ W.T


def mlp_params(rng, dims, prefix) -> ParamDict:
    """Dense stack with tanh between layers (linear final layer)."""
    out = {}
    for i in range(len(dims) - 1):
        out.update(linear_params(rng, dims[i], dims[i + 1], f"{prefix}.{i}"))
    return out


def mlp_fwd(params, prefix, X, n_layers):
    caches = []
    h = X
    for i in range(n_layers):
        z, cx = linear_fwd(params, f"{prefix}.{i}", h)
        if i < n_layers - 1:
            h = np.tanh(z)
            caches.append((cx, h))
        else:
            h = z
            caches.append((cx, None))
    return h, caches


def mlp_bwd(params, prefix, caches, dY, n_layers):
    grad = dY
    for i in reversed(range(n_layers)):
        cx, act = caches[i]
        if act is not None:
            grad = grad * (1.0 - act * act)
        grad = linear_bwd(params, f"{prefix}.{i}", cx, grad)
    return grad


# ---------------------------------------------------------------------------
# LSTM


def lstm_params(rng, d_in, d_h, prefix) -> ParamDict:
    return {
        f"{prefix}.Wx": Tensor2(_uniform(rng, d_in, 4 * d_h, d_in)),
        f"{prefix}.Wh": Tensor2(_uniform(rng, d_h, 4 * d_h, d_h)),
        f"{prefix}.b": Tensor2(_uniform(rng, 1, 4 * d_h, d_h)),
    }


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_step(params, prefix, x, h, c):
    """One LSTM cell step; gate layout [input, forget, cell, output]."""
    Wx = params[f"{prefix}.Wx"].value
    Wh = params[f"{prefix}.Wh"].value
    b = params[f"{prefix}.b"].value
    d_h = Wh.shape[0]
    z = x @ Wx + h @ Wh + b
    i = _sigmoid(z[:, :d_h])
    f = _sigmoid(z[:, d_h:2 * d_h])
    g = np.tanh(z[:, 2 * d_h:3 * d_h])
    o = _sigmoid(z[:, 3 * d_h:])
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    cache = (x, h, c, i, f, g, o, c_new, tanh_c)
    return h_new, c_new, cache


def lstm_step_bwd(params, prefix, cache, dh, dc):
    x, h, c, i, f, g, o, c_new, tanh_c = cache
    Wx = params[f"{prefix}.Wx"].value
    Wh = params[f"{prefix}.Wh"].value
    do = dh * tanh_c
    dc_total = dc + dh * o * (1.0 - tanh_c * tanh_c)
    di = dc_total * g
    df = dc_total * c
    dg = dc_total * i
    dc_prev = dc_total * f
    dz = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g * g),
        do * o * (1.0 - o),
    ], axis=1)
    params[f"{prefix}.Wx"].grad += x.T @ dz
    params[f"{prefix}.Wh"].grad += h.T @ dz
    params[f"{prefix}.b"].grad += dz.sum(axis=0, keepdims=True)
    dx = dz @ Wx.T
    dh_prev = dz @ Wh.T
    return dx, dh_prev, dc_prev


def lstm_encode(params, prefix, X):
    """Run the cell over the rows of X; returns all hidden states and caches."""
    N = X.shape[0]
    d_h = params[f"{prefix}.Wh"].value.shape[0]
    h = np.zeros((1, d_h))
    c = np.zeros((1, d_h))
    H = np.zeros((N, d_h))
    caches = []
    for t in range(N):
        h, c, cache = lstm_step(params, prefix, X[t:t + 1], h, c)
        H[t] = h[0]
        caches.append(cache)
    return H, (h, c), caches


def lstm_encode_bwd(params, prefix, caches, dH, dlast=None):
    """Backward over the sequence; dH is (N, d_h), dlast optional (dh, dc)."""
    N = len(caches)
    d_h = dH.shape[1]
    dh = np.zeros((1, d_h))
    dc = np.zeros((1, d_h))
    if dlast is not None:
        dh = dh + dlast[0]
        dc = dc + dlast[1]
    dX = np.zeros((N, caches[0][0].shape[1]))
    for t in reversed(range(N)):
        dh_t = dh + dH[t:t + 1]
        dx, dh, dc = lstm_step_bwd(params, prefix, caches[t], dh_t, dc)
        dX[t] = dx[0]
    return dX


# ---------------------------------------------------------------------------
# Multi-head attention (one scaled dot-product block, no positional encoding)


def mha_params(rng, d_in, d_model, heads, prefix) -> ParamDict:
    if d_model % heads != 0:
        raise ValueError("d_model must be divisible by heads")
    return {
        f"{prefix}.Wq": Tensor2(_uniform(rng, d_in, d_model, d_in)),
        f"{prefix}.Wk": Tensor2(_uniform(rng, d_in, d_model, d_in)),
        f"{prefix}.Wv": Tensor2(_uniform(rng, d_in, d_model, d_in)),
        f"{prefix}.Wo": Tensor2(_uniform(rng, d_model, d_model, d_model)),
    }


def _softmax_rows(S):
    Z = S - S.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


def mha_encode(params, prefix, X, heads):
    """Permutation-equivariant embeddings of the rows of X.

    Per head: u_ij = q_i.k_j / sqrt(d_k), row softmax, value mixing; heads
    concatenated and projected.  Permuting input rows permutes output rows
    identically because nothing depends on position.
    """
    Wq = params[f"{prefix}.Wq"].value
    Wk = params[f"{prefix}.Wk"].value
    Wv = params[f"{prefix}.Wv"].value
    Wo = params[f"{prefix}.Wo"].value
    N = X.shape[0]
    d_model = Wq.shape[1]
    d_k = d_model // heads
    Q, K, V = X @ Wq, X @ Wk, X @ Wv
    Qh = Q.reshape(N, heads, d_k).transpose(1, 0, 2)
    Kh = K.reshape(N, heads, d_k).transpose(1, 0, 2)
    Vh = V.reshape(N, heads, d_k).transpose(1, 0, 2)
    S = Qh @ Kh.transpose(0, 2, 1) / np.sqrt(d_k)
    P = _softmax_rows(S)
    if not np.all(np.isfinite(P)):
        raise FloatingPointError("attention softmax produced non-finite rows")
    Oh = P @ Vh
    O = Oh.transpose(1, 0, 2).reshape(N, d_model)
    Y = O @ Wo
    cache = (X, Qh, Kh, Vh, P, O, heads)
    return Y, cache


def mha_bwd(params, prefix, cache, dY):
    X, Qh, Kh, Vh, P, O, heads = cache
    Wq = params[f"{prefix}.Wq"].value
    Wk = params[f"{prefix}.Wk"].value
    Wv = params[f"{prefix}.Wv"].value
    Wo = params[f"{prefix}.Wo"].value
    N = X.shape[0]
    d_model = Wq.shape[1]
    d_k = d_model // heads
    params[f"{prefix}.Wo"].grad += O.T @ dY
    dO = dY @ Wo.T
    dOh = dO.reshape(N, heads, d_k).transpose(1, 0, 2)
    dP = dOh @ Vh.transpose(0, 2, 1)
    dVh = P.transpose(0, 2, 1) @ dOh
    # softmax rows backward
    dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True))
    dS /= np.sqrt(d_k)
    dQh = dS @ Kh
    dKh = dS.transpose(0, 2, 1) @ Qh
    dQ = dQh.transpose(1, 0, 2).reshape(N, d_model)
    dK = dKh.transpose(1, 0, 2).reshape(N, d_model)
    dV = dVh.transpose(1, 0, 2).reshape(N, d_model)
    params[f"{prefix}.Wq"].grad += X.T @ dQ
    params[f"{prefix}.Wk"].grad += X.T @ dK
    params[f"{prefix}.Wv"].grad += X.T @ dV
    return dQ @ Wq.T + dK @ Wk.T + dV @ Wv.T


# ---------------------------------------------------------------------------
# Squashed-Gaussian ratio distribution: k = 0.5 * tanh(K) + 0.5


@dataclass
class TanhGaussian:
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < SIGMA_FLOOR:
            raise ValueError(f"sigma below floor {SIGMA_FLOOR}")


def clamp_ratio(k: float) -> float:
    return min(max(k, RATIO_CLAMP), 1.0 - RATIO_CLAMP)


def tanh_gauss_sample(dist: TanhGaussian, rng: np.random.Generator):
    """Sample k in (0,1) with its log density (change of variables included)."""
    K = dist.mu + dist.sigma * rng.standard_normal()
    k = clamp_ratio(0.5 * np.tanh(K) + 0.5)
    return k, tanh_gauss_logp(dist.mu, dist.sigma, k)[0]


def tanh_gauss_logp(mu: float, sigma: float, k: float):
    """log density of the squashed variable at k, plus a backward cache.

    With t = 2k-1 = tanh(K): log p(k) = log N(atanh(t); mu, sigma)
    - log(0.5 * (1 - t^2)).
    """
    t = 2.0 * k - 1.0
    K = np.arctanh(t)
    zscore = (K - mu) / sigma
    log_normal = -0.5 * zscore * zscore - np.log(sigma) - 0.5 * _LOG_2PI
    log_det = np.log(0.5) + np.log1p(-t * t)
    logp = float(log_normal - log_det)
    cache = (mu, sigma, zscore)
    return logp, cache


def tanh_gauss_logp_bwd(cache, dlogp=1.0):
    """d logp / d(mu, sigma) for a fixed sample k."""
    mu, sigma, zscore = cache
    dmu = dlogp * zscore / sigma
    dsigma = dlogp * (zscore * zscore - 1.0) / sigma
    return dmu, dsigma


def tanh_gauss_pdf(mu: float, sigma: float, k: float) -> float:
    return float(np.exp(tanh_gauss_logp(mu, sigma, k)[0]))


def softplus(z):
    return np.where(z > 30.0, z, np.log1p(np.exp(np.minimum(z, 30.0))))


def softplus_grad(z):
    return _sigmoid(np.asarray(z, dtype=float))


def num_from_ratio(n: int, k: float) -> int:
    """floor(n*k), except the clamp ceiling k >= 1-1e-6 selects all n."""
    if k >= 1.0 - 1e-6:
        return n
    return int(np.floor(n * k))


def ratio_for_count(n: int, m: int) -> float:
    """A ratio whose floor(n*ratio) equals m exactly (for heuristic actions)."""
    if m >= n:
        return 1.0
    return (m + 0.5) / n


# ---------------------------------------------------------------------------
# Gradient checking and checkpoints


def grad_check(params: ParamDict, run, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``run(want_grad)`` returns the scalar loss and, when ``want_grad`` is
    true, accumulates analytic gradients into the parameter buffers.
    Relative error per tensor is max|fd - analytic| over
    max(max|fd|, max|analytic|, 1e-8).
    """
    zero_grads(params)
    run(True)
    analytic = {k: t.grad.copy() for k, t in params.items()}
    worst = 0.0
    for name in sorted(params):
        t = params[name]
        fd = np.zeros_like(t.value)
        flat = t.value.ravel()
        fd_flat = fd.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = run(False)
            flat[idx] = orig - eps
            down = run(False)
            flat[idx] = orig
            fd_flat[idx] = (up - down) / (2.0 * eps)
        scale = max(float(np.max(np.abs(fd))),
                    float(np.max(np.abs(analytic[name]))), 1e-8)
        err = float(np.max(np.abs(fd - analytic[name]))) / scale
        worst = max(worst, err)
    return worst


def save_params(path, params: ParamDict) -> None:
    """Flat little-endian float64 blob prefixed by a one-line JSON header."""
    names = sorted(params)
    header = {}
    offset = 0
    for name in names:
        shape = list(params[name].value.shape)
        header[name] = {"offset": offset, "shape": shape}
        offset += params[name].value.size
    blob = np.concatenate([params[n].value.ravel() for n in names]) \
        if names else np.zeros(0)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob.astype("<f8").tobytes())


def load_params(path) -> ParamDict:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = np.frombuffer(fh.read(), dtype="<f8")
    header = json.loads(header_line.decode("utf-8"))
    out = {}
    for name, meta in header.items():
        r, c = meta["shape"]
        start = meta["offset"]
        out[name] = Tensor2(blob[start:start + r * c].reshape(r, c).copy())
    return out
