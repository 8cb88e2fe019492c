"""Recurrent classifiers in plain numpy: LSTM, GRU and attention-pooled LSTM
with a sigmoid head, weighted binary cross-entropy, exact backpropagation
through time and Adam.

Arrays are batched as ``(batch, time, features)``. A 0/1 mask marks real
steps; at masked steps the recurrent state is carried through unchanged, so
left padding never affects the output. Everything is dtype-generic (float64
by default; longdouble works for gradient checks).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ARCHITECTURES = ("lstm", "gru", "attention_lstm")
PAPER_HIDDEN_CELLS = (8, 64, 128)
PROB_EPS = 1e-7

_GATES = {"lstm": 4, "attention_lstm": 4, "gru": 3}


class AllMasked(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    hidden_cells: int
    input_dim: int = 19
    seq_len: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.hidden_cells < 1 or self.input_dim < 1 or self.seq_len < 1:
            raise ValueError("hidden_cells, input_dim and seq_len must be positive")

    @property
    def name(self) -> str:
        return f"{self.architecture}_{self.hidden_cells}"

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "hidden_cells": self.hidden_cells,
            "input_dim": self.input_dim,
            "seq_len": self.seq_len,
            "seed": self.seed,
        }


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, D = config.hidden_cells, config.input_dim
    G = _GATES[config.architecture]
    shapes = {"W": (G * H, D), "U": (G * H, H), "b": (G * H,)}
    if config.architecture == "attention_lstm":
        shapes["W_att"] = (H, H)
        shapes["v_att"] = (H,)
    shapes["w_out"] = (H,)
    shapes["b_out"] = (1,)
    return shapes


def recurrent_parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(parameter_shapes(config)[k])) for k in ("W", "U", "b"))


def init_parameters(config: ModelConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias 1."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name in ("b", "b_out"):
            params[name] = np.zeros(shape)
            continue
        fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape)
    if config.architecture in ("lstm", "attention_lstm"):
        H = config.hidden_cells
        params["b"][H:2 * H] = 1.0
    return params


def sigmoid(z):
    z = np.asarray(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# cells (work on a single vector or a batch of rows)


def lstm_cell(x_t, h_prev, c_prev, params):
    H = params["U"].shape[1]
    z = x_t @ params["W"].T + h_prev @ params["U"].T + params["b"]
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c_t = f * c_prev + i * g
    return o * np.tanh(c_t), c_t


def gru_cell(x_t, h_prev, params):
    H = params["U"].shape[1]
    xw = x_t @ params["W"].T + params["b"]
    hu = h_prev @ params["U"].T
    z = sigmoid(xw[..., :H] + hu[..., :H])
    r = sigmoid(xw[..., H:2 * H] + hu[..., H:2 * H])
    n = np.tanh(xw[..., 2 * H:] + r * hu[..., 2 * H:])
    return (1.0 - z) * n + z * h_prev


def _masked_softmax(scores, mask):
    valid = mask > 0
    if not np.all(valid.any(axis=-1)):
        raise AllMasked("attention pooling needs at least one unmasked step")
    top = np.max(np.where(valid, scores, -np.inf), axis=-1, keepdims=True)
    e = np.where(valid, np.exp(np.where(valid, scores - top, 0.0)), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(hidden_states, mask, params):
    a = np.tanh(hidden_states @ params["W_att"].T)
    return _masked_softmax(a @ params["v_att"], mask)


def attention_pool(hidden_states, mask, params):
    """Additive attention: scores ``v . tanh(W h_t)``, masked softmax, weighted sum."""
    hidden_states = np.asarray(hidden_states)
    mask = np.asarray(mask)
    alpha = attention_weights(hidden_states, mask, params)
    return np.einsum("...t,...th->...h", alpha, hidden_states)


# ---------------------------------------------------------------------------
# batched forward / backward


@dataclass
class _Cache:
    X: np.ndarray
    mask: np.ndarray
    hs: np.ndarray  # (B, T+1, H); hs[:, 0] is the initial zero state
    cs: np.ndarray | None
    gates: list = field(default_factory=list)
    feat: np.ndarray | None = None
    att_a: np.ndarray | None = None
    att_alpha: np.ndarray | None = None


def _dtype(X, params):
    return np.result_type(X, params["W"])


def _run_lstm(X, mask, params, cache):
    B, T, _ = X.shape
    H = params["U"].shape[1]
    dt = _dtype(X, params)
    xw = X @ params["W"].T + params["b"]
    UT = params["U"].T
    hs = np.zeros((B, T + 1, H), dtype=dt)
    cs = np.zeros((B, T + 1, H), dtype=dt)
    for t in range(T):
        h, c = hs[:, t], cs[:, t]
        z = xw[:, t] + h @ UT
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        m = mask[:, t, None] > 0
        hs[:, t + 1] = np.where(m, o * tc, h)
        cs[:, t + 1] = np.where(m, c_new, c)
        cache.gates.append((i, f, g, o, tc))
    cache.hs, cache.cs = hs, cs


def _run_gru(X, mask, params, cache):
    B, T, _ = X.shape
    H = params["U"].shape[1]
    dt = _dtype(X, params)
    xw = X @ params["W"].T + params["b"]
    UT = params["U"].T
    hs = np.zeros((B, T + 1, H), dtype=dt)
    for t in range(T):
        h = hs[:, t]
        hu = h @ UT
        z = sigmoid(xw[:, t, :H] + hu[:, :H])
        r = sigmoid(xw[:, t, H:2 * H] + hu[:, H:2 * H])
        n = np.tanh(xw[:, t, 2 * H:] + r * hu[:, 2 * H:])
        m = mask[:, t, None] > 0
        hs[:, t + 1] = np.where(m, (1.0 - z) * n + z * h, h)
        cache.gates.append((z, r, n, hu[:, 2 * H:]))
    cache.hs, cache.cs = hs, None


def _leading_masked(mask) -> int:
    """Count of leading steps masked in every row; skipping them is exact (state stays zero)."""
    live = np.nonzero(np.asarray(mask).any(axis=0))[0]
    return int(live[0]) if live.size else 0


def _forward(X, mask, params, architecture):
    X = np.asarray(X)
    mask = np.asarray(mask)
    t0 = _leading_masked(mask)
    if t0:
        X, mask = X[:, t0:], mask[:, t0:]
    cache = _Cache(X=X, mask=mask, hs=None, cs=None)
    if architecture == "gru":
        _run_gru(X, mask, params, cache)
    else:
        _run_lstm(X, mask, params, cache)
    if architecture == "attention_lstm":
        states = cache.hs[:, 1:]
        a = np.tanh(states @ params["W_att"].T)
        alpha = _masked_softmax(a @ params["v_att"], mask)
        cache.att_a, cache.att_alpha = a, alpha
        feat = np.einsum("bt,bth->bh", alpha, states)
    else:
        feat = cache.hs[:, -1]
    cache.feat = feat
    logits = feat @ params["w_out"] + params["b_out"][0]
    return sigmoid(logits), cache


def predict_proba(X, mask, params, config: ModelConfig | str, batch_size: int = 512) -> np.ndarray:
    """Probabilities for a batch ``X (B, T, D)`` with mask ``(B, T)``."""
    arch = config if isinstance(config, str) else config.architecture
    X = np.asarray(X)
    mask = np.asarray(mask)
    if X.shape[0] == 0:
        return np.zeros(0)
    out = [
        _forward(X[s:s + batch_size], mask[s:s + batch_size], params, arch)[0]
        for s in range(0, X.shape[0], batch_size)
    ]
    return np.concatenate(out)


def forward(sequence, mask, params, config: ModelConfig | str) -> float:
    """Probability of DPI for one ``(T, D)`` sequence."""
    arch = config if isinstance(config, str) else config.architecture
    p, _ = _forward(np.asarray(sequence)[None], np.asarray(mask)[None], params, arch)
    return p[0]


def clamp_probability(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def weighted_bce(y, p, w_pos: float = 1.0, w_neg: float = 1.0):
    """``-[w_pos y ln p + w_neg (1-y) ln(1-p)]`` with p clamped to [1e-7, 1-1e-7]."""
    p = clamp_probability(np.asarray(p))
    y = np.asarray(y)
    return -(w_pos * y * np.log(p) + w_neg * (1.0 - y) * np.log(1.0 - p))


def _dlogit(y, p, w_pos, w_neg):
    g = w_neg * (1.0 - y) * p - w_pos * y * (1.0 - p)
    inside = (p >= PROB_EPS) & (p <= 1.0 - PROB_EPS)
    return np.where(inside, g, 0.0)


def _backward_lstm(cache, params, dh_ext, dh_last):
    X, mask = cache.X, cache.mask
    B, T, D = X.shape
    H = params["U"].shape[1]
    U = params["U"]
    dxw = np.zeros((B, T, 4 * H), dtype=cache.hs.dtype)
    dU = np.zeros_like(U, dtype=cache.hs.dtype)
    dh = dh_last.copy()
    dc = np.zeros_like(dh)
    for t in range(T - 1, -1, -1):
        if dh_ext is not None:
            dh = dh + dh_ext[:, t]
        i, f, g, o, tc = cache.gates[t]
        m = mask[:, t, None] > 0
        h_prev, c_prev = cache.hs[:, t], cache.cs[:, t]
        dh_new = np.where(m, dh, 0.0)
        dc_new = np.where(m, dc, 0.0) + dh_new * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc_new * g * i * (1.0 - i),
                dc_new * c_prev * f * (1.0 - f),
                dc_new * i * (1.0 - g * g),
                dh_new * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        dxw[:, t] = dz
        dU += dz.T @ h_prev
        dh = dz @ U + np.where(m, 0.0, dh)
        dc = dc_new * f + np.where(m, 0.0, dc)
    return dxw, dU


def _backward_gru(cache, params, dh_ext, dh_last):
    X, mask = cache.X, cache.mask
    B, T, D = X.shape
    H = params["U"].shape[1]
    U = params["U"]
    dxw = np.zeros((B, T, 3 * H), dtype=cache.hs.dtype)
    dU = np.zeros_like(U, dtype=cache.hs.dtype)
    dh = dh_last.copy()
    for t in range(T - 1, -1, -1):
        if dh_ext is not None:
            dh = dh + dh_ext[:, t]
        z, r, n, hu_n = cache.gates[t]
        m = mask[:, t, None] > 0
        h_prev = cache.hs[:, t]
        dh_new = np.where(m, dh, 0.0)
        dan = dh_new * (1.0 - z) * (1.0 - n * n)
        daz = dh_new * (h_prev - n) * z * (1.0 - z)
        dar = dan * hu_n * r * (1.0 - r)
        dxw[:, t] = np.concatenate([daz, dar, dan], axis=1)
        dhu = np.concatenate([daz, dar, dan * r], axis=1)
        dU += dhu.T @ h_prev
        dh = dh_new * z + dhu @ U + np.where(m, 0.0, dh)
    return dxw, dU


def _backprop(cache, params, dlogit, arch):
    """Parameter gradients and per-step pre-activation gradients from dL/dlogit."""
    B = dlogit.shape[0]
    grads = {
        "w_out": cache.feat.T @ dlogit,
        "b_out": np.array([dlogit.sum()]),
    }
    dfeat = dlogit[:, None] * params["w_out"]
    H = params["U"].shape[1]
    dh_ext = None
    dh_last = np.zeros((B, H), dtype=cache.hs.dtype)
    if arch == "attention_lstm":
        states = cache.hs[:, 1:]
        a, alpha = cache.att_a, cache.att_alpha
        dalpha = (states @ dfeat[:, :, None])[..., 0]
        ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        grads["v_att"] = np.einsum("bt,bth->h", ds, a)
        du = ds[..., None] * params["v_att"] * (1.0 - a * a)
        grads["W_att"] = np.einsum("bti,btj->ij", du, states)
        dh_ext = alpha[..., None] * dfeat[:, None, :] + du @ params["W_att"]
    else:
        dh_last = dfeat

    backward_fn = _backward_gru if arch == "gru" else _backward_lstm
    dxw, dU = backward_fn(cache, params, dh_ext, dh_last)
    X = cache.X
    flat = dxw.reshape(-1, dxw.shape[2])
    grads["W"] = flat.T @ X.reshape(-1, X.shape[2])
    grads["U"] = dU
    grads["b"] = flat.sum(axis=0)
    return {k: grads[k] for k in params}, dxw


def loss_and_gradients(X, mask, y, params, config: ModelConfig | str, w_pos: float = 1.0, w_neg: float = 1.0):
    """Mean weighted BCE over the batch and its exact gradient for every parameter."""
    arch = config if isinstance(config, str) else config.architecture
    X = np.asarray(X)
    y = np.asarray(y, dtype=X.dtype)
    p, cache = _forward(X, mask, params, arch)
    loss = weighted_bce(y, p, w_pos, w_neg).mean()
    grads, _ = _backprop(cache, params, _dlogit(y, p, w_pos, w_neg) / X.shape[0], arch)
    return loss, grads


def input_gradient(X, mask, y, params, config, w_pos: float = 1.0, w_neg: float = 1.0):
    """Gradient of the mean batch loss w.r.t. the inputs ``X``."""
    arch = config if isinstance(config, str) else config.architecture
    X = np.asarray(X)
    y = np.asarray(y, dtype=X.dtype)
    p, cache = _forward(X, mask, params, arch)
    _, dxw = _backprop(cache, params, _dlogit(y, p, w_pos, w_neg) / X.shape[0], arch)
    dX = np.zeros_like(X, dtype=dxw.dtype)
    dX[:, X.shape[1] - dxw.shape[1]:] = dxw @ params["W"]
    return dX


def backward(sequence, mask, y, params, config, w_pos: float = 1.0, w_neg: float = 1.0):
    """Gradients of weighted BCE for a single sequence."""
    _, grads = loss_and_gradients(np.asarray(sequence)[None], np.asarray(mask)[None], [y], params, config, w_pos, w_neg)
    return grads


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Mutates ``state``; returns new parameters."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        out[k] = p - lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + eps)
    return out


def all_finite(params: dict[str, np.ndarray]) -> bool:
    return all(np.all(np.isfinite(p)) for p in params.values())
