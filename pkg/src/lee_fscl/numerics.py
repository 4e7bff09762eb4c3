"""Dense float64 math with hand-derived gradients.

Everything here works on numpy arrays. Functions that accept a vector also
accept a batch of row vectors (reduction over the last axis) so the training
loop never has to loop over samples in Python.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DegenerateEmbedding, LabelError, NumericsError

PROB_FLOOR = 1e-12


def _check_finite(name: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericsError(f"non-finite values in {name}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def _cosine_parts(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.shape[-1] < 1:
        raise NumericsError(f"cosine shape mismatch {a.shape} vs {b.shape}")
    aa = np.sum(a * a, axis=-1)
    bb = np.sum(b * b, axis=-1)
    if np.any(aa == 0.0) or np.any(bb == 0.0):
        raise DegenerateEmbedding("cosine similarity of a zero-norm vector")
    ab = np.sum(a * b, axis=-1)
    # sqrt(fl(x*x)) == x exactly, so identical inputs give exactly 1.0
    cos = np.clip(ab / np.sqrt(aa * bb), -1.0, 1.0)
    return a, b, aa, bb, cos


def cosine_similarity(a, b):
    """a.b / (|a||b|) along the last axis; scalar for 1-D input."""
    _, _, _, _, cos = _cosine_parts(a, b)
    return float(cos) if np.ndim(cos) == 0 else cos


def cosine_similarity_grad(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b, aa, bb, cos = _cosine_parts(a, b)
    norm_ab = np.sqrt(aa * bb)[..., None]
    c = cos[..., None] if np.ndim(cos) else cos
    grad_a = b / norm_ab - c * a / aa[..., None]
    grad_b = a / norm_ab - c * b / bb[..., None]
    return grad_a, grad_b


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    _check_finite("logits", logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, label):
    """-log p[label], with p clamped below at 1e-12.

    ``probs`` may be a single distribution with an int label or a batch
    (B x C) with a label array; the batch form returns per-row losses.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(label)
    n_classes = probs.shape[-1]
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise LabelError(f"label {label} out of range for {n_classes} classes")
    if probs.ndim == 1:
        return float(-np.log(max(probs[int(labels)], PROB_FLOOR)))
    picked = probs[np.arange(probs.shape[0]), labels]
    return -np.log(np.maximum(picked, PROB_FLOOR))


@dataclass
class LSTMTrace:
    x: np.ndarray  # B x L x D
    hs: np.ndarray  # B x (L+1) x H, hs[:, 0] = h_0
    cs: np.ndarray  # B x (L+1) x H
    gates: np.ndarray  # B x L x 4H, post-activation [i, f, g, o]
    squeeze: bool = False


def lstm_forward(W_x, W_h, b, seq) -> tuple[np.ndarray, LSTMTrace]:
    """Run a single-layer LSTM from zero state.

    Gate blocks are stacked as [input, forget, cell, output] along the 4H axis.
    ``seq`` is L x D or B x L x D; returns hidden states of matching rank
    (L x H or B x L x H) and the trace needed by :func:`lstm_backward`.
    """
    x = np.asarray(seq, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != W_x.shape[1]:
        raise NumericsError(f"input shape {np.shape(seq)} incompatible with W_x {W_x.shape}")
    H = W_h.shape[1]
    if W_x.shape[0] != 4 * H or W_h.shape[0] != 4 * H or b.shape != (4 * H,):
        raise NumericsError("inconsistent LSTM parameter shapes")
    B, L, _ = x.shape

    hs = np.zeros((B, L + 1, H))
    cs = np.zeros((B, L + 1, H))
    gates = np.empty((B, L, 4 * H))
    xw = x @ W_x.T + b  # input projection for all steps at once
    for t in range(L):
        a = xw[:, t] + hs[:, t] @ W_h.T
        act = sigmoid(a)
        act[:, 2 * H:3 * H] = np.tanh(a[:, 2 * H:3 * H])
        i, f, g, o = act[:, :H], act[:, H:2 * H], act[:, 2 * H:3 * H], act[:, 3 * H:]
        cs[:, t + 1] = f * cs[:, t] + i * g
        hs[:, t + 1] = o * np.tanh(cs[:, t + 1])
        gates[:, t] = act
    _check_finite("LSTM activations", hs, cs)

    out = hs[:, 1:]
    trace = LSTMTrace(x=x, hs=hs, cs=cs, gates=gates, squeeze=squeeze)
    return (out[0] if squeeze else out), trace


def lstm_backward(W_x, W_h, trace: LSTMTrace, grad_hL):
    """Backprop through time from a gradient on the final hidden state.

    Returns ``({"W_x", "W_h", "b"} grads, grad_input)`` where grad_input has
    the shape of the forward input.
    """
    x, hs, cs, gates = trace.x, trace.hs, trace.cs, trace.gates
    B, L, _ = x.shape
    H = W_h.shape[1]
    dh = np.asarray(grad_hL, dtype=np.float64)
    if trace.squeeze and dh.ndim == 1:
        dh = dh[None]
    if dh.shape != (B, H) or W_x.shape[0] != 4 * H:
        raise NumericsError(f"gradient shape {np.shape(grad_hL)} does not match trace ({B}, {H})")

    dW_x = np.zeros_like(W_x)
    dW_h = np.zeros_like(W_h)
    db = np.zeros(4 * H)
    dx = np.zeros_like(x)
    dc = np.zeros((B, H))
    da = np.empty((B, 4 * H))
    for t in range(L - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H:2 * H]
        g = gates[:, t, 2 * H:3 * H]
        o = gates[:, t, 3 * H:]
        tanh_c = np.tanh(cs[:, t + 1])
        dc = dc + dh * o * (1.0 - tanh_c ** 2)
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H:2 * H] = dc * cs[:, t] * f * (1.0 - f)
        da[:, 2 * H:3 * H] = dc * i * (1.0 - g ** 2)
        da[:, 3 * H:] = dh * tanh_c * o * (1.0 - o)
        dW_x += da.T @ x[:, t]
        dW_h += da.T @ hs[:, t]
        db += da.sum(axis=0)
        dx[:, t] = da @ W_x
        dh = da @ W_h
        dc = dc * f
    _check_finite("LSTM gradients", dW_x, dW_h, db)
    grads = {"W_x": dW_x, "W_h": dW_h, "b": db}
    return grads, (dx[0] if trace.squeeze else dx)


def dropout(vec, p: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout. Returns ``(out, mask)``; the mask already carries the 1/(1-p) scale."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    vec = np.asarray(vec, dtype=np.float64)
    if not train or p == 0.0:
        return vec.copy(), np.ones_like(vec)
    if rng is None:
        raise ConfigError("train-mode dropout needs an rng")
    mask = (rng.random(vec.shape) >= p) / (1.0 - p)
    return vec * mask, mask


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("Adam learning rate must be positive")


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update, applied in place to ``params``."""
    if set(params) != set(grads):
        raise NumericsError(f"parameter/gradient keys differ: {sorted(params)} vs {sorted(grads)}")
    for name, p in params.items():
        if np.shape(grads[name]) != p.shape:
            raise NumericsError(f"gradient shape mismatch for {name}")
        if name in state.m and state.m[name].shape != p.shape:
            raise NumericsError(f"Adam moment shape mismatch for {name}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
