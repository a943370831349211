"""Recurrent cells, dense heads, losses, BPTT and Adam on numpy arrays.

Everything is double precision and explicitly seeded; no autodiff
framework is involved.  The single-step functions (lstm_step, gru_step,
encode_sequence) are the reference semantics; cell_forward and
cell_backward are the batched equivalents used for training, with the
input projection hoisted out of the time loop as one matrix product.

Gate packing along the first weight axis:
  LSTM: [input i, forget f, output o, candidate g], all (H,) blocks.
  GRU:  [update z, reset r, candidate n].
The GRU candidate uses the reset-gated recurrent term
n = tanh(W_n x + r * (U_n h) + b_n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64

GATE_COUNT = {"lstm": 4, "gru": 3}


@dataclass
class DenseParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class CellParams:
    kind: str  # "lstm" or "gru"
    W: np.ndarray  # (gates*H, D) input-to-hidden
    U: np.ndarray  # (gates*H, H) hidden-to-hidden
    b: np.ndarray  # (gates*H,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]


@dataclass
class CellGrads:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray


@dataclass
class DenseGrads:
    weight: np.ndarray
    bias: np.ndarray


def _open_uniforms(stream: SplitMix64, n: int) -> np.ndarray:
    # (bits >> 11) + 0.5 scaled to (0, 1): keeps init strictly inside (-a, a)
    return ((stream.u64(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def xavier_uniform(stream: SplitMix64, out_dim: int, in_dim: int) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (in_dim + out_dim))."""
    a = math.sqrt(6.0 / (in_dim + out_dim))
    return (2.0 * _open_uniforms(stream, out_dim * in_dim) - 1.0).reshape(out_dim, in_dim) * a


def init_cell(kind: str, input_size: int, hidden: int, stream: SplitMix64) -> CellParams:
    """Seeded cell init: Xavier weights per gate fan, zero biases.

    The LSTM forget-gate bias starts at 1.0 so early training does not
    flush the cell state.  Draw order (W then U) is a compatibility
    contract; changing it changes every seeded result.
    """
    if kind not in GATE_COUNT:
        raise ValueError(f"unknown cell kind {kind!r}")
    gates = GATE_COUNT[kind]
    a_w = math.sqrt(6.0 / (input_size + hidden))
    a_u = math.sqrt(6.0 / (hidden + hidden))
    W = (2.0 * _open_uniforms(stream, gates * hidden * input_size) - 1.0).reshape(
        gates * hidden, input_size
    ) * a_w
    U = (2.0 * _open_uniforms(stream, gates * hidden * hidden) - 1.0).reshape(
        gates * hidden, hidden
    ) * a_u
    b = np.zeros(gates * hidden)
    if kind == "lstm":
        b[hidden : 2 * hidden] = 1.0
    return CellParams(kind=kind, W=W, U=U, b=b)


def init_dense(in_dim: int, out_dim: int, stream: SplitMix64) -> DenseParams:
    return DenseParams(weight=xavier_uniform(stream, out_dim, in_dim), bias=np.zeros(out_dim))


def sigmoid(x):
    # tanh form saturates without overflow warnings
    return 0.5 * (np.tanh(0.5 * np.asarray(x, dtype=np.float64)) + 1.0)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probs: np.ndarray, true_class: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= true_class < probs.shape[-1]:
        raise ValueError(f"class {true_class} out of range for {probs.shape[-1]} classes")
    return -math.log(max(float(probs[true_class]), 1e-12))


def batch_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of a (B, k) probability batch."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape[0] != probs.shape[0]:
        raise ValueError("probs and labels disagree on batch size")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError("label out of class range")
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, 1e-12)).mean())


def _check_vector(name: str, v: np.ndarray, size: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (size,):
        raise ValueError(f"{name} must have shape ({size},), got {v.shape}")
    return v


def lstm_step(p: CellParams, x, h, c):
    """One LSTM step on vectors; returns (h', c')."""
    if p.kind != "lstm":
        raise ValueError("lstm_step needs lstm params")
    H = p.hidden_size
    x = _check_vector("x", x, p.input_size)
    h = _check_vector("h", h, H)
    c = _check_vector("c", c, H)
    a = p.W @ x + p.U @ h + p.b
    i = sigmoid(a[:H])
    f = sigmoid(a[H : 2 * H])
    o = sigmoid(a[2 * H : 3 * H])
    g = np.tanh(a[3 * H :])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def gru_step(p: CellParams, x, h):
    """One GRU step on vectors; returns h'."""
    if p.kind != "gru":
        raise ValueError("gru_step needs gru params")
    H = p.hidden_size
    x = _check_vector("x", x, p.input_size)
    h = _check_vector("h", h, H)
    wx = p.W @ x + p.b
    uh = p.U @ h
    z = sigmoid(wx[:H] + uh[:H])
    r = sigmoid(wx[H : 2 * H] + uh[H : 2 * H])
    n = np.tanh(wx[2 * H :] + r * uh[2 * H :])
    return (1.0 - z) * n + z * h


def encode_sequence(p: CellParams, X: np.ndarray) -> np.ndarray:
    """Fold the cell over rows of X (T, D) from zero state; return h_T."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p.input_size:
        raise ValueError(f"expected (T, {p.input_size}) input, got {X.shape}")
    H = p.hidden_size
    h = np.zeros(H)
    if p.kind == "lstm":
        c = np.zeros(H)
        for x in X:
            h, c = lstm_step(p, x, h, c)
    else:
        for x in X:
            h = gru_step(p, x, h)
    return h


def cell_forward(p: CellParams, X: np.ndarray):
    """Batched sequence encoding: X (B, T, D) -> (final hidden (B, H), cache).

    The cache carries every per-step quantity cell_backward needs.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != p.input_size:
        raise ValueError(f"expected (B, T, {p.input_size}) input, got {X.shape}")
    B, T, _ = X.shape
    H = p.hidden_size
    pre = X @ p.W.T + p.b  # (B, T, gates*H), input projection hoisted
    h = np.zeros((B, H))
    if p.kind == "lstm":
        c = np.zeros((B, H))
        I = np.empty((B, T, H))
        F = np.empty((B, T, H))
        O = np.empty((B, T, H))
        G = np.empty((B, T, H))
        Cprev = np.empty((B, T, H))
        TanhC = np.empty((B, T, H))
        Hprev = np.empty((B, T, H))
        for t in range(T):
            a = pre[:, t] + h @ p.U.T
            i = sigmoid(a[:, :H])
            f = sigmoid(a[:, H : 2 * H])
            o = sigmoid(a[:, 2 * H : 3 * H])
            g = np.tanh(a[:, 3 * H :])
            Hprev[:, t] = h
            Cprev[:, t] = c
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            I[:, t], F[:, t], O[:, t], G[:, t], TanhC[:, t] = i, f, o, g, tc
        cache = ("lstm", X, I, F, O, G, Cprev, TanhC, Hprev)
    else:
        Z = np.empty((B, T, H))
        R = np.empty((B, T, H))
        N = np.empty((B, T, H))
        Q = np.empty((B, T, H))  # U_n h, pre reset gating
        Hprev = np.empty((B, T, H))
        for t in range(T):
            uh = h @ p.U.T
            z = sigmoid(pre[:, t, :H] + uh[:, :H])
            r = sigmoid(pre[:, t, H : 2 * H] + uh[:, H : 2 * H])
            q = uh[:, 2 * H :]
            n = np.tanh(pre[:, t, 2 * H :] + r * q)
            Hprev[:, t] = h
            h = (1.0 - z) * n + z * h
            Z[:, t], R[:, t], N[:, t], Q[:, t] = z, r, n, q
        cache = ("gru", X, Z, R, N, Q, Hprev)
    return h, cache


def cell_backward(p: CellParams, cache, d_final: np.ndarray):
    """BPTT through one cell_forward; returns (CellGrads, dX).

    d_final is the loss gradient w.r.t. the final hidden state (B, H).
    """
    kind = cache[0]
    if kind != p.kind:
        raise ValueError("cache does not match cell kind")
    H = p.hidden_size
    if kind == "lstm":
        _, X, I, F, O, G, Cprev, TanhC, Hprev = cache
        B, T, _ = X.shape
        DA = np.empty((B, T, 4 * H))
        dh = np.asarray(d_final, dtype=np.float64)
        dc = np.zeros_like(dh)
        for t in range(T - 1, -1, -1):
            i, f, o, g = I[:, t], F[:, t], O[:, t], G[:, t]
            tc = TanhC[:, t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            df = dc * Cprev[:, t]
            dg = dc * i
            da = DA[:, t]
            da[:, :H] = di * i * (1.0 - i)
            da[:, H : 2 * H] = df * f * (1.0 - f)
            da[:, 2 * H : 3 * H] = do * o * (1.0 - o)
            da[:, 3 * H :] = dg * (1.0 - g * g)
            dh = da @ p.U
            dc = dc * f
        flatA = DA.reshape(B * T, 4 * H)
        grads = CellGrads(
            W=flatA.T @ X.reshape(B * T, -1),
            U=flatA.T @ Hprev.reshape(B * T, H),
            b=DA.sum(axis=(0, 1)),
        )
        dX = DA @ p.W
        return grads, dX
    _, X, Z, R, N, Q, Hprev = cache
    B, T, _ = X.shape
    DAw = np.empty((B, T, 3 * H))  # rows [daz, dar, dan] for W and b
    DAu = np.empty((B, T, 3 * H))  # rows [daz, dar, dq] for U and dh
    dh = np.asarray(d_final, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        z, r, n, q = Z[:, t], R[:, t], N[:, t], Q[:, t]
        dz = dh * (Hprev[:, t] - n)
        dn = dh * (1.0 - z)
        dan = dn * (1.0 - n * n)
        dq = dan * r
        dr = dan * q
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        DAw[:, t, :H], DAw[:, t, H : 2 * H], DAw[:, t, 2 * H :] = daz, dar, dan
        DAu[:, t, :H], DAu[:, t, H : 2 * H], DAu[:, t, 2 * H :] = daz, dar, dq
        dh = dh * z + DAu[:, t] @ p.U
    flatW = DAw.reshape(B * T, 3 * H)
    flatU = DAu.reshape(B * T, 3 * H)
    grads = CellGrads(
        W=flatW.T @ X.reshape(B * T, -1),
        U=flatU.T @ Hprev.reshape(B * T, H),
        b=DAw.sum(axis=(0, 1)),
    )
    dX = DAw @ p.W
    return grads, dX


def dense_forward(p: DenseParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != p.weight.shape[1]:
        raise ValueError(f"expected {p.weight.shape[1]} inputs, got {X.shape[-1]}")
    return X @ p.weight.T + p.bias


def dense_backward(p: DenseParams, X: np.ndarray, dY: np.ndarray):
    grads = DenseGrads(weight=dY.T @ X, bias=dY.sum(axis=0))
    return grads, dY @ p.weight


def softmax_xent_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mean batch cross-entropy)/d(logits) given softmax probs (B, k)."""
    B = probs.shape[0]
    d = probs.copy()
    d[np.arange(B), labels] -= 1.0
    return d / B


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients together so their global norm is <= max_norm."""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


class Adam:
    """Adam with bias correction, updating parameter arrays in place.

    theta <- theta - lr * mhat / (sqrt(vhat) + eps)
    """

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        if set(grads) != set(self.params):
            raise ValueError("gradient keys do not match parameter keys")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, theta in self.params.items():
            g = grads[k]
            if g.shape != theta.shape:
                raise ValueError(f"gradient shape mismatch for {k}")
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            theta -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
